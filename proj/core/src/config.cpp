#include "vardlab/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace vardlab {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& path,
                const std::set<std::string>& allowed) {
  if (!obj.is_object())
    throw std::invalid_argument("config: " + path + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key " + path + "." +
                                  it.key());
}

template <typename T>
void get_to(const json& obj, const std::string& path, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: bad value at " + path + "." + key +
                                ": " + e.what());
  }
}

DataConfig parse_dataset(const json& j) {
  check_keys(j, "dataset", {"dim", "kind", "noise", "contexts"});
  DataConfig d;
  get_to(j, "dataset", "dim", d.dim);
  get_to(j, "dataset", "kind", d.kind);
  get_to(j, "dataset", "noise", d.noise);
  if (j.contains("contexts")) {
    d.contexts.clear();
    std::size_t ci = 0;
    for (const json& ctx : j.at("contexts")) {
      std::vector<DataConfig::Component> comps;
      std::size_t ki = 0;
      for (const json& comp : ctx) {
        const std::string path = "dataset.contexts[" + std::to_string(ci) +
                                 "][" + std::to_string(ki) + "]";
        check_keys(comp, path, {"weight", "mean", "std"});
        DataConfig::Component c;
        get_to(comp, path, "weight", c.weight);
        get_to(comp, path, "mean", c.mean);
        get_to(comp, path, "std", c.std);
        comps.push_back(std::move(c));
        ++ki;
      }
      d.contexts.push_back(std::move(comps));
      ++ci;
    }
  }
  return d;
}

json dataset_to_json(const DataConfig& d) {
  json ctxs = json::array();
  for (const auto& ctx : d.contexts) {
    json comps = json::array();
    for (const auto& c : ctx)
      comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"std", c.std}});
    ctxs.push_back(std::move(comps));
  }
  return {{"dim", d.dim}, {"kind", d.kind}, {"noise", d.noise},
          {"contexts", std::move(ctxs)}};
}

ModelConfig parse_model(const json& j, const std::string& path) {
  check_keys(j, path, {"hidden", "time_dim", "ctx_dim"});
  ModelConfig m;
  get_to(j, path, "hidden", m.hidden);
  get_to(j, path, "time_dim", m.time_dim);
  get_to(j, path, "ctx_dim", m.ctx_dim);
  return m;
}

json model_to_json(const ModelConfig& m) {
  return {{"hidden", m.hidden}, {"time_dim", m.time_dim},
          {"ctx_dim", m.ctx_dim}};
}

RewardSpec parse_reward(const json& j) {
  check_keys(j, "reward",
             {"kind", "differentiable", "target", "linear_weights",
              "resolution", "bbox_lo", "bbox_hi", "weights", "anchors",
              "temperature"});
  RewardSpec r;
  get_to(j, "reward", "kind", r.kind);
  get_to(j, "reward", "differentiable", r.differentiable);
  get_to(j, "reward", "target", r.target);
  get_to(j, "reward", "linear_weights", r.linear_weights);
  get_to(j, "reward", "resolution", r.resolution);
  get_to(j, "reward", "bbox_lo", r.bbox_lo);
  get_to(j, "reward", "bbox_hi", r.bbox_hi);
  get_to(j, "reward", "weights", r.weights);
  get_to(j, "reward", "anchors", r.anchors);
  get_to(j, "reward", "temperature", r.temperature);
  return r;
}

json reward_to_json(const RewardSpec& r) {
  return {{"kind", r.kind},
          {"differentiable", r.differentiable},
          {"target", r.target},
          {"linear_weights", r.linear_weights},
          {"resolution", r.resolution},
          {"bbox_lo", r.bbox_lo},
          {"bbox_hi", r.bbox_hi},
          {"weights", r.weights},
          {"anchors", r.anchors},
          {"temperature", r.temperature}};
}

}  // namespace

NoiseSchedule ScheduleConfig::build() const {
  Sigma2Kind sk;
  if (sigma2 == "beta_tilde")
    sk = Sigma2Kind::BetaTilde;
  else if (sigma2 == "beta")
    sk = Sigma2Kind::Beta;
  else
    throw std::invalid_argument("config: schedule.sigma2 must be beta_tilde "
                                "or beta, got " + sigma2);
  return make_schedule(T, kind, beta_min, beta_max, sk, enforce_tail);
}

so3::FieldConvention So3Config::field_convention() const {
  if (convention == "derivative") return so3::FieldConvention::Derivative;
  if (convention == "paper") return so3::FieldConvention::Paper;
  throw std::invalid_argument(
      "config: so3.convention must be derivative or paper, got " + convention);
}

std::vector<std::size_t> RunConfig::resolve_window() const {
  if (!vard.finetune_window.empty()) {
    for (std::size_t t : vard.finetune_window)
      if (t < 1 || t > schedule.T)
        throw std::invalid_argument(
            "config: vard.finetune_window entries must be in [1, T]");
    return vard.finetune_window;
  }
  const std::size_t k =
      vard_last_k == 0 ? schedule.T : std::min(vard_last_k, schedule.T);
  return VardConfig::last_k_window(k, schedule.T);
}

RunConfig parse_config(const json& j) {
  check_keys(j, "$",
             {"task", "seed", "output_dir", "dump_trajectories", "guidance",
              "dataset", "schedule", "model", "value_model", "pretrain",
              "value_train", "vard", "baseline", "reward", "so3", "lemma1",
              "eval", "ddpm_checkpoint", "value_checkpoint"});
  RunConfig c;
  if (!j.contains("task"))
    throw std::invalid_argument("config: $.task is required");
  get_to(j, "$", "task", c.task);
  if (j.contains("seed")) {
    get_to(j, "$", "seed", c.seed);
    c.seed_set = true;
  }
  get_to(j, "$", "output_dir", c.output_dir);
  get_to(j, "$", "dump_trajectories", c.dump_trajectories);
  get_to(j, "$", "guidance", c.guidance);
  get_to(j, "$", "ddpm_checkpoint", c.ddpm_checkpoint);
  get_to(j, "$", "value_checkpoint", c.value_checkpoint);

  if (j.contains("dataset")) {
    c.dataset = parse_dataset(j.at("dataset"));
    c.has_dataset = true;
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    check_keys(s, "schedule",
               {"T", "kind", "beta_min", "beta_max", "sigma2", "enforce_tail"});
    get_to(s, "schedule", "T", c.schedule.T);
    get_to(s, "schedule", "kind", c.schedule.kind);
    get_to(s, "schedule", "beta_min", c.schedule.beta_min);
    get_to(s, "schedule", "beta_max", c.schedule.beta_max);
    get_to(s, "schedule", "sigma2", c.schedule.sigma2);
    get_to(s, "schedule", "enforce_tail", c.schedule.enforce_tail);
  }
  if (j.contains("model")) c.model = parse_model(j.at("model"), "model");
  if (j.contains("value_model"))
    c.value_model = parse_model(j.at("value_model"), "value_model");
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    check_keys(p, "pretrain", {"steps", "batch_size", "lr", "p_uncond"});
    get_to(p, "pretrain", "steps", c.pretrain.steps);
    get_to(p, "pretrain", "batch_size", c.pretrain.batch_size);
    get_to(p, "pretrain", "lr", c.pretrain.lr);
    get_to(p, "pretrain", "p_uncond", c.pretrain.p_uncond);
  }
  if (j.contains("value_train")) {
    const json& v = j.at("value_train");
    check_keys(v, "value_train",
               {"lr", "batch_size", "steps", "convergence_tol",
                "rollouts_per_step", "holdout_frac", "normalize_targets"});
    get_to(v, "value_train", "lr", c.value_train.lr);
    get_to(v, "value_train", "batch_size", c.value_train.batch_size);
    get_to(v, "value_train", "steps", c.value_train.steps);
    get_to(v, "value_train", "convergence_tol", c.value_train.convergence_tol);
    get_to(v, "value_train", "rollouts_per_step",
           c.value_train.rollouts_per_step);
    get_to(v, "value_train", "holdout_frac", c.value_train.holdout_frac);
    get_to(v, "value_train", "normalize_targets",
           c.value_train.normalize_targets);
  }
  if (j.contains("vard")) {
    const json& v = j.at("vard");
    check_keys(v, "vard",
               {"eta", "finetune_last_k", "finetune_window", "base_lr",
                "value_lr", "grad_accum", "steps", "shared_noise",
                "value_on_mean", "refresh_every", "refresh_steps",
                "score_batch", "metrics_every", "reward_threshold"});
    get_to(v, "vard", "eta", c.vard.eta);
    get_to(v, "vard", "finetune_last_k", c.vard_last_k);
    get_to(v, "vard", "finetune_window", c.vard.finetune_window);
    get_to(v, "vard", "base_lr", c.vard.base_lr);
    get_to(v, "vard", "value_lr", c.vard.value_lr);
    get_to(v, "vard", "grad_accum", c.vard.grad_accum);
    get_to(v, "vard", "steps", c.vard.steps);
    get_to(v, "vard", "shared_noise", c.vard.shared_noise);
    get_to(v, "vard", "value_on_mean", c.vard.value_on_mean);
    get_to(v, "vard", "refresh_every", c.vard.refresh_every);
    get_to(v, "vard", "refresh_steps", c.vard.refresh_steps);
    get_to(v, "vard", "score_batch", c.vard.score_batch);
    get_to(v, "vard", "metrics_every", c.vard.metrics_every);
    if (v.contains("reward_threshold") && !v.at("reward_threshold").is_null()) {
      double thr = 0.0;
      get_to(v, "vard", "reward_threshold", thr);
      c.vard.reward_threshold = thr;
    }
  }
  if (j.contains("baseline")) {
    const json& b = j.at("baseline");
    check_keys(b, "baseline", {"method", "k"});
    get_to(b, "baseline", "method", c.baseline_method);
    get_to(b, "baseline", "k", c.baseline_k);
    if (c.baseline_method != "final_step" &&
        c.baseline_method != "random_last_k")
      throw std::invalid_argument(
          "config: baseline.method must be final_step or random_last_k");
  }
  if (j.contains("reward")) {
    c.reward = parse_reward(j.at("reward"));
    c.has_reward = true;
  }
  if (j.contains("so3")) {
    const json& s = j.at("so3");
    check_keys(s, "so3",
               {"steps", "batch_size", "lr", "convention", "hidden",
                "time_dim", "target_angle", "eval_samples", "integrate_steps"});
    get_to(s, "so3", "steps", c.so3.steps);
    get_to(s, "so3", "batch_size", c.so3.batch_size);
    get_to(s, "so3", "lr", c.so3.lr);
    get_to(s, "so3", "convention", c.so3.convention);
    get_to(s, "so3", "hidden", c.so3.hidden);
    get_to(s, "so3", "time_dim", c.so3.time_dim);
    get_to(s, "so3", "target_angle", c.so3.target_angle);
    get_to(s, "so3", "eval_samples", c.so3.eval_samples);
    get_to(s, "so3", "integrate_steps", c.so3.integrate_steps);
  }
  if (j.contains("lemma1")) {
    const json& l = j.at("lemma1");
    check_keys(l, "lemma1", {"families", "samples", "max_dim"});
    get_to(l, "lemma1", "families", c.lemma1.families);
    get_to(l, "lemma1", "samples", c.lemma1.samples);
    get_to(l, "lemma1", "max_dim", c.lemma1.max_dim);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, "eval", {"samples", "n_projections"});
    get_to(e, "eval", "samples", c.eval.samples);
    get_to(e, "eval", "n_projections", c.eval.n_projections);
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: " + path + ": " + e.what());
  }
  return parse_config(j);
}

json serialize_config(const RunConfig& c) {
  json j;
  j["task"] = c.task;
  if (c.seed_set) j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["dump_trajectories"] = c.dump_trajectories;
  j["guidance"] = c.guidance;
  if (!c.ddpm_checkpoint.empty()) j["ddpm_checkpoint"] = c.ddpm_checkpoint;
  if (!c.value_checkpoint.empty()) j["value_checkpoint"] = c.value_checkpoint;
  if (c.has_dataset) j["dataset"] = dataset_to_json(c.dataset);
  j["schedule"] = {{"T", c.schedule.T},
                   {"kind", c.schedule.kind},
                   {"beta_min", c.schedule.beta_min},
                   {"beta_max", c.schedule.beta_max},
                   {"sigma2", c.schedule.sigma2},
                   {"enforce_tail", c.schedule.enforce_tail}};
  j["model"] = model_to_json(c.model);
  j["value_model"] = model_to_json(c.value_model);
  j["pretrain"] = {{"steps", c.pretrain.steps},
                   {"batch_size", c.pretrain.batch_size},
                   {"lr", c.pretrain.lr},
                   {"p_uncond", c.pretrain.p_uncond}};
  j["value_train"] = {{"lr", c.value_train.lr},
                      {"batch_size", c.value_train.batch_size},
                      {"steps", c.value_train.steps},
                      {"convergence_tol", c.value_train.convergence_tol},
                      {"rollouts_per_step", c.value_train.rollouts_per_step},
                      {"holdout_frac", c.value_train.holdout_frac},
                      {"normalize_targets", c.value_train.normalize_targets}};
  json v = {{"eta", c.vard.eta},
            {"finetune_last_k", c.vard_last_k},
            {"base_lr", c.vard.base_lr},
            {"value_lr", c.vard.value_lr},
            {"grad_accum", c.vard.grad_accum},
            {"steps", c.vard.steps},
            {"shared_noise", c.vard.shared_noise},
            {"value_on_mean", c.vard.value_on_mean},
            {"refresh_every", c.vard.refresh_every},
            {"refresh_steps", c.vard.refresh_steps},
            {"score_batch", c.vard.score_batch},
            {"metrics_every", c.vard.metrics_every}};
  if (!c.vard.finetune_window.empty())
    v["finetune_window"] = c.vard.finetune_window;
  if (c.vard.reward_threshold)
    v["reward_threshold"] = *c.vard.reward_threshold;
  j["vard"] = std::move(v);
  j["baseline"] = {{"method", c.baseline_method}, {"k", c.baseline_k}};
  if (c.has_reward) j["reward"] = reward_to_json(c.reward);
  j["so3"] = {{"steps", c.so3.steps},
              {"batch_size", c.so3.batch_size},
              {"lr", c.so3.lr},
              {"convention", c.so3.convention},
              {"hidden", c.so3.hidden},
              {"time_dim", c.so3.time_dim},
              {"target_angle", c.so3.target_angle},
              {"eval_samples", c.so3.eval_samples},
              {"integrate_steps", c.so3.integrate_steps}};
  j["lemma1"] = {{"families", c.lemma1.families},
                 {"samples", c.lemma1.samples},
                 {"max_dim", c.lemma1.max_dim}};
  j["eval"] = {{"samples", c.eval.samples},
               {"n_projections", c.eval.n_projections}};
  return j;
}

std::vector<std::string> known_presets() {
  return {"paper-eta-aesthetic", "paper-eta-pickscore", "paper-eta-imagereward"};
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  if (name == "paper-eta-aesthetic") {
    cfg.vard.eta = 100.0;
  } else if (name == "paper-eta-pickscore") {
    cfg.vard.eta = 0.5;
  } else if (name == "paper-eta-imagereward") {
    cfg.vard.eta = 20.0;
  } else {
    std::string names;
    for (const auto& n : known_presets()) names += " " + n;
    throw std::invalid_argument("unknown preset '" + name + "'; known:" +
                                names);
  }
}

DataConfig default_mixture_dataset() {
  DataConfig d;
  d.dim = 2;
  d.kind = "mixture";
  d.contexts = {{
      {1.0 / 3.0, {-2.0, 0.0}, {0.2, 0.2}},
      {1.0 / 3.0, {1.0, 1.7}, {0.2, 0.2}},
      {1.0 / 3.0, {1.0, -1.7}, {0.2, 0.2}},
  }};
  return d;
}

}  // namespace vardlab
