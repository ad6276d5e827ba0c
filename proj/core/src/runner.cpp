#include "vardlab/runner.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "vardlab/checkpoint.hpp"
#include "vardlab/metrics.hpp"

namespace vardlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.output_dir) / name).string();
}

void write_json(const json& j, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << "\n";
}

void echo_config(const RunConfig& cfg) {
  write_json(serialize_config(cfg), out_path(cfg, "config.json"));
}

json denoiser_manifest(const RunConfig& cfg, const Denoiser& model) {
  return {{"type", "denoiser"},
          {"data_dim", model.data_dim},
          {"num_contexts", model.num_contexts},
          {"hidden", cfg.model.hidden},
          {"time_dim", model.time_dim},
          {"ctx_dim", model.ctx_dim},
          {"T", cfg.schedule.T}};
}

Denoiser load_denoiser(const RunConfig& cfg) {
  if (cfg.ddpm_checkpoint.empty() || !checkpoint_exists(cfg.ddpm_checkpoint))
    throw std::runtime_error(
        "no pretrained denoiser at '" + cfg.ddpm_checkpoint +
        "'; run ddpm-pretrain first and set ddpm_checkpoint");
  // Shapes come from the manifest; the init RNG is discarded on load.
  std::ifstream mf(cfg.ddpm_checkpoint + ".json");
  json manifest;
  mf >> manifest;
  if (manifest.value("type", "") != "denoiser")
    throw std::runtime_error(cfg.ddpm_checkpoint +
                             " is not a denoiser checkpoint");
  Rng init(0);
  Denoiser model = Denoiser::make(
      manifest.at("data_dim").get<std::size_t>(),
      manifest.at("num_contexts").get<std::size_t>(),
      manifest.at("hidden").get<std::vector<std::size_t>>(),
      manifest.at("time_dim").get<std::size_t>(),
      manifest.at("ctx_dim").get<std::size_t>(), init);
  auto params = model.parameters();
  load_checkpoint(cfg.ddpm_checkpoint, params);
  return model;
}

ValueNet load_value(const RunConfig& cfg, const Denoiser& model) {
  if (cfg.value_checkpoint.empty() || !checkpoint_exists(cfg.value_checkpoint))
    throw std::runtime_error(
        "no pretrained value function at '" + cfg.value_checkpoint +
        "'; run value-pretrain first and set value_checkpoint");
  std::ifstream mf(cfg.value_checkpoint + ".json");
  json manifest;
  mf >> manifest;
  if (manifest.value("type", "") != "value")
    throw std::runtime_error(cfg.value_checkpoint +
                             " is not a value checkpoint");
  Rng init(0);
  ValueNet vnet = ValueNet::make(
      manifest.at("data_dim").get<std::size_t>(), model.num_contexts,
      manifest.at("hidden").get<std::vector<std::size_t>>(),
      manifest.at("time_dim").get<std::size_t>(),
      manifest.at("ctx_dim").get<std::size_t>(),
      manifest.at("T").get<std::size_t>(), init);
  vnet.normalize_targets = manifest.value("normalize_targets", false);
  vnet.target_mean = manifest.value("target_mean", 0.0);
  vnet.target_std = manifest.value("target_std", 1.0);
  auto params = vnet.parameters();
  load_checkpoint(cfg.value_checkpoint, params);
  return vnet;
}

std::vector<Tensor> data_samples(const RunConfig& cfg, std::size_t n,
                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  out.reserve(n);
  const std::size_t nc = cfg.dataset.num_contexts();
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(cfg.dataset.sample(static_cast<long>(i % nc), rng));
  return out;
}

std::vector<Tensor> model_samples(const RunConfig& cfg, const Denoiser& model,
                                  const NoiseSchedule& sched, std::size_t n,
                                  std::uint64_t seed) {
  std::vector<long> cs(n);
  for (std::size_t i = 0; i < n; ++i)
    cs[i] = static_cast<long>(i % model.num_contexts);
  return sample_terminal(model, cs, sched, seed, cfg.guidance);
}

std::vector<MetricRow> finetune_rows(const FinetuneResult& res) {
  std::vector<MetricRow> rows;
  for (const FinetuneMetricsRow& r : res.rows) {
    MetricRow row;
    row.step = static_cast<long>(r.step);
    row.values = {{"scored_rollouts", static_cast<double>(r.scored_rollouts)},
                  {"mean_reward", r.mean_reward},
                  {"mean_value", r.mean_value},
                  {"kl_surrogate", r.kl_surrogate},
                  {"param_drift", r.param_drift}};
    rows.push_back(std::move(row));
  }
  return rows;
}

const std::vector<std::string> kFinetuneColumns = {
    "scored_rollouts", "mean_reward", "mean_value", "kl_surrogate",
    "param_drift"};

void require_reward(const RunConfig& cfg) {
  if (!cfg.has_reward)
    throw std::runtime_error("config: task " + cfg.task +
                             " requires a reward section");
  cfg.reward.validate();
}

void require_dataset(const RunConfig& cfg) {
  if (!cfg.has_dataset)
    throw std::runtime_error("config: task " + cfg.task +
                             " requires a dataset section");
  cfg.dataset.validate();
}

void maybe_dump(const RunConfig& cfg, const Denoiser& model,
                const NoiseSchedule& sched) {
  if (!cfg.dump_trajectories) return;
  Rng rng(mix_seed(cfg.seed, 777));
  std::vector<Trajectory> trajs;
  for (std::size_t i = 0; i < 16; ++i) {
    const long c = static_cast<long>(i % model.num_contexts);
    trajs.push_back(
        sample_trajectory(model, c, sched, rng, false, cfg.guidance));
  }
  dump_trajectories(trajs, out_path(cfg, "trajectories.jsonl"));
}

void run_ddpm_pretrain(const RunConfig& cfg) {
  require_dataset(cfg);
  NoiseSchedule sched = cfg.schedule.build();
  Rng rng(cfg.seed);
  Denoiser model =
      Denoiser::make(cfg.dataset.dim, cfg.dataset.num_contexts(),
                     cfg.model.hidden, cfg.model.time_dim, cfg.model.ctx_dim,
                     rng);
  std::vector<double> losses =
      pretrain(model, cfg.dataset, sched, cfg.pretrain, rng);

  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (i % 50 != 0 && i + 1 != losses.size()) continue;
    MetricRow row;
    row.step = static_cast<long>(i);
    row.values = {{"loss", losses[i]}};
    rows.push_back(std::move(row));
  }
  write_metrics_csv(out_path(cfg, "metrics.csv"), {"loss"}, rows);

  auto gen = model_samples(cfg, model, sched, cfg.eval.samples,
                           mix_seed(cfg.seed, 1001));
  auto data = data_samples(cfg, cfg.eval.samples, mix_seed(cfg.seed, 1002));
  Rng proj(mix_seed(cfg.seed, 1003));
  const double sw =
      sliced_wasserstein(gen, data, cfg.eval.n_projections, proj);

  auto params = model.parameters();
  std::vector<const Param*> cparams(params.begin(), params.end());
  save_checkpoint(out_path(cfg, "ddpm"), denoiser_manifest(cfg, model),
                  cparams);

  write_json({{"task", cfg.task},
              {"final_loss", losses.empty() ? 0.0 : losses.back()},
              {"sliced_wasserstein", sw}},
             out_path(cfg, "summary.json"));
  maybe_dump(cfg, model, sched);
}

void run_value_pretrain(const RunConfig& cfg) {
  require_reward(cfg);
  NoiseSchedule sched = cfg.schedule.build();
  Denoiser model = load_denoiser(cfg);
  Rng rng(cfg.seed);
  ValueNet vnet =
      ValueNet::make(model.data_dim, model.num_contexts,
                     cfg.value_model.hidden, cfg.value_model.time_dim,
                     cfg.value_model.ctx_dim, sched.T, rng);
  std::vector<ValueCurveRow> curve;
  if (cfg.reward.kind == "grid_occupancy") {
    curve = pretrain_value_batched(vnet, model, cfg.reward,
                                   cfg.vard.score_batch, sched,
                                   cfg.value_train, rng);
  } else {
    curve = pretrain_value(vnet, model, make_reward(cfg.reward), sched,
                           cfg.value_train, rng);
  }
  write_value_curve(curve, out_path(cfg, "metrics.csv"));

  auto params = vnet.parameters();
  std::vector<const Param*> cparams(params.begin(), params.end());
  save_checkpoint(out_path(cfg, "value"),
                  {{"type", "value"},
                   {"data_dim", vnet.data_dim},
                   {"num_contexts", vnet.num_contexts},
                   {"hidden", cfg.value_model.hidden},
                   {"time_dim", vnet.time_dim},
                   {"ctx_dim", vnet.ctx_dim},
                   {"T", vnet.T},
                   {"normalize_targets", vnet.normalize_targets},
                   {"target_mean", vnet.target_mean},
                   {"target_std", vnet.target_std}},
                  cparams);

  write_json({{"task", cfg.task},
              {"steps", curve.empty() ? 0 : curve.back().step + 1},
              {"final_train_loss", curve.empty() ? 0.0 : curve.back().train_loss},
              {"final_holdout_loss",
               curve.empty() || std::isnan(curve.back().holdout_loss)
                   ? json()
                   : json(curve.back().holdout_loss)}},
             out_path(cfg, "summary.json"));
}

void run_finetune(const RunConfig& cfg) {
  require_reward(cfg);
  NoiseSchedule sched = cfg.schedule.build();
  Denoiser model = load_denoiser(cfg);
  PolicyPair pair = PolicyPair::from_pretrained(model);
  Rng rng(cfg.seed);

  VardConfig vcfg = cfg.vard;
  vcfg.finetune_window = cfg.resolve_window();

  FinetuneResult res;
  if (cfg.task == "vard-finetune") {
    ValueNet vnet = load_value(cfg, model);
    res = finetune(pair, vnet, cfg.reward, vcfg, sched, rng);
    auto vparams = vnet.parameters();
    std::vector<const Param*> cv(vparams.begin(), vparams.end());
    save_checkpoint(out_path(cfg, "value_refreshed"),
                    {{"type", "value"},
                     {"data_dim", vnet.data_dim},
                     {"num_contexts", vnet.num_contexts},
                     {"hidden", cfg.value_model.hidden},
                     {"time_dim", vnet.time_dim},
                     {"ctx_dim", vnet.ctx_dim},
                     {"T", vnet.T},
                     {"normalize_targets", vnet.normalize_targets},
                     {"target_mean", vnet.target_mean},
                     {"target_std", vnet.target_std}},
                    cv);
  } else if (cfg.baseline_method == "final_step") {
    res = baseline_final_step(pair, cfg.reward, vcfg, sched, rng);
  } else {
    res = baseline_random_last_k(pair, cfg.reward, cfg.baseline_k, vcfg,
                                 sched, rng);
  }

  write_metrics_csv(out_path(cfg, "metrics.csv"), kFinetuneColumns,
                    finetune_rows(res));

  auto tuned = model_samples(cfg, pair.theta, sched, cfg.eval.samples,
                             mix_seed(cfg.seed, 2001));
  auto ref = model_samples(cfg, pair.theta0, sched, cfg.eval.samples,
                           mix_seed(cfg.seed, 2002));
  Rng proj(mix_seed(cfg.seed, 2003));
  const double drift =
      sliced_wasserstein(tuned, ref, cfg.eval.n_projections, proj);

  auto params = pair.theta.parameters();
  std::vector<const Param*> cparams(params.begin(), params.end());
  save_checkpoint(out_path(cfg, "theta"), denoiser_manifest(cfg, pair.theta),
                  cparams);

  json summary = {{"task", cfg.task},
                  {"final_mean_reward", res.final_mean_reward},
                  {"scored_rollouts", res.scored_rollouts},
                  {"prior_drift", drift},
                  {"param_drift", param_drift(pair.theta, pair.theta0)}};
  summary["rollouts_to_threshold"] =
      res.rollouts_to_threshold ? json(*res.rollouts_to_threshold) : json();
  write_json(summary, out_path(cfg, "summary.json"));
  maybe_dump(cfg, pair.theta, sched);
}

void run_so3_train(const RunConfig& cfg) {
  Rng rng(cfg.seed);
  so3::VectorFieldNet vnet =
      so3::VectorFieldNet::make(cfg.so3.hidden, cfg.so3.time_dim, rng);
  const so3::Rot3 target = so3::Rot3::rot_z(cfg.so3.target_angle);
  so3::So3TrainConfig tcfg;
  tcfg.steps = cfg.so3.steps;
  tcfg.batch_size = cfg.so3.batch_size;
  tcfg.lr = cfg.so3.lr;
  tcfg.convention = cfg.so3.field_convention();
  std::vector<double> losses = so3::train_cfm(
      vnet, [&](Rng&) { return target; }, tcfg, rng);

  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (i % 50 != 0 && i + 1 != losses.size()) continue;
    MetricRow row;
    row.step = static_cast<long>(i);
    row.values = {{"loss", losses[i]}};
    rows.push_back(std::move(row));
  }
  write_metrics_csv(out_path(cfg, "metrics.csv"), {"loss"}, rows);

  Rng eval_rng(mix_seed(cfg.seed, 3001));
  std::size_t within = 0;
  double dist_sum = 0.0;
  for (std::size_t i = 0; i < cfg.so3.eval_samples; ++i) {
    const so3::Rot3 R0 = so3::sample_uniform_so3(eval_rng);
    const so3::Rot3 R1 =
        so3::integrate_flow(vnet, R0, cfg.so3.integrate_steps, tcfg.convention);
    const double d = so3::geodesic_distance(R1, target);
    dist_sum += d;
    if (d < 0.1) ++within;
  }
  auto params = vnet.parameters();
  std::vector<const Param*> cparams(params.begin(), params.end());
  save_checkpoint(out_path(cfg, "so3"),
                  {{"type", "so3_vector_field"},
                   {"hidden", cfg.so3.hidden},
                   {"time_dim", cfg.so3.time_dim},
                   {"convention", cfg.so3.convention}},
                  cparams);
  write_json(
      {{"task", cfg.task},
       {"final_loss", losses.empty() ? 0.0 : losses.back()},
       {"frac_within_0p1",
        static_cast<double>(within) /
            static_cast<double>(cfg.so3.eval_samples)},
       {"mean_geodesic_distance",
        dist_sum / static_cast<double>(cfg.so3.eval_samples)}},
      out_path(cfg, "summary.json"));
}

void run_verify_lemma1(const RunConfig& cfg) {
  Rng rng(cfg.seed);
  std::vector<MetricRow> rows;
  double max_rel_err = 0.0;
  for (std::size_t f = 0; f < cfg.lemma1.families; ++f) {
    const std::size_t dim = 1 + rng.index(cfg.lemma1.max_dim);
    const double sigma = rng.uniform(0.2, 2.0);
    double psi = rng.uniform(-1.0, 1.0);
    if (std::abs(psi) < 0.2) psi += psi < 0 ? -0.2 : 0.2;  // keep away from 0
    Tensor u = rng.gaussian_tensor({1, dim});
    // Condition the family so the Monte-Carlo standard error of the ratio
    // stays near 1% at the sample budget; the identity holds for any u.
    const double target_norm =
        std::max(std::sqrt(static_cast<double>(dim)),
                 0.45 * sigma / std::abs(psi));
    const double un = std::max(std::sqrt(squared_norm(u)), 1e-12);
    for (auto& w : u.data) w *= target_norm / un;
    Tensor v = rng.gaussian_tensor({1, dim});
    Lemma1Report rep =
        check_lemma1(dim, sigma, u, v, psi, cfg.lemma1.samples, rng);
    const double rel_err =
        std::abs(rep.ratio - rep.expected_ratio) / rep.expected_ratio;
    max_rel_err = std::max(max_rel_err, rel_err);
    MetricRow row;
    row.step = static_cast<long>(f);
    row.values = {{"dim", static_cast<double>(rep.dim)},
                  {"sigma", rep.sigma},
                  {"psi", rep.psi},
                  {"mc_grad", rep.mc_grad},
                  {"kl_grad", rep.kl_grad},
                  {"ratio", rep.ratio},
                  {"expected_ratio", rep.expected_ratio},
                  {"rel_err", rel_err}};
    rows.push_back(std::move(row));
  }
  write_metrics_csv(out_path(cfg, "metrics.csv"),
                    {"dim", "sigma", "psi", "mc_grad", "kl_grad", "ratio",
                     "expected_ratio", "rel_err"},
                    rows);
  write_json({{"task", cfg.task},
              {"families", cfg.lemma1.families},
              {"max_rel_err", max_rel_err},
              {"all_within_5pct", max_rel_err < 0.05}},
             out_path(cfg, "summary.json"));
}

void run_eval(const RunConfig& cfg) {
  require_dataset(cfg);
  NoiseSchedule sched = cfg.schedule.build();
  Denoiser model = load_denoiser(cfg);
  auto gen = model_samples(cfg, model, sched, cfg.eval.samples,
                           mix_seed(cfg.seed, 4001));
  auto data = data_samples(cfg, cfg.eval.samples, mix_seed(cfg.seed, 4002));
  Rng proj(mix_seed(cfg.seed, 4003));
  const double sw =
      sliced_wasserstein(gen, data, cfg.eval.n_projections, proj);

  json summary = {{"task", cfg.task}, {"sliced_wasserstein", sw}};
  MetricRow row;
  row.step = 0;
  row.values = {{"sliced_wasserstein", sw}};
  std::vector<std::string> cols = {"sliced_wasserstein"};
  if (cfg.has_reward) {
    cfg.reward.validate();
    double mean_reward;
    if (cfg.reward.kind == "grid_occupancy") {
      mean_reward = grid_occupancy_reward(gen, cfg.reward.resolution,
                                          cfg.reward.bbox_lo,
                                          cfg.reward.bbox_hi);
    } else {
      RewardFn fn = make_reward(cfg.reward);
      double acc = 0.0;
      for (std::size_t i = 0; i < gen.size(); ++i)
        acc += fn(gen[i], static_cast<long>(i % model.num_contexts));
      mean_reward = acc / static_cast<double>(gen.size());
    }
    summary["mean_reward"] = mean_reward;
    row.values["mean_reward"] = mean_reward;
    cols.push_back("mean_reward");
  }
  write_metrics_csv(out_path(cfg, "metrics.csv"), cols, {row});
  write_json(summary, out_path(cfg, "summary.json"));
  maybe_dump(cfg, model, sched);
}

}  // namespace

void run(const RunConfig& cfg) {
  if (!cfg.seed_set)
    throw std::runtime_error(
        "config: a seed is required (pass --seed or set \"seed\")");
  if (cfg.output_dir.empty())
    throw std::runtime_error("config: output_dir must not be empty");
  fs::create_directories(cfg.output_dir);
  echo_config(cfg);
  if (cfg.task == "ddpm-pretrain")
    run_ddpm_pretrain(cfg);
  else if (cfg.task == "value-pretrain")
    run_value_pretrain(cfg);
  else if (cfg.task == "vard-finetune" || cfg.task == "baseline-finetune")
    run_finetune(cfg);
  else if (cfg.task == "so3-train")
    run_so3_train(cfg);
  else if (cfg.task == "verify-lemma1")
    run_verify_lemma1(cfg);
  else if (cfg.task == "eval")
    run_eval(cfg);
  else
    throw std::runtime_error(
        "config: unknown task '" + cfg.task +
        "' (ddpm-pretrain | value-pretrain | vard-finetune | "
        "baseline-finetune | so3-train | verify-lemma1 | eval)");
}

int run_task(const RunConfig& cfg) {
  try {
    run(cfg);
    return 0;
  } catch (const std::exception& e) {
    if (!cfg.output_dir.empty()) {
      std::error_code ec;
      fs::create_directories(cfg.output_dir, ec);
      if (!ec) {
        std::ofstream diag(out_path(cfg, "diagnostics.txt"), std::ios::binary);
        diag << "task: " << cfg.task << "\nerror: " << e.what() << "\n";
      }
    }
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace vardlab
