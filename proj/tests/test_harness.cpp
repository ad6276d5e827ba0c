#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vardlab/config.hpp"
#include "vardlab/metrics.hpp"
#include "vardlab/runner.hpp"

using namespace vardlab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("vardlab_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& name) const {
    return (path / name).string();
  }
};

// Small-but-trainable settings shared by the runner smoke tests.
RunConfig tiny_config(const std::string& task, const std::string& out) {
  RunConfig cfg;
  cfg.task = task;
  cfg.seed = 17;
  cfg.seed_set = true;
  cfg.output_dir = out;
  cfg.dataset = default_mixture_dataset();
  cfg.has_dataset = true;
  cfg.schedule.T = 8;
  cfg.schedule.beta_min = 0.02;
  cfg.schedule.beta_max = 0.4;
  cfg.schedule.enforce_tail = false;
  cfg.model.hidden = {16};
  cfg.model.time_dim = 8;
  cfg.model.ctx_dim = 2;
  cfg.value_model = cfg.model;
  cfg.pretrain.steps = 60;
  cfg.pretrain.batch_size = 32;
  cfg.value_train.steps = 60;
  cfg.value_train.batch_size = 16;
  cfg.vard.steps = 12;
  cfg.vard.score_batch = 4;
  cfg.vard.metrics_every = 4;
  cfg.vard_last_k = 3;
  cfg.eval.samples = 64;
  cfg.eval.n_projections = 8;
  return cfg;
}

RewardSpec mode_reward() {
  RewardSpec r;
  r.kind = "mode_distance";
  r.differentiable = true;
  r.target = {1.0, 0.0};
  return r;
}

}  // namespace

TEST_SUITE_BEGIN("harness");

TEST_CASE("1-d wasserstein: oracle values and unequal sizes") {
  CHECK(wasserstein1_1d({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 0.0);
  // equal sizes: mean absolute difference of the sorted samples
  std::vector<double> a{0.3, -1.2, 2.0, 0.9};
  std::vector<double> b{1.1, 0.0, -0.4, 3.0};
  std::vector<double> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double oracle = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i)
    oracle += std::abs(sa[i] - sb[i]);
  oracle /= static_cast<double>(sa.size());
  CHECK(wasserstein1_1d(a, b) == doctest::Approx(oracle).epsilon(1e-12));

  // shift moves the distance by exactly the shift
  std::vector<double> shifted = a;
  for (auto& v : shifted) v += 2.5;
  CHECK(wasserstein1_1d(a, shifted) == doctest::Approx(2.5).epsilon(1e-12));

  // unequal sizes via the merged quantile grid
  CHECK(wasserstein1_1d({0.0, 1.0}, {0.5}) ==
        doctest::Approx(0.5).epsilon(1e-12));
  CHECK(wasserstein1_1d({0.0, 0.0, 3.0}, {0.0}) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS(wasserstein1_1d({}, {1.0}));
}

TEST_CASE("sliced wasserstein: identity, shift scale, gaussian oracle") {
  Rng gen(1);
  std::vector<Tensor> a;
  for (int i = 0; i < 512; ++i) a.push_back(gen.gaussian_tensor({2}));

  Rng p0(2);
  CHECK(sliced_wasserstein(a, a, 16, p0) == 0.0);

  // B = A + v: per direction u the 1-d distance is |u . v|, so the sliced
  // average is (2/pi) ||v|| in 2-d
  const double vx = 1.8, vy = -0.6;
  std::vector<Tensor> b;
  for (const Tensor& x : a) {
    Tensor y = x;
    y.data[0] += vx;
    y.data[1] += vy;
    b.push_back(std::move(y));
  }
  const double vnorm = std::hypot(vx, vy);
  Rng p1(3);
  const double sw = sliced_wasserstein(a, b, 512, p1);
  CHECK(sw == doctest::Approx(2.0 / 3.141592653589793 * vnorm).epsilon(0.05));
  CHECK(sw <= vnorm);

  // independent brute-force oracle on two gaussian clouds distance 3 apart
  Rng gen2(4);
  std::vector<Tensor> c;
  for (int i = 0; i < 512; ++i) {
    Tensor y = gen2.gaussian_tensor({2});
    y.data[0] += 3.0;
    c.push_back(std::move(y));
  }
  Rng p2(5);
  const double lib = sliced_wasserstein(a, c, 256, p2);
  Rng p3(6);
  double brute = 0.0;
  const std::size_t n_dirs = 256;
  for (std::size_t k = 0; k < n_dirs; ++k) {
    const double angle = p3.uniform(0.0, 2.0 * 3.141592653589793);
    const double ux = std::cos(angle), uy = std::sin(angle);
    std::vector<double> pa, pc;
    for (const Tensor& x : a) pa.push_back(ux * x.data[0] + uy * x.data[1]);
    for (const Tensor& x : c) pc.push_back(ux * x.data[0] + uy * x.data[1]);
    std::sort(pa.begin(), pa.end());
    std::sort(pc.begin(), pc.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i)
      acc += std::abs(pa[i] - pc[i]);
    brute += acc / static_cast<double>(pa.size());
  }
  brute /= static_cast<double>(n_dirs);
  CHECK(lib == doctest::Approx(brute).epsilon(0.10));

  // symmetry and the triangle inequality on fixed projection seeds
  Rng s1(7), s2(7);
  CHECK(sliced_wasserstein(a, c, 64, s1) ==
        doctest::Approx(sliced_wasserstein(c, a, 64, s2)).epsilon(1e-12));
  Rng t1(8), t2(8), t3(8);
  const double dab = sliced_wasserstein(a, b, 64, t1);
  const double dbc = sliced_wasserstein(b, c, 64, t2);
  const double dac = sliced_wasserstein(a, c, 64, t3);
  CHECK(dac <= dab + dbc + 1e-9);

  CHECK_THROWS(sliced_wasserstein({}, a, 8, p2));
  CHECK_THROWS(sliced_wasserstein(a, a, 0, p2));
}

TEST_CASE("metrics csv: header, LF endings, validation") {
  TempDir dir("csv");
  const std::string path = dir.sub("metrics.csv");
  std::vector<MetricRow> rows;
  rows.push_back({0, {{"loss", 1.5}, {"reward", -2.0}}});
  rows.push_back({10, {{"loss", 0.25}, {"reward", 0.125}}});
  write_metrics_csv(path, {"loss", "reward"}, rows);
  const std::string text = slurp(path);
  CHECK(text == "step,loss,reward\n0,1.5,-2\n10,0.25,0.125\n");
  CHECK(text.find('\r') == std::string::npos);

  std::vector<MetricRow> bad_order = {{5, {{"loss", 1.0}}},
                                      {5, {{"loss", 2.0}}}};
  CHECK_THROWS(write_metrics_csv(path, {"loss"}, bad_order));
  std::vector<MetricRow> missing = {{0, {{"reward", 1.0}}}};
  CHECK_THROWS(write_metrics_csv(path, {"loss"}, missing));
  std::vector<MetricRow> nonfinite = {{0, {{"loss", std::nan("")}}}};
  CHECK_THROWS(write_metrics_csv(path, {"loss"}, nonfinite));
}

TEST_CASE("config: canonical round trip") {
  RunConfig cfg = tiny_config("ddpm-pretrain", "somewhere");
  cfg.reward = mode_reward();
  cfg.has_reward = true;
  cfg.vard.eta = 12.5;
  cfg.vard.reward_threshold = -0.5;
  cfg.guidance = 1.5;
  nlohmann::json j = serialize_config(cfg);
  RunConfig back = parse_config(j);
  CHECK(serialize_config(back) == j);
  CHECK(back.seed == cfg.seed);
  CHECK(back.vard.eta == 12.5);
  CHECK(*back.vard.reward_threshold == -0.5);
  CHECK(back.schedule.T == 8);
  CHECK(back.dataset.contexts.size() == cfg.dataset.contexts.size());
  CHECK(back.resolve_window() == cfg.resolve_window());
}

TEST_CASE("config: strict parsing and path-anchored errors") {
  nlohmann::json j = {{"task", "ddpm-pretrain"}, {"seed", 1}};
  CHECK_NOTHROW(parse_config(j));

  nlohmann::json unknown = j;
  unknown["typo_key"] = 1;
  try {
    parse_config(unknown);
    FAIL("expected rejection of the unknown key");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("typo_key") != std::string::npos);
  }

  nlohmann::json nested = j;
  nested["schedule"] = {{"T", 10}, {"betamax", 0.2}};
  try {
    parse_config(nested);
    FAIL("expected rejection of the nested unknown key");
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    CHECK(what.find("schedule") != std::string::npos);
    CHECK(what.find("betamax") != std::string::npos);
  }

  CHECK_THROWS(parse_config(nlohmann::json{{"seed", 1}}));  // task required
}

TEST_CASE("config: window resolution and presets") {
  RunConfig cfg = tiny_config("vard-finetune", "o");
  cfg.vard_last_k = 3;
  CHECK(cfg.resolve_window() == std::vector<std::size_t>{1, 2, 3});
  cfg.vard_last_k = 0;
  CHECK(cfg.resolve_window().size() == cfg.schedule.T);
  cfg.vard.finetune_window = {2, 5};
  CHECK(cfg.resolve_window() == std::vector<std::size_t>{2, 5});

  RunConfig p = tiny_config("vard-finetune", "o");
  apply_preset(p, "paper-eta-aesthetic");
  CHECK(p.vard.eta == 100.0);
  apply_preset(p, "paper-eta-pickscore");
  CHECK(p.vard.eta == 0.5);
  apply_preset(p, "paper-eta-imagereward");
  CHECK(p.vard.eta == 20.0);
  CHECK_THROWS(apply_preset(p, "nope"));
  CHECK(known_presets().size() == 3);
}

TEST_CASE("runner: ddpm pretraining emits the full artifact set") {
  TempDir dir("run_ddpm");
  RunConfig cfg = tiny_config("ddpm-pretrain", dir.str());
  cfg.dump_trajectories = true;
  REQUIRE(run_task(cfg) == 0);
  CHECK(fs::exists(dir.sub("config.json")));
  CHECK(fs::exists(dir.sub("metrics.csv")));
  CHECK(fs::exists(dir.sub("summary.json")));
  CHECK(fs::exists(dir.sub("ddpm.json")));
  CHECK(fs::exists(dir.sub("ddpm.bin")));
  CHECK(fs::exists(dir.sub("trajectories.jsonl")));

  auto summary = nlohmann::json::parse(slurp(dir.sub("summary.json")));
  CHECK(summary.at("task") == "ddpm-pretrain");
  CHECK(summary.at("final_loss").is_number());
  CHECK(summary.at("sliced_wasserstein").get<double>() >= 0.0);

  const std::string csv = slurp(dir.sub("metrics.csv"));
  CHECK(csv.rfind("step,loss\n", 0) == 0);

  // the echoed config parses back to the one we ran
  auto echoed = nlohmann::json::parse(slurp(dir.sub("config.json")));
  CHECK(echoed == serialize_config(cfg));
}

TEST_CASE("runner: artifacts are a pure function of (config, seed)") {
  TempDir d1("det_a"), d2("det_b");
  RunConfig c1 = tiny_config("ddpm-pretrain", d1.str());
  RunConfig c2 = tiny_config("ddpm-pretrain", d2.str());
  REQUIRE(run_task(c1) == 0);
  REQUIRE(run_task(c2) == 0);
  CHECK(slurp(d1.sub("metrics.csv")) == slurp(d2.sub("metrics.csv")));
  CHECK(slurp(d1.sub("summary.json")) == slurp(d2.sub("summary.json")));
  CHECK(slurp(d1.sub("ddpm.bin")) == slurp(d2.sub("ddpm.bin")));

  TempDir d3("det_c");
  RunConfig c3 = tiny_config("ddpm-pretrain", d3.str());
  c3.seed = 18;
  REQUIRE(run_task(c3) == 0);
  CHECK(slurp(d1.sub("ddpm.bin")) != slurp(d3.sub("ddpm.bin")));
}

TEST_CASE("runner: missing prerequisites fail with actionable diagnostics") {
  TempDir dir("missing_ckpt");
  RunConfig cfg = tiny_config("vard-finetune", dir.str());
  cfg.reward = mode_reward();
  cfg.has_reward = true;
  cfg.ddpm_checkpoint = dir.sub("nonexistent");
  CHECK(run_task(cfg) == 1);
  const std::string diag = slurp(dir.sub("diagnostics.txt"));
  CHECK(diag.find("ddpm-pretrain") != std::string::npos);

  RunConfig unseeded = tiny_config("ddpm-pretrain", dir.str());
  unseeded.seed_set = false;
  CHECK(run_task(unseeded) == 1);

  RunConfig bad_task = tiny_config("wat", dir.str());
  CHECK(run_task(bad_task) == 1);
}

TEST_CASE("runner: pretrain, value, vard, and eval chain end to end") {
  TempDir dir("pipeline");
  RunConfig base = tiny_config("ddpm-pretrain", dir.sub("ddpm"));
  REQUIRE(run_task(base) == 0);

  RunConfig val = tiny_config("value-pretrain", dir.sub("value"));
  val.reward = mode_reward();
  val.has_reward = true;
  val.ddpm_checkpoint = dir.sub("ddpm") + "/ddpm";
  REQUIRE(run_task(val) == 0);
  CHECK(fs::exists(dir.sub("value") + "/value.bin"));

  RunConfig tune = tiny_config("vard-finetune", dir.sub("vard"));
  tune.reward = mode_reward();
  tune.has_reward = true;
  tune.ddpm_checkpoint = dir.sub("ddpm") + "/ddpm";
  tune.value_checkpoint = dir.sub("value") + "/value";
  tune.vard.reward_threshold = -100.0;  // trivially reachable
  tune.vard.steps = 20;  // enough scored rollouts to arm the threshold
  REQUIRE(run_task(tune) == 0);
  auto summary = nlohmann::json::parse(slurp(dir.sub("vard") + "/summary.json"));
  CHECK(summary.at("scored_rollouts").get<std::size_t>() == tune.vard.steps);
  CHECK(summary.at("rollouts_to_threshold").is_number());
  CHECK(summary.at("prior_drift").get<double>() >= 0.0);
  CHECK(fs::exists(dir.sub("vard") + "/theta.bin"));
  CHECK(fs::exists(dir.sub("vard") + "/value_refreshed.bin"));

  RunConfig bl = tiny_config("baseline-finetune", dir.sub("baseline"));
  bl.reward = mode_reward();
  bl.has_reward = true;
  bl.ddpm_checkpoint = dir.sub("ddpm") + "/ddpm";
  bl.baseline_method = "random_last_k";
  bl.baseline_k = 3;
  REQUIRE(run_task(bl) == 0);

  RunConfig ev = tiny_config("eval", dir.sub("eval"));
  ev.reward = mode_reward();
  ev.has_reward = true;
  ev.ddpm_checkpoint = dir.sub("ddpm") + "/ddpm";
  REQUIRE(run_task(ev) == 0);
  auto esum = nlohmann::json::parse(slurp(dir.sub("eval") + "/summary.json"));
  CHECK(esum.at("sliced_wasserstein").is_number());
  CHECK(esum.at("mean_reward").is_number());
}

TEST_CASE("runner: lemma-1 verification and so3 training smoke") {
  TempDir dir("small_tasks");
  RunConfig lem = tiny_config("verify-lemma1", dir.sub("lemma1"));
  lem.lemma1.families = 4;
  lem.lemma1.samples = 40000;
  lem.lemma1.max_dim = 3;
  REQUIRE(run_task(lem) == 0);
  auto lsum =
      nlohmann::json::parse(slurp(dir.sub("lemma1") + "/summary.json"));
  CHECK(lsum.at("all_within_5pct").get<bool>());

  RunConfig so3 = tiny_config("so3-train", dir.sub("so3"));
  so3.so3.steps = 40;
  so3.so3.batch_size = 8;
  so3.so3.hidden = {16};
  so3.so3.eval_samples = 10;
  so3.so3.integrate_steps = 20;
  REQUIRE(run_task(so3) == 0);
  auto ssum = nlohmann::json::parse(slurp(dir.sub("so3") + "/summary.json"));
  CHECK(ssum.at("frac_within_0p1").is_number());
  CHECK(fs::exists(dir.sub("so3") + "/so3.bin"));
}

TEST_SUITE_END();
