#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "vardlab/ddpm.hpp"
#include "vardlab/prm.hpp"
#include "vardlab/rewards.hpp"
#include "vardlab/so3flow.hpp"
#include "vardlab/vard.hpp"

namespace vardlab {

struct ScheduleConfig {
  std::size_t T = 50;
  std::string kind = "linear";
  double beta_min = 0.001;
  double beta_max = 0.2;
  std::string sigma2 = "beta_tilde";  // beta_tilde | beta
  bool enforce_tail = true;

  NoiseSchedule build() const;
};

struct ModelConfig {
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t time_dim = 16;
  std::size_t ctx_dim = 4;
};

struct So3Config {
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::string convention = "derivative";  // derivative | paper
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t time_dim = 8;
  double target_angle = 1.5707963267948966;  // rot_z angle of the point mass
  std::size_t eval_samples = 200;
  std::size_t integrate_steps = 100;

  so3::FieldConvention field_convention() const;
};

struct Lemma1Config {
  std::size_t families = 20;
  std::size_t samples = 100000;
  std::size_t max_dim = 8;
};

struct EvalConfig {
  std::size_t samples = 4096;
  std::size_t n_projections = 64;
};

struct RunConfig {
  std::string task;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string output_dir = "out";
  bool dump_trajectories = false;
  double guidance = 1.0;

  DataConfig dataset;
  bool has_dataset = false;
  ScheduleConfig schedule;
  ModelConfig model;
  ModelConfig value_model;
  PretrainConfig pretrain;
  ValueTrainConfig value_train;

  VardConfig vard;
  std::size_t vard_last_k = 0;  // 0 = full window [1, T]

  std::string baseline_method = "final_step";  // final_step | random_last_k
  std::size_t baseline_k = 10;

  RewardSpec reward;
  bool has_reward = false;

  So3Config so3;
  Lemma1Config lemma1;
  EvalConfig eval;

  std::string ddpm_checkpoint;   // base path, no extension
  std::string value_checkpoint;  // base path, no extension

  // Resolves last-k / explicit-window settings against the schedule.
  std::vector<std::size_t> resolve_window() const;
};

// Strict parse: unknown keys anywhere raise invalid_argument naming the
// JSON path. `task` is required; seed may come from the file or the CLI.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

// Canonical full-form serialization; parse(serialize(c)) == c.
nlohmann::json serialize_config(const RunConfig& cfg);

// Named hyperparameter presets (eta injection).
void apply_preset(RunConfig& cfg, const std::string& name);
std::vector<std::string> known_presets();

// A ready-to-train 2-D three-mode mixture (the shared toy).
DataConfig default_mixture_dataset();

}  // namespace vardlab
