#pragma once

#include <vector>

#include "vardlab/ddpm.hpp"
#include "vardlab/mdp.hpp"
#include "vardlab/nn.hpp"

namespace vardlab {

// V_phi(x_{T-t}, c): expected terminal reward given an intermediate state.
// Conditions on the diffusion index via the same sinusoidal embedding as
// the denoiser.
struct ValueNet {
  Mlp net;
  Param ctx_table;
  std::size_t data_dim = 0;
  std::size_t time_dim = 0;
  std::size_t ctx_dim = 0;
  std::size_t num_contexts = 0;
  std::size_t T = 0;  // embedding range [0, T]

  // Optional running target normalization; predictions are de-normalized.
  bool normalize_targets = false;
  double target_mean = 0.0;
  double target_std = 1.0;

  static ValueNet make(std::size_t data_dim, std::size_t num_contexts,
                       const std::vector<std::size_t>& hidden,
                       std::size_t time_dim, std::size_t ctx_dim,
                       std::size_t T, Rng& rng);

  long null_context() const { return static_cast<long>(num_contexts); }

  // x: (batch, data_dim); diffusion_t entries in [0, T]. Output (batch, 1),
  // de-normalized when target normalization is on.
  Var predict(Tape& tape, Var x, const std::vector<std::size_t>& diffusion_t,
              const std::vector<long>& c, ParamBinding* bind = nullptr) const;
  double predict_one(const Tensor& x, std::size_t diffusion_t, long c) const;

  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
};

struct ValueTrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t steps = 3000;
  double convergence_tol = 1e-4;  // moving-average loss slope per step
  std::size_t rollouts_per_step = 1;
  double holdout_frac = 0.1;
  bool normalize_targets = false;
};

// MSE between predictions and terminal-reward targets; adds tape gradients
// for phi into `bind`.
Var value_loss(const ValueNet& vnet, Tape& tape,
               const std::vector<ValueSample>& batch, ParamBinding* bind);

// Plain evaluation of the same loss (diagnostics / holdout).
double value_loss_value(const ValueNet& vnet,
                        const std::vector<ValueSample>& batch);

struct ValueCurveRow {
  std::size_t step;
  double train_loss;
  double holdout_loss;
};

// Monte-Carlo value regression against rollouts from the frozen model:
// sample c, roll a trajectory, score the sparse reward, regress at
// uniformly sampled steps. Stops at the step budget or convergence.
std::vector<ValueCurveRow> pretrain_value(ValueNet& vnet,
                                          const Denoiser& pretrained_model,
                                          const RewardFn& reward_fn,
                                          const NoiseSchedule& sched,
                                          const ValueTrainConfig& cfg,
                                          Rng& rng);

// Variant for batch-level rewards (grid occupancy): rolls `score_batch_size`
// trajectories per collection round and scores them together.
struct RewardSpec;
std::vector<ValueCurveRow> pretrain_value_batched(
    ValueNet& vnet, const Denoiser& pretrained_model, const RewardSpec& reward,
    std::size_t score_batch_size, const NoiseSchedule& sched,
    const ValueTrainConfig& cfg, Rng& rng);

// k_steps of value regression on fresh trajectories only (post-update
// refresh during fine-tuning; lower lr than pretraining).
void refresh_value(ValueNet& vnet, const std::vector<Trajectory>& fresh,
                   std::size_t k_steps, double lr, std::size_t batch_size,
                   Rng& rng);

void write_value_curve(const std::vector<ValueCurveRow>& curve,
                       const std::string& path);

}  // namespace vardlab
