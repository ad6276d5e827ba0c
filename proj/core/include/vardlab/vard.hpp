#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "vardlab/ddpm.hpp"
#include "vardlab/prm.hpp"
#include "vardlab/rewards.hpp"

namespace vardlab {

// Current policy plus the frozen pretrained reference. theta0 never
// changes after construction.
struct PolicyPair {
  Denoiser theta;
  Denoiser theta0;

  static PolicyPair from_pretrained(const Denoiser& pretrained) {
    return PolicyPair{pretrained, pretrained};
  }
};

struct VardConfig {
  double eta = 1.0;
  std::vector<std::size_t> finetune_window;  // diffusion indices in [1, T]
  double base_lr = 1e-3;
  double value_lr = 1e-4;
  std::size_t grad_accum = 2;
  std::size_t steps = 200;  // one rollout per step
  bool shared_noise = true;
  bool value_on_mean = false;  // evaluate V on mu instead of the sample
  std::size_t refresh_every = 10;  // policy updates between value refreshes
  std::size_t refresh_steps = 5;
  std::size_t score_batch = 16;    // rollouts scored together
  std::size_t metrics_every = 10;
  std::optional<double> reward_threshold;  // sample-efficiency tracking

  static std::vector<std::size_t> last_k_window(std::size_t k, std::size_t T);
};

// One pairwise KL-surrogate evaluation recorded on `tape`:
// draws x ~ p_theta(.|x_next, c) and x0 ~ p_theta0(.|x_next, c) and returns
// the squared distance, differentiable in theta through the reparameterized
// mean. With shared noise the same z is used for both draws, making the
// surrogate equal ||mu_theta - mu_theta0||^2 exactly.
struct SurrogatePieces {
  Var surrogate;  // scalar
  Var x_sample;   // (1, d) reparameterized draw from p_theta
  Var mu_theta;   // (1, d)
  Tensor mu_theta0;
};
SurrogatePieces kl_surrogate(const PolicyPair& pair, Tape& tape,
                             const Tensor& x_next, std::size_t t, long c,
                             const NoiseSchedule& sched, Rng& rng,
                             bool shared_noise, ParamBinding* bind);

double kl_surrogate_value(const PolicyPair& pair, const Tensor& x_next,
                          std::size_t t, long c, const NoiseSchedule& sched,
                          Rng& rng, bool shared_noise);

// loss = -V_phi(x_{t-1}, c) + eta * surrogate, recorded on `tape`; the
// gradient flows into theta only (phi and theta0 receive none).
struct VardLossPieces {
  Var loss;
  Var x_sample;
  double value;
  double surrogate;
};
VardLossPieces vard_loss(const PolicyPair& pair, const ValueNet& vnet,
                         Tape& tape, const Tensor& x_next, std::size_t t,
                         long c, double eta, const NoiseSchedule& sched,
                         Rng& rng, bool shared_noise, bool value_on_mean,
                         ParamBinding* bind);

// Numerical check that the reparameterized Monte-Carlo gradient of the
// pairwise squared distance equals 2 sigma^2 times the closed-form Gaussian
// KL gradient, on the linear mean family mu(psi) = v + psi * u vs mu0 = v.
struct Lemma1Report {
  std::size_t dim;
  double sigma;
  double psi;
  double mc_grad;       // d/dpsi E[(x - x0)^2], Monte Carlo
  double kl_grad;       // d/dpsi D_KL, closed form
  double ratio;         // mc_grad / kl_grad, expected 2 sigma^2
  double expected_ratio;
};
Lemma1Report check_lemma1(std::size_t dim, double sigma, const Tensor& u,
                          const Tensor& v, double psi, std::size_t n_samples,
                          Rng& rng);

struct FinetuneMetricsRow {
  std::size_t step;
  std::size_t scored_rollouts;
  double mean_reward;
  double mean_value;
  double kl_surrogate;
  double param_drift;
};

struct FinetuneResult {
  std::vector<FinetuneMetricsRow> rows;
  std::size_t scored_rollouts = 0;
  std::optional<std::size_t> rollouts_to_threshold;
  double final_mean_reward = 0.0;
};

double param_drift(const Denoiser& theta, const Denoiser& theta0);

// Algorithm: roll trajectories under p_theta; on every window step apply
// the VARD loss with gradient accumulation, Adam with clipping, and a
// periodic value refresh on the freshest scored rollouts.
FinetuneResult finetune(PolicyPair& pair, ValueNet& vnet,
                        const RewardSpec& reward, const VardConfig& cfg,
                        const NoiseSchedule& sched, Rng& rng);

// DRaFT-1-style: backpropagate the (differentiable) reward only through
// the final reverse transition. Non-differentiable specs are a contract
// error.
FinetuneResult baseline_final_step(PolicyPair& pair, const RewardSpec& reward,
                                   const VardConfig& cfg,
                                   const NoiseSchedule& sched, Rng& rng);

// ReFL-style: uniformly sample a cut point among the last k steps and
// backpropagate the reward of the one-step clean-sample estimate there.
FinetuneResult baseline_random_last_k(PolicyPair& pair,
                                      const RewardSpec& reward, std::size_t k,
                                      const VardConfig& cfg,
                                      const NoiseSchedule& sched, Rng& rng);

}  // namespace vardlab
