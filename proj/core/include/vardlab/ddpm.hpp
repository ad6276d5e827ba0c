#pragma once

#include <string>
#include <vector>

#include "vardlab/mdp.hpp"
#include "vardlab/nn.hpp"
#include "vardlab/rng.hpp"
#include "vardlab/tape.hpp"

namespace vardlab {

enum class Sigma2Kind { BetaTilde, Beta };

// beta/alpha/alpha_bar/beta_tilde indexed by diffusion step t in [1, T];
// index 0 holds the conventions beta[0] = 0, alpha_bar[0] = 1.
struct NoiseSchedule {
  std::size_t T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> beta_tilde;
  Sigma2Kind sigma2_kind = Sigma2Kind::BetaTilde;

  double sigma2(std::size_t t) const {
    return sigma2_kind == Sigma2Kind::Beta ? beta[t] : beta_tilde[t];
  }
  double sigma(std::size_t t) const { return std::sqrt(sigma2(t)); }
};

// kind: "linear" | "cosine". With enforce_tail, requires alpha_bar[T] < 0.01
// (schedule must destroy the signal by step T).
NoiseSchedule make_schedule(std::size_t T, const std::string& kind,
                            double beta_min, double beta_max,
                            Sigma2Kind sigma2_kind = Sigma2Kind::BetaTilde,
                            bool enforce_tail = true);

// Closed-form marginal x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) noise.
Tensor forward_noising(const Tensor& x0, std::size_t t, const Tensor& noise,
                       const NoiseSchedule& sched);

// mu = (x_t - beta_t / sqrt(1 - ab_t) * eps_hat) / sqrt(alpha_t)
Tensor posterior_mean(const Tensor& xt, std::size_t t, const Tensor& eps_hat,
                      const NoiseSchedule& sched);
Var posterior_mean(Tape& tape, Var xt, std::size_t t, Var eps_hat,
                   const NoiseSchedule& sched);

struct DataConfig {
  struct Component {
    double weight = 1.0;
    std::vector<double> mean;
    std::vector<double> std;  // diagonal; all entries > 0
  };
  std::size_t dim = 2;
  std::string kind = "mixture";  // mixture | spiral | checkerboard
  // One mixture per context (mixture kind); other kinds use one context.
  std::vector<std::vector<Component>> contexts;
  double noise = 0.05;  // spiral / checkerboard jitter

  std::size_t num_contexts() const;
  Tensor sample(long c, Rng& rng) const;
  void validate() const;
};

// eps_theta(x_t, t, c) with a learned context embedding table; the last
// table row is the null-context slot used for classifier-free training.
struct Denoiser {
  Mlp net;
  Param ctx_table;  // (num_contexts + 1, ctx_dim)
  std::size_t data_dim = 0;
  std::size_t time_dim = 0;
  std::size_t ctx_dim = 0;
  std::size_t num_contexts = 0;

  static Denoiser make(std::size_t data_dim, std::size_t num_contexts,
                       const std::vector<std::size_t>& hidden,
                       std::size_t time_dim, std::size_t ctx_dim, Rng& rng);

  long null_context() const { return static_cast<long>(num_contexts); }

  // x: (batch, data_dim); t and c give one entry per row. guidance != 1
  // mixes conditional and null-context predictions.
  Var predict_eps(Tape& tape, Var x, const std::vector<std::size_t>& t,
                  const std::vector<long>& c, ParamBinding* bind = nullptr,
                  double guidance = 1.0) const;
  Tensor predict_eps_plain(const Tensor& x, const std::vector<std::size_t>& t,
                           const std::vector<long>& c,
                           double guidance = 1.0) const;

  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
};

struct ReverseStep {
  Tensor x_prev;
  Tensor mean;
};

// One reverse transition for a batch of rows sharing step t. The final step
// (t == 1) returns the mean with no added noise.
ReverseStep reverse_step(const Denoiser& model, const Tensor& x_t,
                         std::size_t t, const std::vector<long>& c,
                         const NoiseSchedule& sched, Rng& rng,
                         double guidance = 1.0);

// Full reverse rollout from x_T ~ N(0, I), recorded as an MDP trajectory.
Trajectory sample_trajectory(const Denoiser& model, long c,
                             const NoiseSchedule& sched, Rng& rng,
                             bool record_means = false, double guidance = 1.0);

// Terminal samples only (batched convenience; per-element forked streams).
std::vector<Tensor> sample_terminal(const Denoiser& model,
                                    const std::vector<long>& c,
                                    const NoiseSchedule& sched,
                                    std::uint64_t seed, double guidance = 1.0);

struct PretrainConfig {
  std::size_t steps = 4000;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  double p_uncond = 0.1;
};

// Noise-prediction MSE training with classifier-free context dropout.
// Returns the per-step loss curve.
std::vector<double> pretrain(Denoiser& model, const DataConfig& data,
                             const NoiseSchedule& sched,
                             const PretrainConfig& cfg, Rng& rng);

// Diagnostic: the variational KL-sum term for one (x0, c) draw, computed
// from the closed-form posterior. Kept as a metric, not the training loss.
double kl_sum_diagnostic(const Denoiser& model, const Tensor& x0, long c,
                         const NoiseSchedule& sched, Rng& rng);

}  // namespace vardlab
