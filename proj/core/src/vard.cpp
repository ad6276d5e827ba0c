#include "vardlab/vard.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "vardlab/optim.hpp"

namespace vardlab {

std::vector<std::size_t> VardConfig::last_k_window(std::size_t k,
                                                   std::size_t T) {
  std::vector<std::size_t> w;
  for (std::size_t t = 1; t <= std::min(k, T); ++t) w.push_back(t);
  return w;
}

SurrogatePieces kl_surrogate(const PolicyPair& pair, Tape& tape,
                             const Tensor& x_next, std::size_t t, long c,
                             const NoiseSchedule& sched, Rng& rng,
                             bool shared_noise, ParamBinding* bind) {
  if (t < 1 || t > sched.T)
    throw std::invalid_argument("kl_surrogate: t out of range");
  const std::size_t d = pair.theta.data_dim;
  Var x_next_var = tape.leaf(x_next);
  std::vector<std::size_t> ts{t};
  std::vector<long> cs{c};

  Var eps = pair.theta.predict_eps(tape, x_next_var, ts, cs, bind);
  Var mu = posterior_mean(tape, x_next_var, t, eps, sched);
  if (!tape.value(mu).all_finite())
    throw std::runtime_error("kl_surrogate: non-finite mean at t=" +
                             std::to_string(t));

  Tensor eps0 = pair.theta0.predict_eps_plain(x_next, ts, cs);
  Tensor mu0 = posterior_mean(x_next, t, eps0, sched);
  mu0.check_finite("kl_surrogate reference mean");

  // Final reverse step is deterministic (mean, no noise).
  const double sd = t > 1 ? sched.sigma(t) : 0.0;
  Tensor z = rng.gaussian_tensor({1, d});
  Tensor z0 = shared_noise ? z : rng.gaussian_tensor({1, d});

  Tensor noise = z;
  for (auto& v : noise.data) v *= sd;
  Var x_sample = tape.add(mu, tape.leaf(std::move(noise)));
  Tensor x0_sample = mu0;
  for (std::size_t i = 0; i < d; ++i) x0_sample.data[i] += sd * z0.data[i];

  Var diff = tape.sub(x_sample, tape.leaf(std::move(x0_sample)));
  Var surrogate = tape.sum(tape.mul(diff, diff));
  return SurrogatePieces{surrogate, x_sample, mu, std::move(mu0)};
}

double kl_surrogate_value(const PolicyPair& pair, const Tensor& x_next,
                          std::size_t t, long c, const NoiseSchedule& sched,
                          Rng& rng, bool shared_noise) {
  Tape tape;
  SurrogatePieces p =
      kl_surrogate(pair, tape, x_next, t, c, sched, rng, shared_noise, nullptr);
  return tape.value(p.surrogate).data[0];
}

VardLossPieces vard_loss(const PolicyPair& pair, const ValueNet& vnet,
                         Tape& tape, const Tensor& x_next, std::size_t t,
                         long c, double eta, const NoiseSchedule& sched,
                         Rng& rng, bool shared_noise, bool value_on_mean,
                         ParamBinding* bind) {
  if (eta < 0.0) throw std::invalid_argument("vard_loss: eta must be >= 0");
  SurrogatePieces pieces =
      kl_surrogate(pair, tape, x_next, t, c, sched, rng, shared_noise, bind);
  // V is queried at the diffusion index of the produced state, t - 1.
  // phi is deliberately not bound: gradients stay on theta only.
  Var v_input = value_on_mean ? pieces.mu_theta : pieces.x_sample;
  Var value = vnet.predict(tape, v_input, {t - 1}, {c}, nullptr);
  Var loss = tape.add(tape.scale(tape.mean(value), -1.0),
                      tape.scale(pieces.surrogate, eta));
  return VardLossPieces{loss, pieces.x_sample, tape.value(value).data[0],
                        tape.value(pieces.surrogate).data[0]};
}

Lemma1Report check_lemma1(std::size_t dim, double sigma, const Tensor& u,
                          const Tensor& v, double psi, std::size_t n_samples,
                          Rng& rng) {
  if (u.size() != dim || v.size() != dim)
    throw std::invalid_argument("check_lemma1: dim mismatch");
  // mu(psi) = v + psi u, mu0 = v. Reparameterized MC gradient of
  // E[(x - x0)^2] with x = mu(psi) + sigma e1, x0 = mu0 + sigma e2:
  // per-sample d/dpsi = 2 (x - x0) . u.
  double grad_sum = 0.0;
  for (std::size_t n = 0; n < n_samples; ++n) {
    double dot = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double e1 = rng.gaussian();
      const double e2 = rng.gaussian();
      const double gap = psi * u.data[i] + sigma * (e1 - e2);
      dot += gap * u.data[i];
    }
    grad_sum += 2.0 * dot;
  }
  const double mc_grad = grad_sum / static_cast<double>(n_samples);
  // d/dpsi (1/(2 sigma^2)) ||psi u||^2 = psi ||u||^2 / sigma^2
  const double kl_grad = psi * squared_norm(u) / (sigma * sigma);
  Lemma1Report rep;
  rep.dim = dim;
  rep.sigma = sigma;
  rep.psi = psi;
  rep.mc_grad = mc_grad;
  rep.kl_grad = kl_grad;
  rep.ratio = kl_grad != 0.0 ? mc_grad / kl_grad : 0.0;
  rep.expected_ratio = 2.0 * sigma * sigma;
  return rep;
}

double param_drift(const Denoiser& theta, const Denoiser& theta0) {
  auto a = theta.parameters();
  auto b = theta0.parameters();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += l2_distance2(a[i]->value, b[i]->value);
  return std::sqrt(s);
}

namespace {

struct RewardTracker {
  std::deque<double> window;
  std::size_t window_cap = 64;
  std::size_t scored = 0;
  std::optional<double> threshold;
  std::optional<std::size_t> rollouts_to_threshold;

  void add(double r) {
    ++scored;
    window.push_back(r);
    while (window.size() > window_cap) window.pop_front();
    if (threshold && !rollouts_to_threshold && window.size() >= 16 &&
        mean() >= *threshold)
      rollouts_to_threshold = scored;
  }
  double mean() const {
    if (window.empty()) return 0.0;
    double s = 0.0;
    for (double v : window) s += v;
    return s / static_cast<double>(window.size());
  }
};

void scale_grads(const std::vector<Param*>& params, double factor) {
  for (Param* p : params)
    for (auto& g : p->grad.data) g *= factor;
}

}  // namespace

FinetuneResult finetune(PolicyPair& pair, ValueNet& vnet,
                        const RewardSpec& reward, const VardConfig& cfg,
                        const NoiseSchedule& sched, Rng& rng) {
  reward.validate();
  if (cfg.finetune_window.empty())
    throw std::invalid_argument("finetune: empty finetune window");
  for (std::size_t t : cfg.finetune_window)
    if (t < 1 || t > sched.T)
      throw std::invalid_argument("finetune: window step out of [1, T]");

  const std::size_t d = pair.theta.data_dim;
  std::vector<bool> in_window(sched.T + 1, false);
  for (std::size_t t : cfg.finetune_window) in_window[t] = true;
  const double window_size = static_cast<double>(cfg.finetune_window.size());

  AdamConfig acfg;
  acfg.lr = cfg.base_lr;
  Adam opt(acfg);
  auto params = pair.theta.parameters();

  FinetuneResult result;
  RewardTracker tracker;
  tracker.threshold = cfg.reward_threshold;
  std::vector<Trajectory> pending;
  std::deque<Trajectory> recent;  // freshest scored rollouts for refresh
  const std::size_t recent_cap = 4 * std::max<std::size_t>(cfg.score_batch, 1);

  std::size_t accum = 0;
  std::size_t updates = 0;
  double value_sum = 0.0, surr_sum = 0.0;
  std::size_t stat_count = 0;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const long c = static_cast<long>(rng.index(pair.theta.num_contexts));
    Tensor x = rng.gaussian_tensor({1, d});
    Trajectory traj;
    traj.context = c;
    auto record = [&](const Tensor& row, std::size_t mdp_t, bool action) {
      Tensor v = Tensor::zeros({d});
      for (std::size_t j = 0; j < d; ++j) v.data[j] = row.data[j];
      if (action) traj.actions.push_back(v);
      traj.states.push_back(MdpState{std::move(v), c, mdp_t});
    };
    record(x, 0, false);

    std::vector<long> cs{c};
    for (std::size_t t = sched.T; t >= 1; --t) {
      if (in_window[t]) {
        Tape tape;
        ParamBinding bind;
        VardLossPieces pieces =
            vard_loss(pair, vnet, tape, x, t, c, cfg.eta, sched, rng,
                      cfg.shared_noise, cfg.value_on_mean, &bind);
        const double loss_val = tape.value(pieces.loss).data[0];
        if (!std::isfinite(loss_val))
          throw std::runtime_error("finetune: loss diverged at step " +
                                   std::to_string(step) + ", t=" +
                                   std::to_string(t));
        tape.backward(pieces.loss);
        bind.accumulate(tape);
        value_sum += pieces.value;
        surr_sum += pieces.surrogate;
        ++stat_count;
        x = tape.value(pieces.x_sample);
      } else {
        ReverseStep st = reverse_step(pair.theta, x, t, cs, sched, rng);
        x = st.x_prev;
      }
      record(x, sched.T - t + 1, true);
    }

    pending.push_back(std::move(traj));
    if (pending.size() >= std::max<std::size_t>(cfg.score_batch, 1)) {
      score_batch(pending, reward);
      for (Trajectory& tr : pending) {
        tracker.add(*tr.terminal_reward);
        recent.push_back(std::move(tr));
        while (recent.size() > recent_cap) recent.pop_front();
      }
      pending.clear();
    }

    ++accum;
    if (accum >= cfg.grad_accum) {
      scale_grads(params, 1.0 / (static_cast<double>(accum) * window_size));
      opt.step(params);
      accum = 0;
      ++updates;
      if (cfg.refresh_every > 0 && updates % cfg.refresh_every == 0 &&
          !recent.empty()) {
        std::vector<Trajectory> fresh(recent.begin(), recent.end());
        refresh_value(vnet, fresh, cfg.refresh_steps, cfg.value_lr, 32, rng);
      }
    }

    if ((step + 1) % cfg.metrics_every == 0 && tracker.scored > 0) {
      result.rows.push_back(
          {step + 1, tracker.scored, tracker.mean(),
           stat_count ? value_sum / static_cast<double>(stat_count) : 0.0,
           stat_count ? surr_sum / static_cast<double>(stat_count) : 0.0,
           param_drift(pair.theta, pair.theta0)});
      value_sum = surr_sum = 0.0;
      stat_count = 0;
    }
  }

  result.scored_rollouts = tracker.scored;
  result.rollouts_to_threshold = tracker.rollouts_to_threshold;
  result.final_mean_reward = tracker.mean();
  return result;
}

namespace {

FinetuneResult backprop_baseline(PolicyPair& pair, const RewardSpec& reward,
                                 std::size_t k, const VardConfig& cfg,
                                 const NoiseSchedule& sched, Rng& rng) {
  reward.validate();
  if (!reward.differentiable)
    throw std::invalid_argument(
        "reward backpropagation baseline requires a differentiable reward; '" +
        reward.kind + "' is not");
  if (k < 1 || k > sched.T)
    throw std::invalid_argument("baseline: k out of [1, T]");
  const std::size_t d = pair.theta.data_dim;

  AdamConfig acfg;
  acfg.lr = cfg.base_lr;
  Adam opt(acfg);
  auto params = pair.theta.parameters();
  RewardFn score_fn = make_reward(reward);

  FinetuneResult result;
  RewardTracker tracker;
  tracker.threshold = cfg.reward_threshold;
  std::size_t accum = 0;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const long c = static_cast<long>(rng.index(pair.theta.num_contexts));
    std::vector<long> cs{c};
    const std::size_t t_cut = 1 + rng.index(k);

    // no-grad rollout down to the cut point
    Tensor x = rng.gaussian_tensor({1, d});
    for (std::size_t t = sched.T; t > t_cut; --t)
      x = reverse_step(pair.theta, x, t, cs, sched, rng).x_prev;

    // one differentiable reverse transition, then the one-step clean-sample
    // estimate the reward is applied to
    Tape tape;
    ParamBinding bind;
    Var x_var = tape.leaf(x);
    Var eps = pair.theta.predict_eps(tape, x_var, {t_cut}, cs, &bind);
    Var mu = posterior_mean(tape, x_var, t_cut, eps, sched);
    Var x_prev = mu;
    if (t_cut > 1) {
      Tensor z = rng.gaussian_tensor({1, d});
      for (auto& v : z.data) v *= sched.sigma(t_cut);
      x_prev = tape.add(mu, tape.leaf(std::move(z)));
    }
    Var x0_hat = x_prev;
    if (t_cut > 1) {
      const std::size_t tp = t_cut - 1;
      Var eps2 = pair.theta.predict_eps(tape, x_prev, {tp}, cs, &bind);
      const double ab = sched.alpha_bar[tp];
      x0_hat = tape.scale(
          tape.sub(x_prev, tape.scale(eps2, std::sqrt(1.0 - ab))),
          1.0 / std::sqrt(ab));
    }
    Var loss = tape.scale(differentiable_reward(tape, x0_hat, reward), -1.0);
    if (!std::isfinite(tape.value(loss).data[0]))
      throw std::runtime_error("baseline: loss diverged at step " +
                               std::to_string(step));
    tape.backward(loss);
    bind.accumulate(tape);

    // finish the rollout without gradients and score the true terminal
    Tensor xr = tape.value(x_prev);
    for (std::size_t t = t_cut > 1 ? t_cut - 1 : 0; t >= 1; --t)
      xr = reverse_step(pair.theta, xr, t, cs, sched, rng).x_prev;
    Tensor x0 = Tensor::zeros({d});
    for (std::size_t j = 0; j < d; ++j) x0.data[j] = xr.data[j];
    tracker.add(score_fn(x0, c));

    ++accum;
    if (accum >= cfg.grad_accum) {
      scale_grads(params, 1.0 / static_cast<double>(accum));
      opt.step(params);
      accum = 0;
    }

    if ((step + 1) % cfg.metrics_every == 0) {
      result.rows.push_back({step + 1, tracker.scored, tracker.mean(), 0.0,
                             0.0, param_drift(pair.theta, pair.theta0)});
    }
  }

  result.scored_rollouts = tracker.scored;
  result.rollouts_to_threshold = tracker.rollouts_to_threshold;
  result.final_mean_reward = tracker.mean();
  return result;
}

}  // namespace

FinetuneResult baseline_final_step(PolicyPair& pair, const RewardSpec& reward,
                                   const VardConfig& cfg,
                                   const NoiseSchedule& sched, Rng& rng) {
  return backprop_baseline(pair, reward, 1, cfg, sched, rng);
}

FinetuneResult baseline_random_last_k(PolicyPair& pair,
                                      const RewardSpec& reward, std::size_t k,
                                      const VardConfig& cfg,
                                      const NoiseSchedule& sched, Rng& rng) {
  return backprop_baseline(pair, reward, k, cfg, sched, rng);
}

}  // namespace vardlab
