#include "vardlab/ddpm.hpp"

#include <cmath>
#include <stdexcept>

#include "vardlab/optim.hpp"

namespace vardlab {

NoiseSchedule make_schedule(std::size_t T, const std::string& kind,
                            double beta_min, double beta_max,
                            Sigma2Kind sigma2_kind, bool enforce_tail) {
  if (T < 2) throw std::invalid_argument("make_schedule: T must be >= 2");
  NoiseSchedule s;
  s.T = T;
  s.sigma2_kind = sigma2_kind;
  s.beta.assign(T + 1, 0.0);
  if (kind == "linear") {
    if (!(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0))
      throw std::invalid_argument(
          "make_schedule: need 0 < beta_min < beta_max < 1");
    for (std::size_t t = 1; t <= T; ++t)
      s.beta[t] = beta_min + (beta_max - beta_min) *
                                 static_cast<double>(t - 1) /
                                 static_cast<double>(T - 1);
  } else if (kind == "cosine") {
    const double offset = 0.008;
    auto f = [&](double u) {
      const double v = (u + offset) / (1.0 + offset) * M_PI / 2.0;
      return std::cos(v) * std::cos(v);
    };
    double prev = 1.0;
    for (std::size_t t = 1; t <= T; ++t) {
      const double ab = f(static_cast<double>(t) / static_cast<double>(T)) /
                        f(0.0);
      double b = 1.0 - ab / prev;
      b = std::min(std::max(b, 1e-8), 0.999);
      s.beta[t] = b;
      prev = ab;
    }
  } else {
    throw std::invalid_argument("make_schedule: unknown kind " + kind);
  }

  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);
  s.beta_tilde.assign(T + 1, 0.0);
  for (std::size_t t = 1; t <= T; ++t) {
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.beta_tilde[t] =
        (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
  }
  if (enforce_tail && s.alpha_bar[T] >= 0.01)
    throw std::runtime_error(
        "make_schedule: alpha_bar[T] >= 0.01; increase beta range or T so the "
        "terminal marginal is close to N(0, I)");
  return s;
}

Tensor forward_noising(const Tensor& x0, std::size_t t, const Tensor& noise,
                       const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T)
    throw std::invalid_argument("forward_noising: t out of range");
  if (!x0.same_shape(noise))
    throw std::invalid_argument("forward_noising: shape mismatch");
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
  Tensor xt = x0;
  for (std::size_t i = 0; i < xt.size(); ++i)
    xt.data[i] = a * x0.data[i] + b * noise.data[i];
  return xt;
}

Tensor posterior_mean(const Tensor& xt, std::size_t t, const Tensor& eps_hat,
                      const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T)
    throw std::invalid_argument("posterior_mean: t out of range");
  if (!xt.same_shape(eps_hat))
    throw std::invalid_argument("posterior_mean: shape mismatch");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
  const double coef = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
  Tensor mu = xt;
  for (std::size_t i = 0; i < mu.size(); ++i)
    mu.data[i] = inv_sqrt_alpha * (xt.data[i] - coef * eps_hat.data[i]);
  return mu;
}

Var posterior_mean(Tape& tape, Var xt, std::size_t t, Var eps_hat,
                   const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T)
    throw std::invalid_argument("posterior_mean: t out of range");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
  const double coef = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
  return tape.scale(tape.sub(xt, tape.scale(eps_hat, coef)), inv_sqrt_alpha);
}

std::size_t DataConfig::num_contexts() const {
  if (kind == "mixture") return contexts.size();
  return 1;
}

void DataConfig::validate() const {
  if (dim == 0) throw std::invalid_argument("DataConfig: dim must be > 0");
  if (kind == "mixture") {
    if (contexts.empty())
      throw std::invalid_argument("DataConfig: mixture needs contexts");
    for (const auto& comps : contexts) {
      double wsum = 0.0;
      for (const auto& comp : comps) {
        wsum += comp.weight;
        if (comp.mean.size() != dim || comp.std.size() != dim)
          throw std::invalid_argument("DataConfig: component dim mismatch");
        for (double sd : comp.std)
          if (sd <= 0.0)
            throw std::invalid_argument(
                "DataConfig: component std must be positive");
      }
      if (std::abs(wsum - 1.0) > 1e-6)
        throw std::invalid_argument("DataConfig: mixture weights must sum to 1");
    }
  } else if (kind == "spiral" || kind == "checkerboard") {
    if (dim != 2)
      throw std::invalid_argument("DataConfig: " + kind + " requires dim == 2");
  } else {
    throw std::invalid_argument("DataConfig: unknown kind " + kind);
  }
}

Tensor DataConfig::sample(long c, Rng& rng) const {
  if (c < 0 || static_cast<std::size_t>(c) >= num_contexts())
    throw std::invalid_argument("DataConfig::sample: context out of range");
  if (kind == "mixture") {
    const auto& comps = contexts[static_cast<std::size_t>(c)];
    double u = rng.uniform();
    std::size_t pick = comps.size() - 1;
    for (std::size_t i = 0; i < comps.size(); ++i) {
      if (u < comps[i].weight) {
        pick = i;
        break;
      }
      u -= comps[i].weight;
    }
    const auto& comp = comps[pick];
    Tensor x = Tensor::zeros({dim});
    for (std::size_t i = 0; i < dim; ++i)
      x.data[i] = comp.mean[i] + comp.std[i] * rng.gaussian();
    return x;
  }
  if (kind == "spiral") {
    const double u = rng.uniform();
    const double theta = 3.0 * M_PI * u;
    const double r = 2.0 * u;
    Tensor x = Tensor::vec({r * std::cos(theta) + noise * rng.gaussian(),
                            r * std::sin(theta) + noise * rng.gaussian()});
    return x;
  }
  // checkerboard over [-2, 2]^2, 4x4 cells, dark squares only
  for (;;) {
    const double px = rng.uniform(-2.0, 2.0);
    const double py = rng.uniform(-2.0, 2.0);
    const long ix = static_cast<long>(std::floor(px + 2.0));
    const long iy = static_cast<long>(std::floor(py + 2.0));
    if ((ix + iy) % 2 == 0) return Tensor::vec({px, py});
  }
}

Denoiser Denoiser::make(std::size_t data_dim, std::size_t num_contexts,
                        const std::vector<std::size_t>& hidden,
                        std::size_t time_dim, std::size_t ctx_dim, Rng& rng) {
  Denoiser d;
  d.data_dim = data_dim;
  d.time_dim = time_dim;
  d.ctx_dim = ctx_dim;
  d.num_contexts = num_contexts;
  d.net = Mlp::make(data_dim + time_dim + ctx_dim, hidden, data_dim,
                    Activation::Tanh, rng, "denoiser");
  Tensor table = Tensor::zeros({num_contexts + 1, ctx_dim});
  const double bound = 1.0 / std::sqrt(static_cast<double>(ctx_dim));
  for (auto& v : table.data) v = rng.uniform(-bound, bound);
  d.ctx_table = Param("denoiser.ctx_table", std::move(table));
  return d;
}

namespace {

Tensor build_time_block(const std::vector<std::size_t>& t, std::size_t dim) {
  Tensor block = Tensor::zeros({t.size(), dim});
  for (std::size_t i = 0; i < t.size(); ++i) {
    Tensor e = sinusoidal_time_embedding(static_cast<long>(t[i]), dim);
    for (std::size_t j = 0; j < dim; ++j) block.data[i * dim + j] = e.data[j];
  }
  return block;
}

std::vector<std::size_t> context_indices(const std::vector<long>& c,
                                         std::size_t num_contexts) {
  std::vector<std::size_t> idx(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i] < 0 || static_cast<std::size_t>(c[i]) > num_contexts)
      throw std::invalid_argument("context id out of range");
    idx[i] = static_cast<std::size_t>(c[i]);
  }
  return idx;
}

}  // namespace

Var Denoiser::predict_eps(Tape& tape, Var x, const std::vector<std::size_t>& t,
                          const std::vector<long>& c, ParamBinding* bind,
                          double guidance) const {
  const std::size_t batch = tape.value(x).shape.at(0);
  if (t.size() != batch || c.size() != batch)
    throw std::invalid_argument("predict_eps: t/c size mismatch");
  Var temb = tape.leaf(build_time_block(t, time_dim));
  Var table = tape.leaf(ctx_table.value);
  if (bind) bind->bind(const_cast<Param&>(ctx_table), table);

  auto run = [&](const std::vector<long>& ctx) {
    Var cemb = tape.gather_rows(table, context_indices(ctx, num_contexts));
    Var input = tape.concat_cols({x, temb, cemb});
    return net.forward(tape, input, bind);
  };

  Var eps_c = run(c);
  if (guidance == 1.0) return eps_c;
  std::vector<long> null_ctx(batch, null_context());
  Var eps_u = run(null_ctx);
  return tape.add(tape.scale(eps_c, guidance), tape.scale(eps_u, 1.0 - guidance));
}

Tensor Denoiser::predict_eps_plain(const Tensor& x,
                                   const std::vector<std::size_t>& t,
                                   const std::vector<long>& c,
                                   double guidance) const {
  const std::size_t batch = x.shape.at(0);
  if (t.size() != batch || c.size() != batch)
    throw std::invalid_argument("predict_eps_plain: t/c size mismatch");
  Tensor temb = build_time_block(t, time_dim);

  auto run = [&](const std::vector<long>& ctx) {
    const auto idx = context_indices(ctx, num_contexts);
    Tensor input = Tensor::zeros({batch, data_dim + time_dim + ctx_dim});
    const std::size_t w = input.shape[1];
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t j = 0; j < data_dim; ++j)
        input.data[i * w + j] = x.data[i * data_dim + j];
      for (std::size_t j = 0; j < time_dim; ++j)
        input.data[i * w + data_dim + j] = temb.data[i * time_dim + j];
      for (std::size_t j = 0; j < ctx_dim; ++j)
        input.data[i * w + data_dim + time_dim + j] =
            ctx_table.value.data[idx[i] * ctx_dim + j];
    }
    return net.apply(input);
  };

  Tensor eps = run(c);
  if (guidance != 1.0) {
    std::vector<long> null_ctx(batch, null_context());
    Tensor eps_u = run(null_ctx);
    for (std::size_t i = 0; i < eps.size(); ++i)
      eps.data[i] = guidance * eps.data[i] + (1.0 - guidance) * eps_u.data[i];
  }
  return eps;
}

std::vector<Param*> Denoiser::parameters() {
  auto ps = net.parameters();
  ps.push_back(&ctx_table);
  return ps;
}

std::vector<const Param*> Denoiser::parameters() const {
  auto ps = net.parameters();
  ps.push_back(&ctx_table);
  return ps;
}

ReverseStep reverse_step(const Denoiser& model, const Tensor& x_t,
                         std::size_t t, const std::vector<long>& c,
                         const NoiseSchedule& sched, Rng& rng,
                         double guidance) {
  if (t < 1 || t > sched.T)
    throw std::invalid_argument("reverse_step: t out of range");
  x_t.check_finite("reverse_step input");
  const std::size_t batch = x_t.shape.at(0);
  std::vector<std::size_t> ts(batch, t);
  Tensor eps = model.predict_eps_plain(x_t, ts, c, guidance);
  if (!eps.all_finite())
    throw std::runtime_error("reverse_step: non-finite model output at t=" +
                             std::to_string(t));
  ReverseStep out;
  out.mean = posterior_mean(x_t, t, eps, sched);
  out.x_prev = out.mean;
  if (t > 1) {
    const double sd = sched.sigma(t);
    for (auto& v : out.x_prev.data) v += sd * rng.gaussian();
  }
  return out;
}

Trajectory sample_trajectory(const Denoiser& model, long c,
                             const NoiseSchedule& sched, Rng& rng,
                             bool record_means, double guidance) {
  const std::size_t T = sched.T;
  const std::size_t d = model.data_dim;
  Trajectory traj;
  traj.context = c;
  Tensor x = rng.gaussian_tensor({1, d});
  auto as_state = [&](const Tensor& row, std::size_t mdp_t) {
    Tensor v = Tensor::zeros({d});
    for (std::size_t j = 0; j < d; ++j) v.data[j] = row.data[j];
    return MdpState{std::move(v), c, mdp_t};
  };
  traj.states.push_back(as_state(x, 0));
  std::vector<long> ctx{c};
  for (std::size_t t = T; t >= 1; --t) {
    ReverseStep step = reverse_step(model, x, t, ctx, sched, rng, guidance);
    x = step.x_prev;
    MdpState s = as_state(x, T - t + 1);
    traj.actions.push_back(s.x);
    traj.states.push_back(std::move(s));
    if (record_means) {
      Tensor mu = Tensor::zeros({d});
      for (std::size_t j = 0; j < d; ++j) mu.data[j] = step.mean.data[j];
      traj.pretrained_means.push_back(std::move(mu));
    }
  }
  return traj;
}

std::vector<Tensor> sample_terminal(const Denoiser& model,
                                    const std::vector<long>& c,
                                    const NoiseSchedule& sched,
                                    std::uint64_t seed, double guidance) {
  // Per-element RNG streams keyed by (seed, index) so results match
  // individual rollouts regardless of batching.
  const std::size_t batch = c.size();
  const std::size_t d = model.data_dim;
  std::vector<Rng> rngs;
  rngs.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) rngs.emplace_back(mix_seed(seed, i));

  Tensor x = Tensor::zeros({batch, d});
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t j = 0; j < d; ++j) x.data[i * d + j] = rngs[i].gaussian();

  for (std::size_t t = sched.T; t >= 1; --t) {
    std::vector<std::size_t> ts(batch, t);
    Tensor eps = model.predict_eps_plain(x, ts, c, guidance);
    if (!eps.all_finite())
      throw std::runtime_error("sample_terminal: non-finite output at t=" +
                               std::to_string(t));
    Tensor mu = posterior_mean(x, t, eps, sched);
    if (t > 1) {
      const double sd = sched.sigma(t);
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < d; ++j)
          mu.data[i * d + j] += sd * rngs[i].gaussian();
    }
    x = std::move(mu);
  }
  std::vector<Tensor> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    Tensor v = Tensor::zeros({d});
    for (std::size_t j = 0; j < d; ++j) v.data[j] = x.data[i * d + j];
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<double> pretrain(Denoiser& model, const DataConfig& data,
                             const NoiseSchedule& sched,
                             const PretrainConfig& cfg, Rng& rng) {
  data.validate();
  if (data.dim != model.data_dim)
    throw std::invalid_argument("pretrain: data/model dim mismatch");
  const std::size_t B = cfg.batch_size;
  const std::size_t d = model.data_dim;
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam opt(acfg);
  auto params = model.parameters();
  std::vector<double> losses;
  losses.reserve(cfg.steps);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tensor xt = Tensor::zeros({B, d});
    Tensor eps = Tensor::zeros({B, d});
    std::vector<std::size_t> ts(B);
    std::vector<long> cs(B);
    for (std::size_t i = 0; i < B; ++i) {
      const long c = static_cast<long>(rng.index(data.num_contexts()));
      Tensor x0 = data.sample(c, rng);
      Tensor z = rng.gaussian_tensor({d});
      const std::size_t t = 1 + rng.index(sched.T);
      Tensor noised = forward_noising(x0, t, z, sched);
      for (std::size_t j = 0; j < d; ++j) {
        xt.data[i * d + j] = noised.data[j];
        eps.data[i * d + j] = z.data[j];
      }
      ts[i] = t;
      cs[i] = rng.uniform() < cfg.p_uncond ? model.null_context() : c;
    }

    Tape tape;
    ParamBinding bind;
    Var x_var = tape.leaf(xt);
    Var eps_hat = model.predict_eps(tape, x_var, ts, cs, &bind);
    Var diff = tape.sub(eps_hat, tape.leaf(eps));
    // mean over batch of squared residual norms
    Var loss = tape.scale(tape.sum(tape.mul(diff, diff)),
                          1.0 / static_cast<double>(B));
    const double loss_val = tape.value(loss).data[0];
    if (!std::isfinite(loss_val))
      throw std::runtime_error("pretrain: loss diverged (NaN) at step " +
                               std::to_string(step));
    tape.backward(loss);
    bind.accumulate(tape);
    opt.step(params);
    losses.push_back(loss_val);
  }
  return losses;
}

double kl_sum_diagnostic(const Denoiser& model, const Tensor& x0, long c,
                         const NoiseSchedule& sched, Rng& rng) {
  const std::size_t d = x0.size();
  std::vector<long> ctx{c};
  double total = 0.0;
  // One forward-chain sample; KL terms for t = 2..T (beta_tilde[1] = 0).
  Tensor x_prev = x0;
  std::vector<Tensor> chain(sched.T + 1);
  chain[0] = x0;
  for (std::size_t t = 1; t <= sched.T; ++t) {
    Tensor x = x_prev;
    const double a = std::sqrt(sched.alpha[t]);
    const double sd = std::sqrt(sched.beta[t]);
    for (auto& v : x.data) v = a * v + sd * rng.gaussian();
    chain[t] = x;
    x_prev = x;
  }
  for (std::size_t t = 2; t <= sched.T; ++t) {
    Tensor xt = Tensor::zeros({1, d});
    for (std::size_t j = 0; j < d; ++j) xt.data[j] = chain[t].data[j];
    std::vector<std::size_t> ts{t};
    Tensor eps = model.predict_eps_plain(xt, ts, ctx);
    Tensor mu_p = posterior_mean(xt, t, eps, sched);
    // q(x_{t-1} | x_t, x_0) mean
    const double c0 = std::sqrt(sched.alpha_bar[t - 1]) * sched.beta[t] /
                      (1.0 - sched.alpha_bar[t]);
    const double ct = std::sqrt(sched.alpha[t]) *
                      (1.0 - sched.alpha_bar[t - 1]) /
                      (1.0 - sched.alpha_bar[t]);
    const double var_q = sched.beta_tilde[t];
    const double var_p = sched.sigma2(t);
    double gap2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double mu_q = c0 * x0.data[j] + ct * chain[t].data[j];
      const double diff = mu_q - mu_p.data[j];
      gap2 += diff * diff;
    }
    total += 0.5 * (static_cast<double>(d) *
                        (std::log(var_p / var_q) + var_q / var_p - 1.0) +
                    gap2 / var_p);
  }
  return total;
}

}  // namespace vardlab
