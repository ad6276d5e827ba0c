#include "vardlab/prm.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "vardlab/optim.hpp"
#include "vardlab/rewards.hpp"

namespace vardlab {

ValueNet ValueNet::make(std::size_t data_dim, std::size_t num_contexts,
                        const std::vector<std::size_t>& hidden,
                        std::size_t time_dim, std::size_t ctx_dim,
                        std::size_t T, Rng& rng) {
  ValueNet v;
  v.data_dim = data_dim;
  v.time_dim = time_dim;
  v.ctx_dim = ctx_dim;
  v.num_contexts = num_contexts;
  v.T = T;
  v.net = Mlp::make(data_dim + time_dim + ctx_dim, hidden, 1, Activation::Tanh,
                    rng, "value");
  Tensor table = Tensor::zeros({num_contexts + 1, ctx_dim});
  const double bound = 1.0 / std::sqrt(static_cast<double>(ctx_dim));
  for (auto& vv : table.data) vv = rng.uniform(-bound, bound);
  v.ctx_table = Param("value.ctx_table", std::move(table));
  return v;
}

namespace {

Var value_input(const ValueNet& v, Tape& tape, Var x,
                const std::vector<std::size_t>& diffusion_t,
                const std::vector<long>& c, ParamBinding* bind) {
  const std::size_t batch = tape.value(x).shape.at(0);
  if (diffusion_t.size() != batch || c.size() != batch)
    throw std::invalid_argument("ValueNet: t/c size mismatch");
  Tensor temb = Tensor::zeros({batch, v.time_dim});
  for (std::size_t i = 0; i < batch; ++i) {
    if (diffusion_t[i] > v.T)
      throw std::invalid_argument("ValueNet: diffusion index out of range");
    Tensor e = sinusoidal_time_embedding(static_cast<long>(diffusion_t[i]),
                                         v.time_dim);
    for (std::size_t j = 0; j < v.time_dim; ++j)
      temb.data[i * v.time_dim + j] = e.data[j];
  }
  Var temb_var = tape.leaf(std::move(temb));
  Var table = tape.leaf(v.ctx_table.value);
  if (bind) bind->bind(const_cast<Param&>(v.ctx_table), table);
  std::vector<std::size_t> idx(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    if (c[i] < 0 || static_cast<std::size_t>(c[i]) > v.num_contexts)
      throw std::invalid_argument("ValueNet: context id out of range");
    idx[i] = static_cast<std::size_t>(c[i]);
  }
  Var cemb = tape.gather_rows(table, std::move(idx));
  return tape.concat_cols({x, temb_var, cemb});
}

// Network output before target de-normalization.
Var predict_raw(const ValueNet& v, Tape& tape, Var x,
                const std::vector<std::size_t>& diffusion_t,
                const std::vector<long>& c, ParamBinding* bind) {
  Var input = value_input(v, tape, x, diffusion_t, c, bind);
  return v.net.forward(tape, input, bind);
}

}  // namespace

Var ValueNet::predict(Tape& tape, Var x,
                      const std::vector<std::size_t>& diffusion_t,
                      const std::vector<long>& c, ParamBinding* bind) const {
  Var raw = predict_raw(*this, tape, x, diffusion_t, c, bind);
  if (!normalize_targets) return raw;
  const std::size_t batch = tape.value(x).shape.at(0);
  Var shift = tape.leaf(Tensor::full({batch, 1}, target_mean));
  return tape.add(tape.scale(raw, target_std), shift);
}

double ValueNet::predict_one(const Tensor& x, std::size_t diffusion_t,
                             long c) const {
  Tape tape;
  Tensor row = Tensor::zeros({1, data_dim});
  for (std::size_t j = 0; j < data_dim; ++j) row.data[j] = x.data[j];
  Var out = predict(tape, tape.leaf(std::move(row)), {diffusion_t}, {c});
  const double v = tape.value(out).data[0];
  if (!std::isfinite(v))
    throw std::runtime_error("ValueNet: non-finite prediction");
  return v;
}

std::vector<Param*> ValueNet::parameters() {
  auto ps = net.parameters();
  ps.push_back(&ctx_table);
  return ps;
}

std::vector<const Param*> ValueNet::parameters() const {
  auto ps = net.parameters();
  ps.push_back(&ctx_table);
  return ps;
}

Var value_loss(const ValueNet& vnet, Tape& tape,
               const std::vector<ValueSample>& batch, ParamBinding* bind) {
  if (batch.empty()) throw std::invalid_argument("value_loss: empty batch");
  const std::size_t B = batch.size();
  const std::size_t d = vnet.data_dim;
  Tensor X = Tensor::zeros({B, d});
  Tensor targets = Tensor::zeros({B, 1});
  std::vector<std::size_t> ts(B);
  std::vector<long> cs(B);
  for (std::size_t i = 0; i < B; ++i) {
    const ValueSample& s = batch[i];
    for (std::size_t j = 0; j < d; ++j) X.data[i * d + j] = s.x->data[j];
    ts[i] = s.diffusion_t;
    cs[i] = s.c;
    targets.data[i] = vnet.normalize_targets
                          ? (s.target - vnet.target_mean) / vnet.target_std
                          : s.target;
  }
  Var pred = predict_raw(vnet, tape, tape.leaf(std::move(X)), ts, cs, bind);
  if (!tape.value(pred).all_finite())
    throw std::runtime_error("value_loss: non-finite prediction");
  Var diff = tape.sub(pred, tape.leaf(std::move(targets)));
  return tape.mean(tape.mul(diff, diff));
}

double value_loss_value(const ValueNet& vnet,
                        const std::vector<ValueSample>& batch) {
  Tape tape;
  Var loss = value_loss(vnet, tape, batch, nullptr);
  return tape.value(loss).data[0];
}

namespace {

void update_target_stats(ValueNet& vnet, const ReplayBuffer& buffer) {
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = buffer.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double r = buffer.at(i).terminal_reward.value();
    sum += r;
    sum2 += r * r;
  }
  vnet.target_mean = sum / static_cast<double>(n);
  const double var = sum2 / static_cast<double>(n) -
                     vnet.target_mean * vnet.target_mean;
  vnet.target_std = std::sqrt(std::max(var, 1e-12));
}

}  // namespace

std::vector<ValueCurveRow> pretrain_value(ValueNet& vnet,
                                          const Denoiser& pretrained_model,
                                          const RewardFn& reward_fn,
                                          const NoiseSchedule& sched,
                                          const ValueTrainConfig& cfg,
                                          Rng& rng) {
  vnet.normalize_targets = cfg.normalize_targets;
  ReplayBuffer train_buf(2048), holdout_buf(256);
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam opt(acfg);
  auto params = vnet.parameters();

  std::vector<ValueCurveRow> curve;
  std::vector<double> ma_history;  // moving-average loss per step
  double ma = 0.0;
  const std::size_t ma_window = 20;
  const std::size_t slope_span = 200;
  std::vector<double> recent;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t k = 0; k < cfg.rollouts_per_step; ++k) {
      const long c =
          static_cast<long>(rng.index(pretrained_model.num_contexts));
      Trajectory traj = sample_trajectory(pretrained_model, c, sched, rng);
      attach_sparse_reward(traj, reward_fn);
      if (rng.uniform() < cfg.holdout_frac)
        holdout_buf.push(std::move(traj));
      else
        train_buf.push(std::move(traj));
    }
    if (train_buf.empty()) continue;
    if (cfg.normalize_targets && step % 100 == 0)
      update_target_stats(vnet, train_buf);

    auto batch = minibatch(train_buf, cfg.batch_size, rng);
    Tape tape;
    ParamBinding bind;
    Var loss = value_loss(vnet, tape, batch, &bind);
    const double loss_val = tape.value(loss).data[0];
    tape.backward(loss);
    bind.accumulate(tape);
    opt.step(params);

    recent.push_back(loss_val);
    if (recent.size() > ma_window) recent.erase(recent.begin());
    ma = 0.0;
    for (double v : recent) ma += v;
    ma /= static_cast<double>(recent.size());
    ma_history.push_back(ma);

    if (step % 50 == 0 || step + 1 == cfg.steps) {
      double holdout = std::nan("");
      if (!holdout_buf.empty()) {
        Rng hrng(12345);
        auto hbatch = minibatch(holdout_buf, cfg.batch_size, hrng);
        holdout = value_loss_value(vnet, hbatch);
      }
      curve.push_back({step, loss_val, holdout});
    }

    if (ma_history.size() > slope_span + ma_window) {
      const double slope =
          (ma_history.back() - ma_history[ma_history.size() - 1 - slope_span]) /
          static_cast<double>(slope_span);
      if (std::abs(slope) < cfg.convergence_tol) break;
    }
  }
  return curve;
}

std::vector<ValueCurveRow> pretrain_value_batched(
    ValueNet& vnet, const Denoiser& pretrained_model, const RewardSpec& reward,
    std::size_t score_batch_size, const NoiseSchedule& sched,
    const ValueTrainConfig& cfg, Rng& rng) {
  if (score_batch_size == 0)
    throw std::invalid_argument("pretrain_value_batched: empty score batch");
  vnet.normalize_targets = cfg.normalize_targets;
  ReplayBuffer train_buf(2048), holdout_buf(256);
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam opt(acfg);
  auto params = vnet.parameters();

  std::vector<ValueCurveRow> curve;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    // collect a freshly scored batch every few regression steps
    if (step % 5 == 0) {
      std::vector<Trajectory> batch;
      batch.reserve(score_batch_size);
      for (std::size_t k = 0; k < score_batch_size; ++k) {
        const long c =
            static_cast<long>(rng.index(pretrained_model.num_contexts));
        batch.push_back(sample_trajectory(pretrained_model, c, sched, rng));
      }
      score_batch(batch, reward);
      for (Trajectory& t : batch) {
        if (rng.uniform() < cfg.holdout_frac)
          holdout_buf.push(std::move(t));
        else
          train_buf.push(std::move(t));
      }
    }
    if (train_buf.empty()) continue;
    if (cfg.normalize_targets && step % 100 == 0)
      update_target_stats(vnet, train_buf);

    auto batch = minibatch(train_buf, cfg.batch_size, rng);
    Tape tape;
    ParamBinding bind;
    Var loss = value_loss(vnet, tape, batch, &bind);
    const double loss_val = tape.value(loss).data[0];
    tape.backward(loss);
    bind.accumulate(tape);
    opt.step(params);

    if (step % 50 == 0 || step + 1 == cfg.steps) {
      double holdout = std::nan("");
      if (!holdout_buf.empty()) {
        Rng hrng(12345);
        auto hbatch = minibatch(holdout_buf, cfg.batch_size, hrng);
        holdout = value_loss_value(vnet, hbatch);
      }
      curve.push_back({step, loss_val, holdout});
    }
  }
  return curve;
}

void refresh_value(ValueNet& vnet, const std::vector<Trajectory>& fresh,
                   std::size_t k_steps, double lr, std::size_t batch_size,
                   Rng& rng) {
  if (k_steps == 0 || fresh.empty()) return;
  ReplayBuffer buf(fresh.size());
  for (const Trajectory& t : fresh) buf.push(t);
  AdamConfig acfg;
  acfg.lr = lr;
  Adam opt(acfg);
  auto params = vnet.parameters();
  for (std::size_t k = 0; k < k_steps; ++k) {
    auto batch = minibatch(buf, batch_size, rng);
    Tape tape;
    ParamBinding bind;
    Var loss = value_loss(vnet, tape, batch, &bind);
    tape.backward(loss);
    bind.accumulate(tape);
    opt.step(params);
  }
}

void write_value_curve(const std::vector<ValueCurveRow>& curve,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "step,train_loss,holdout_loss\n";
  for (const auto& row : curve) {
    f << row.step << "," << row.train_loss << ",";
    if (std::isnan(row.holdout_loss))
      f << "";
    else
      f << row.holdout_loss;
    f << "\n";
  }
}

}  // namespace vardlab
