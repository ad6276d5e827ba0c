#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>

#include "test_util.hpp"
#include "vardlab/ddpm.hpp"
#include "vardlab/prm.hpp"

using namespace vardlab;

namespace {

// Enumerable discretized chain: 2 bins, T steps, known transitions.
struct TabularToy {
  static constexpr std::size_t T = 3;
  std::array<double, 2> p0{0.4, 0.6};
  // P[t][s][s'] for t = 0..T-1
  double P[3][2][2] = {{{0.8, 0.2}, {0.3, 0.7}},
                       {{0.6, 0.4}, {0.5, 0.5}},
                       {{0.9, 0.1}, {0.2, 0.8}}};
  std::array<double, 2> reward{0.3, 1.7};

  // exact conditional expectation by backward recursion
  std::array<std::array<double, 2>, T + 1> backward_values() const {
    std::array<std::array<double, 2>, T + 1> V{};
    V[T] = reward;
    for (std::size_t t = T; t-- > 0;)
      for (std::size_t s = 0; s < 2; ++s)
        V[t][s] = P[t][s][0] * V[t + 1][0] + P[t][s][1] * V[t + 1][1];
    return V;
  }

  // weighted least-squares tabular solution of the value regression:
  // per (t, s) cell, the probability-weighted mean of terminal rewards
  template <typename Fn>
  void enumerate_paths(Fn&& fn) const {
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t d = 0; d < 2; ++d) {
            const double prob = p0[a] * P[0][a][b] * P[1][b][c] * P[2][c][d];
            const std::array<std::size_t, 4> path{a, b, c, d};
            fn(path, prob, reward[d]);
          }
  }

  std::array<std::array<double, 2>, T + 1> least_squares_values() const {
    std::array<std::array<double, 2>, T + 1> num{}, den{}, V{};
    enumerate_paths([&](const auto& path, double prob, double r) {
      for (std::size_t t = 0; t <= T; ++t) {
        num[t][path[t]] += prob * r;
        den[t][path[t]] += prob;
      }
    });
    for (std::size_t t = 0; t <= T; ++t)
      for (std::size_t s = 0; s < 2; ++s) V[t][s] = num[t][s] / den[t][s];
    return V;
  }
};

void zero_params(std::vector<Param*> params) {
  for (Param* p : params)
    for (auto& v : p->value.data) v = 0.0;
}

ValueNet constant_value_net(double m, std::size_t T, Rng& rng) {
  ValueNet v = ValueNet::make(2, 1, {}, 4, 2, T, rng);
  zero_params(v.parameters());
  v.net.layers.back().bias.value.data[0] = m;
  return v;
}

}  // namespace

TEST_SUITE_BEGIN("prm");

TEST_CASE("tabular least-squares value equals exhaustive enumeration") {
  TabularToy toy;
  auto exact = toy.backward_values();
  auto ls = toy.least_squares_values();
  for (std::size_t t = 0; t <= TabularToy::T; ++t)
    for (std::size_t s = 0; s < 2; ++s)
      CHECK(std::abs(ls[t][s] - exact[t][s]) < 1e-6);
}

TEST_CASE("tabular residual variance is non-increasing in progress") {
  TabularToy toy;
  auto V = toy.backward_values();
  std::array<double, TabularToy::T + 1> var{};
  toy.enumerate_paths([&](const auto& path, double prob, double r) {
    for (std::size_t t = 0; t <= TabularToy::T; ++t) {
      const double res = r - V[t][path[t]];
      var[t] += prob * res * res;
    }
  });
  for (std::size_t t = 0; t < TabularToy::T; ++t)
    CHECK(var[t + 1] <= var[t] + 1e-12);
  CHECK(var[TabularToy::T] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("value_loss: exact fit gives zero, constant predictor closed form") {
  Rng rng(1);
  ValueNet vnet = ValueNet::make(2, 1, {8}, 4, 2, 10, rng);
  std::vector<Tensor> xs;
  for (int i = 0; i < 4; ++i) xs.push_back(rng.gaussian_tensor({2}));
  std::vector<ValueSample> batch;
  for (int i = 0; i < 4; ++i)
    batch.push_back(
        ValueSample{&xs[i], 0, static_cast<std::size_t>(i), 0.0});
  for (auto& s : batch)
    s.target = vnet.predict_one(*s.x, s.diffusion_t, s.c);
  CHECK(value_loss_value(vnet, batch) == doctest::Approx(0.0).epsilon(1e-12));

  // constant m on targets {0, 1}: loss = (m^2 + (1-m)^2) / 2
  for (double m : {0.2, 0.5, 0.9}) {
    Rng r2(2);
    ValueNet cnet = constant_value_net(m, 10, r2);
    std::vector<ValueSample> b2 = {ValueSample{&xs[0], 0, 3, 0.0},
                                   ValueSample{&xs[1], 0, 7, 1.0}};
    CHECK(value_loss_value(cnet, b2) ==
          doctest::Approx((m * m + (1 - m) * (1 - m)) / 2.0).epsilon(1e-10));
  }

  // shared-state scenario: the minimizing constant is the reward mean
  const double R0 = 0.1, R2 = 0.9, R3 = 1.4;
  const double mean = (R0 + R2 + R3) / 3.0;
  auto loss_at = [&](double m) {
    Rng r3(3);
    ValueNet cnet = constant_value_net(m, 10, r3);
    std::vector<ValueSample> b = {ValueSample{&xs[0], 0, 5, R0},
                                  ValueSample{&xs[0], 0, 5, R2},
                                  ValueSample{&xs[0], 0, 5, R3}};
    return value_loss_value(cnet, b);
  };
  CHECK(loss_at(mean) < loss_at(mean + 0.1));
  CHECK(loss_at(mean) < loss_at(mean - 0.1));
}

TEST_CASE("dV/dx matches finite differences") {
  Rng rng(4);
  ValueNet vnet = ValueNet::make(3, 2, {8, 8}, 6, 3, 20, rng);
  Tensor x = rng.gaussian_tensor({1, 3});
  Tape tape;
  Var xv = tape.leaf(x);
  Var out = vnet.predict(tape, xv, {7}, {1});
  tape.backward(out);
  const Tensor& g = tape.grad(xv);
  const double h = 1e-5;
  for (std::size_t j = 0; j < 3; ++j) {
    Tensor xp = x, xm = x;
    xp.data[j] += h;
    xm.data[j] -= h;
    Tensor rp = Tensor::vec({xp.data[0], xp.data[1], xp.data[2]});
    Tensor rm = Tensor::vec({xm.data[0], xm.data[1], xm.data[2]});
    const double fd =
        (vnet.predict_one(rp, 7, 1) - vnet.predict_one(rm, 7, 1)) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(g.data[j]), 1e-6});
    CHECK(std::abs(fd - g.data[j]) / denom < 1e-4);
  }
}

TEST_CASE("constant reward pretraining converges to the constant") {
  NoiseSchedule s =
      make_schedule(10, "linear", 0.02, 0.4, Sigma2Kind::BetaTilde, false);
  Rng init(5);
  Denoiser model = Denoiser::make(2, 1, {8}, 8, 2, init);
  Rng rng(6);
  ValueNet vnet = ValueNet::make(2, 1, {16}, 8, 2, 10, rng);
  ValueTrainConfig cfg;
  cfg.steps = 800;
  cfg.batch_size = 64;
  cfg.normalize_targets = true;
  pretrain_value(vnet, model, [](const Tensor&, long) { return 7.0; }, s, cfg,
                 rng);
  Rng probe(7);
  double max_dev = 0.0;
  for (int i = 0; i < 50; ++i) {
    Trajectory traj = sample_trajectory(model, 0, s, probe);
    const std::size_t t = probe.index(11);
    const double v = vnet.predict_one(traj.states[10 - t].x, t, 0);
    max_dev = std::max(max_dev, std::abs(v - 7.0));
  }
  CHECK(max_dev < 0.05);
}

TEST_CASE("two-branch toy: V at the symmetric state approaches 0.5") {
  NoiseSchedule s =
      make_schedule(10, "linear", 0.02, 0.4, Sigma2Kind::BetaTilde, false);
  Rng init(8);
  Denoiser model = Denoiser::make(2, 1, {8}, 8, 2, init);
  zero_params(model.parameters());  // symmetric frozen policy
  Rng rng(9);
  ValueNet vnet = ValueNet::make(2, 1, {32, 32}, 8, 2, 10, rng);
  ValueTrainConfig cfg;
  cfg.steps = 3000;
  cfg.batch_size = 256;  // large batches tame regression noise near 0.5
  cfg.convergence_tol = 0.0;
  RewardFn reward = [](const Tensor& x0, long) {
    return x0.data[0] > 0.0 ? 1.0 : 0.0;
  };
  pretrain_value(vnet, model, reward, s, cfg, rng);
  const double v = vnet.predict_one(Tensor::vec({0.0, 0.0}), 10, 0);
  CHECK(std::abs(v - 0.5) <= 0.03);

  // value at t=0 tracks the reward itself on held-out rollouts
  Rng probe(10);
  std::vector<double> devs;
  std::vector<std::array<double, 11>> residuals;
  std::array<double, 11> res_sum2{};
  for (int i = 0; i < 200; ++i) {
    Trajectory traj = sample_trajectory(model, 0, s, probe);
    const double r = reward(traj.x0(), 0);
    devs.push_back(std::abs(vnet.predict_one(traj.x0(), 0, 0) - r));
    for (std::size_t dt = 0; dt <= 10; ++dt) {
      const double res = r - vnet.predict_one(traj.states[10 - dt].x, dt, 0);
      res_sum2[dt] += res * res;
    }
  }
  std::sort(devs.begin(), devs.end());
  CHECK(devs[100] < 0.1);

  // residual spread shrinks as denoising progresses (smaller diffusion index)
  CHECK(res_sum2[0] < res_sum2[10]);
  int drops = 0;
  for (std::size_t dt = 0; dt < 10; ++dt)
    if (res_sum2[dt] <= res_sum2[dt + 1]) ++drops;
  CHECK(drops >= 7);
}

TEST_CASE("refresh_value: no-op at k=0, converges toward shifted targets") {
  Rng rng(11);
  ValueNet vnet = ValueNet::make(2, 1, {16}, 8, 2, 10, rng);
  std::vector<Trajectory> fresh;
  Rng gen(12);
  for (int i = 0; i < 32; ++i) {
    Trajectory traj;
    traj.context = 0;
    Tensor x = gen.gaussian_tensor({2});
    traj.states.push_back(MdpState{x, 0, 0});
    for (std::size_t k = 1; k <= 10; ++k) {
      x = gen.gaussian_tensor({2});
      traj.actions.push_back(x);
      traj.states.push_back(MdpState{x, 0, k});
    }
    traj.terminal_reward = 1.0;
    fresh.push_back(std::move(traj));
  }

  std::vector<double> before;
  for (Param* p : vnet.parameters())
    before.insert(before.end(), p->value.data.begin(), p->value.data.end());
  Rng r0(13);
  refresh_value(vnet, fresh, 0, 1e-3, 16, r0);
  std::vector<double> after;
  for (Param* p : vnet.parameters())
    after.insert(after.end(), p->value.data.begin(), p->value.data.end());
  CHECK(before == after);

  ReplayBuffer buf;
  for (const Trajectory& t : fresh) buf.push(t);
  Rng rb(14);
  const double loss_before = value_loss_value(vnet, minibatch(buf, 64, rb));
  Rng r1(15);
  refresh_value(vnet, fresh, 200, 1e-2, 32, r1);
  Rng rb2(14);
  const double loss_after = value_loss_value(vnet, minibatch(buf, 64, rb2));
  CHECK(loss_after < loss_before);
}

TEST_SUITE_END();
