#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "vardlab/ddpm.hpp"
#include "vardlab/mdp.hpp"
#include "vardlab/rewards.hpp"

using namespace vardlab;

namespace {

Trajectory toy_trajectory(Rng& rng, std::size_t T, long c, std::size_t d = 2) {
  Trajectory traj;
  traj.context = c;
  Tensor x = rng.gaussian_tensor({d});
  traj.states.push_back(MdpState{x, c, 0});
  for (std::size_t k = 1; k <= T; ++k) {
    x = rng.gaussian_tensor({d});
    traj.actions.push_back(x);
    traj.states.push_back(MdpState{x, c, k});
  }
  return traj;
}

}  // namespace

TEST_SUITE_BEGIN("mdp");

TEST_CASE("sparse reward attachment") {
  Rng rng(1);
  Trajectory traj = toy_trajectory(rng, 5, 0);
  attach_sparse_reward(traj, [](const Tensor&, long) { return 0.0; });
  CHECK(traj.terminal_reward == 0.0);

  Trajectory t2 = toy_trajectory(rng, 5, 0);
  t2.states.back().x = Tensor::vec({0.0, 0.0});
  attach_sparse_reward(t2,
                       [](const Tensor& x, long) { return -squared_norm(x); });
  CHECK(*t2.terminal_reward == 0.0);

  Trajectory t3 = toy_trajectory(rng, 5, 0);
  const double direct = grid_occupancy_reward({t3.x0()}, 8, -3.0, 3.0);
  attach_sparse_reward(t3, [](const Tensor& x, long) {
    return grid_occupancy_reward({x}, 8, -3.0, 3.0);
  });
  CHECK(*t3.terminal_reward == direct);

  Trajectory t4 = toy_trajectory(rng, 5, 0);
  CHECK_THROWS(attach_sparse_reward(
      t4, [](const Tensor&, long) { return std::nan(""); }));
}

TEST_CASE("minibatch: targets, step frequencies, determinism") {
  Rng rng(2);
  ReplayBuffer buf;
  Trajectory traj = toy_trajectory(rng, 50, 3);
  traj.terminal_reward = 4.5;
  buf.push(traj);

  Rng r1(7);
  auto batch = minibatch(buf, 32, r1);
  for (const ValueSample& s : batch) {
    CHECK(s.target == 4.5);
    CHECK(s.c == 3);
    CHECK(s.diffusion_t <= 50);
  }

  // frequency of each MDP step over many draws: p = 1/51
  Rng r2(8);
  std::vector<std::size_t> counts(51, 0);
  const std::size_t n = 100000;
  for (const ValueSample& s : minibatch(buf, n, r2))
    ++counts[50 - s.diffusion_t];
  const double p = 1.0 / 51.0;
  const double bound = 3.0 * std::sqrt(p * (1.0 - p) * n);
  for (std::size_t t = 0; t <= 50; ++t)
    CHECK(std::abs(static_cast<double>(counts[t]) - p * n) < bound);

  Rng r3(9), r4(9);
  auto b1 = minibatch(buf, 16, r3);
  auto b2 = minibatch(buf, 16, r4);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(b1[i].diffusion_t == b2[i].diffusion_t);
    CHECK(b1[i].x->data == b2[i].x->data);
  }

  ReplayBuffer empty;
  Rng r5(1);
  CHECK_THROWS(minibatch(empty, 4, r5));
}

TEST_CASE("replay buffer evicts oldest first") {
  Rng rng(3);
  ReplayBuffer buf(3);
  for (long i = 0; i < 5; ++i) {
    Trajectory t = toy_trajectory(rng, 2, i);
    t.terminal_reward = static_cast<double>(i);
    buf.push(std::move(t));
  }
  CHECK(buf.size() == 3);
  CHECK(buf.at(0).context == 2);
  CHECK(buf.at(2).context == 4);
}

TEST_CASE("state/action aliasing and initial-state distribution") {
  NoiseSchedule s =
      make_schedule(8, "linear", 0.02, 0.4, Sigma2Kind::BetaTilde, false);
  Rng init(4);
  Denoiser model = Denoiser::make(2, 1, {8}, 8, 2, init);
  Rng rng(5);
  double sum = 0.0, sum2 = 0.0;
  const std::size_t n = 3000;
  for (std::size_t i = 0; i < n; ++i) {
    Trajectory traj = sample_trajectory(model, 0, s, rng);
    for (std::size_t k = 0; k < traj.horizon(); ++k)
      REQUIRE(traj.states[k + 1].x.data == traj.actions[k].data);
    sum += traj.states[0].x.data[0];
    sum2 += traj.states[0].x.data[0] * traj.states[0].x.data[0];
  }
  const double mean = sum / n;
  CHECK(std::abs(mean) < 0.06);
  CHECK(sum2 / n - mean * mean == doctest::Approx(1.0).epsilon(0.06));
}

TEST_CASE("trajectory dump holds exactly one reward scalar per line") {
  Rng rng(6);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 3; ++i) {
    Trajectory t = toy_trajectory(rng, 4, i);
    t.terminal_reward = 1.5 * i;
    trajs.push_back(std::move(t));
  }
  const std::string path =
      (std::filesystem::temp_directory_path() / "vardlab_dump_test.jsonl")
          .string();
  dump_trajectories(trajs, path);
  std::ifstream f(path);
  std::string line;
  int lines = 0;
  while (std::getline(f, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("terminal_reward").is_number());
    CHECK(j.at("states").size() == 5);
    CHECK(j.at("actions").size() == 4);
    ++lines;
  }
  CHECK(lines == 3);
  std::filesystem::remove(path);
}

TEST_SUITE_END();
