#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vardlab/rng.hpp"
#include "vardlab/tensor.hpp"

namespace vardlab {

// r(x_0, c): terminal reward of a clean sample under context c.
using RewardFn = std::function<double(const Tensor& x0, long c)>;

// MDP step index t in [0, T] maps to diffusion index T - t.
struct MdpState {
  Tensor x;
  long c = 0;
  std::size_t t = 0;
};

struct Trajectory {
  std::vector<MdpState> states;        // length T+1, states[0].x == x_T
  std::vector<Tensor> actions;         // length T, actions[k] == states[k+1].x
  std::vector<Tensor> pretrained_means;  // optional per-step mu record
  std::optional<double> terminal_reward;
  long context = 0;

  std::size_t horizon() const { return actions.size(); }
  const Tensor& x0() const { return states.back().x; }
};

// Scores the rollout's clean sample; intermediate rewards are implicitly
// zero and never stored.
Trajectory& attach_sparse_reward(Trajectory& traj, const RewardFn& reward_fn);

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 2048) : capacity_(capacity) {}

  void push(Trajectory traj);
  std::size_t size() const { return trajectories_.size(); }
  bool empty() const { return trajectories_.empty(); }
  std::size_t capacity() const { return capacity_; }
  const Trajectory& at(std::size_t i) const { return trajectories_[i]; }

 private:
  std::size_t capacity_;
  std::deque<Trajectory> trajectories_;  // oldest-first eviction
};

struct ValueSample {
  const Tensor* x;      // state x_{T-t}
  long c;
  std::size_t diffusion_t;  // T - t, the index the value net conditions on
  double target;            // trajectory's terminal reward
};

// Uniform trajectory, then uniform step t in [0, T] within it.
std::vector<ValueSample> minibatch(const ReplayBuffer& buffer,
                                   std::size_t batch_size, Rng& rng);

// JSON-lines dump, one trajectory per line.
void dump_trajectories(const std::vector<Trajectory>& trajs,
                       const std::string& path);

}  // namespace vardlab
