#include "vardlab/mdp.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace vardlab {

Trajectory& attach_sparse_reward(Trajectory& traj, const RewardFn& reward_fn) {
  if (traj.states.empty() || traj.states.size() != traj.actions.size() + 1)
    throw std::invalid_argument("attach_sparse_reward: incomplete trajectory");
  const double r = reward_fn(traj.x0(), traj.context);
  if (!std::isfinite(r))
    throw std::runtime_error("attach_sparse_reward: reward is non-finite");
  traj.terminal_reward = r;
  return traj;
}

void ReplayBuffer::push(Trajectory traj) {
  trajectories_.push_back(std::move(traj));
  while (trajectories_.size() > capacity_) trajectories_.pop_front();
}

std::vector<ValueSample> minibatch(const ReplayBuffer& buffer,
                                   std::size_t batch_size, Rng& rng) {
  if (buffer.empty()) throw std::invalid_argument("minibatch: empty buffer");
  std::vector<ValueSample> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const Trajectory& traj = buffer.at(rng.index(buffer.size()));
    if (!traj.terminal_reward)
      throw std::invalid_argument("minibatch: unscored trajectory in buffer");
    const std::size_t T = traj.horizon();
    const std::size_t t = rng.index(T + 1);  // MDP step in [0, T]
    out.push_back(ValueSample{&traj.states[t].x, traj.states[t].c,
                              T - t, *traj.terminal_reward});
  }
  return out;
}

void dump_trajectories(const std::vector<Trajectory>& trajs,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const Trajectory& traj : trajs) {
    nlohmann::json j;
    j["context"] = traj.context;
    if (traj.terminal_reward) j["terminal_reward"] = *traj.terminal_reward;
    auto states = nlohmann::json::array();
    for (const MdpState& s : traj.states) states.push_back(s.x.data);
    j["states"] = states;
    auto actions = nlohmann::json::array();
    for (const Tensor& a : traj.actions) actions.push_back(a.data);
    j["actions"] = actions;
    f << j.dump() << "\n";
  }
}

}  // namespace vardlab
