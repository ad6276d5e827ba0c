#pragma once

#include <string>
#include <vector>

#include "vardlab/mdp.hpp"
#include "vardlab/tape.hpp"
#include "vardlab/tensor.hpp"

namespace vardlab {

struct RewardSpec {
  std::string kind;  // mode_distance | grid_occupancy | weighted_entropy | linear
  bool differentiable = false;

  // mode_distance
  std::vector<double> target;

  // linear: r = w . x0
  std::vector<double> linear_weights;

  // grid_occupancy
  std::size_t resolution = 8;
  double bbox_lo = -3.0;
  double bbox_hi = 3.0;

  // weighted_entropy (categorical proportions via soft anchor assignment)
  std::vector<double> weights;
  std::vector<std::vector<double>> anchors;
  double temperature = 1.0;

  void validate() const;
};

// r = -||x0 - target||^2 (differentiable)
double mode_distance_reward(const Tensor& x0, const Tensor& target);
// Tape version: (batch, d) samples -> scalar mean reward, for the
// reward-backpropagation baselines.
Var mode_distance_reward(Tape& tape, Var x0, const Tensor& target);

// r = w . x0 (differentiable toy)
double linear_reward(const Tensor& x0, const Tensor& w);
Var linear_reward(Tape& tape, Var x0, const Tensor& w);

// Tape-recorded mean reward of a (batch, d) sample block for a
// differentiable spec; contract error for non-differentiable kinds.
Var differentiable_reward(Tape& tape, Var x0, const RewardSpec& spec);

// r = -(number of occupied cells) over a batch of samples; piecewise
// constant (compressibility analog), hence non-differentiable.
double grid_occupancy_reward(const std::vector<Tensor>& batch,
                             std::size_t resolution, double bbox_lo,
                             double bbox_hi);

// R = (sum p_d w_d)(1 + sum p_d log p_d), natural log, 0*log 0 := 0.
double weighted_entropy_reward(const std::vector<double>& p,
                               const std::vector<double>& w);

// Soft assignment of x0 to anchor points: p_i oc exp(-||x - a_i||^2 / tau).
std::vector<double> categorical_proportions(
    const Tensor& x0, const std::vector<std::vector<double>>& anchors,
    double temperature);

// Paper preset weights for the three secondary-structure classes.
inline std::vector<double> weighted_entropy_paper_weights() {
  return {1.0, 5.0, 0.5};
}

// Per-sample reward closure for specs that score one trajectory at a time.
// grid_occupancy is batch-level and handled by score_batch instead; asking
// for a per-sample closure for it is a contract error.
RewardFn make_reward(const RewardSpec& spec);

// Scores a batch of trajectories under the spec, attributing batch-level
// rewards (grid occupancy) equally to every trajectory in the batch.
void score_batch(std::vector<Trajectory>& batch, const RewardSpec& spec);

}  // namespace vardlab
