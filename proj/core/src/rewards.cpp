#include "vardlab/rewards.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace vardlab {

void RewardSpec::validate() const {
  if (kind == "mode_distance") {
    if (target.empty())
      throw std::invalid_argument("RewardSpec: mode_distance needs a target");
    if (!differentiable)
      throw std::invalid_argument("RewardSpec: mode_distance is differentiable");
  } else if (kind == "grid_occupancy") {
    if (resolution < 1)
      throw std::invalid_argument("RewardSpec: resolution must be >= 1");
    if (!(bbox_lo < bbox_hi))
      throw std::invalid_argument("RewardSpec: invalid bbox");
    if (differentiable)
      throw std::invalid_argument(
          "RewardSpec: grid_occupancy is non-differentiable");
  } else if (kind == "linear") {
    if (linear_weights.empty())
      throw std::invalid_argument("RewardSpec: linear needs weights");
    if (!differentiable)
      throw std::invalid_argument("RewardSpec: linear is differentiable");
  } else if (kind == "weighted_entropy") {
    if (weights.empty() || anchors.size() != weights.size())
      throw std::invalid_argument(
          "RewardSpec: weighted_entropy needs matching weights and anchors");
    for (double w : weights)
      if (!std::isfinite(w))
        throw std::invalid_argument("RewardSpec: non-finite weight");
    if (temperature <= 0.0)
      throw std::invalid_argument("RewardSpec: temperature must be positive");
  } else {
    throw std::invalid_argument("RewardSpec: unknown kind " + kind);
  }
}

double mode_distance_reward(const Tensor& x0, const Tensor& target) {
  return -l2_distance2(x0, target);
}

Var mode_distance_reward(Tape& tape, Var x0, const Tensor& target) {
  const Tensor& X = tape.value(x0);
  const std::size_t B = X.shape.at(0), d = X.shape.at(1);
  if (target.size() != d)
    throw std::invalid_argument("mode_distance_reward: target dim mismatch");
  Tensor tgt = Tensor::zeros({B, d});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < d; ++j)
      tgt.data[i * d + j] = target.data[j];
  Var diff = tape.sub(x0, tape.leaf(std::move(tgt)));
  // mean over batch of -||x - target||^2
  return tape.scale(tape.sum(tape.mul(diff, diff)),
                    -1.0 / static_cast<double>(B));
}

double linear_reward(const Tensor& x0, const Tensor& w) {
  if (!x0.same_shape(w))
    throw std::invalid_argument("linear_reward: dim mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) s += x0.data[i] * w.data[i];
  return s;
}

Var linear_reward(Tape& tape, Var x0, const Tensor& w) {
  const Tensor& X = tape.value(x0);
  const std::size_t B = X.shape.at(0), d = X.shape.at(1);
  if (w.size() != d)
    throw std::invalid_argument("linear_reward: dim mismatch");
  Tensor wb = Tensor::zeros({B, d});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < d; ++j) wb.data[i * d + j] = w.data[j];
  return tape.scale(tape.sum(tape.mul(x0, tape.leaf(std::move(wb)))),
                    1.0 / static_cast<double>(B));
}

Var differentiable_reward(Tape& tape, Var x0, const RewardSpec& spec) {
  spec.validate();
  if (spec.kind == "mode_distance")
    return mode_distance_reward(tape, x0, Tensor::vec(spec.target));
  if (spec.kind == "linear")
    return linear_reward(tape, x0, Tensor::vec(spec.linear_weights));
  throw std::invalid_argument(
      "differentiable_reward: reward '" + spec.kind +
      "' is not differentiable; reward backpropagation cannot use it");
}

double grid_occupancy_reward(const std::vector<Tensor>& batch,
                             std::size_t resolution, double bbox_lo,
                             double bbox_hi) {
  if (batch.empty())
    throw std::invalid_argument("grid_occupancy_reward: empty batch");
  if (!(bbox_lo < bbox_hi))
    throw std::invalid_argument("grid_occupancy_reward: invalid bbox");
  const double cell = (bbox_hi - bbox_lo) / static_cast<double>(resolution);
  std::set<std::vector<long>> occupied;
  for (const Tensor& x : batch) {
    std::vector<long> key;
    key.reserve(x.size());
    for (double v : x.data) {
      long idx = static_cast<long>(std::floor((v - bbox_lo) / cell));
      idx = std::max(0L, std::min(idx, static_cast<long>(resolution) - 1));
      key.push_back(idx);
    }
    occupied.insert(std::move(key));
  }
  return -static_cast<double>(occupied.size());
}

double weighted_entropy_reward(const std::vector<double>& p,
                               const std::vector<double>& w) {
  if (p.size() != w.size())
    throw std::invalid_argument("weighted_entropy_reward: size mismatch");
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0 || !std::isfinite(v))
      throw std::invalid_argument(
          "weighted_entropy_reward: proportions must be non-negative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument(
        "weighted_entropy_reward: proportions must sum to 1");
  double wsum = 0.0, ent = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    wsum += p[i] * w[i];
    if (p[i] > 0.0) ent += p[i] * std::log(p[i]);
  }
  return wsum * (1.0 + ent);
}

std::vector<double> categorical_proportions(
    const Tensor& x0, const std::vector<std::vector<double>>& anchors,
    double temperature) {
  if (anchors.empty())
    throw std::invalid_argument("categorical_proportions: no anchors");
  std::vector<double> logits(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (anchors[i].size() != x0.size())
      throw std::invalid_argument("categorical_proportions: dim mismatch");
    double d2 = 0.0;
    for (std::size_t j = 0; j < x0.size(); ++j) {
      const double diff = x0.data[j] - anchors[i][j];
      d2 += diff * diff;
    }
    logits[i] = -d2 / temperature;
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (auto& v : logits) {
    v = std::exp(v - mx);
    z += v;
  }
  for (auto& v : logits) v /= z;
  return logits;
}

RewardFn make_reward(const RewardSpec& spec) {
  spec.validate();
  if (spec.kind == "mode_distance") {
    Tensor target = Tensor::vec(spec.target);
    return [target](const Tensor& x0, long) {
      return mode_distance_reward(x0, target);
    };
  }
  if (spec.kind == "linear") {
    Tensor w = Tensor::vec(spec.linear_weights);
    return [w](const Tensor& x0, long) { return linear_reward(x0, w); };
  }
  if (spec.kind == "weighted_entropy") {
    RewardSpec s = spec;
    return [s](const Tensor& x0, long) {
      return weighted_entropy_reward(
          categorical_proportions(x0, s.anchors, s.temperature), s.weights);
    };
  }
  throw std::invalid_argument("make_reward: " + spec.kind +
                              " is batch-level; use score_batch");
}

void score_batch(std::vector<Trajectory>& batch, const RewardSpec& spec) {
  spec.validate();
  if (batch.empty()) return;
  if (spec.kind == "grid_occupancy") {
    std::vector<Tensor> terminals;
    terminals.reserve(batch.size());
    for (const Trajectory& t : batch) terminals.push_back(t.x0());
    const double r = grid_occupancy_reward(terminals, spec.resolution,
                                           spec.bbox_lo, spec.bbox_hi);
    for (Trajectory& t : batch) t.terminal_reward = r;
    return;
  }
  RewardFn fn = make_reward(spec);
  for (Trajectory& t : batch) attach_sparse_reward(t, fn);
}

}  // namespace vardlab
