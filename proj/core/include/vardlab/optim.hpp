#pragma once

#include <vector>

#include "vardlab/nn.hpp"

namespace vardlab {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled
  double clip_norm = 1.0;      // global gradient norm; <= 0 disables
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Clips the global gradient norm, applies decoupled weight decay, then
  // the Adam moment update. Zeroes the grad accumulators afterwards.
  // Throws if any gradient is non-finite, naming the parameter.
  void step(const std::vector<Param*>& params);

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long step_count() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;  // per-param moments, lazily sized
};

}  // namespace vardlab
