#pragma once

#include <cstdint>
#include <random>

#include "vardlab/tensor.hpp"

namespace vardlab {

// splitmix64; used to derive independent per-element streams from a master
// seed so batch results do not depend on scheduling.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return unif_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double gaussian() { return normal_(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  // uniform integer in [0, n)
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  Tensor gaussian_tensor(std::vector<std::size_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = gaussian();
    return t;
  }

  Rng fork(std::uint64_t index) { return Rng(mix_seed(engine_(), index)); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace vardlab
