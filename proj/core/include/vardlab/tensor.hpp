#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vardlab {

// Dense row-major float64 array. 1-D and 2-D shapes cover everything in
// this codebase.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size())
      throw std::invalid_argument("Tensor: shape/data size mismatch");
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = numel(s);
    return Tensor{std::move(s), std::vector<double>(n, 0.0)};
  }

  static Tensor full(std::vector<std::size_t> s, double v) {
    std::size_t n = numel(s);
    return Tensor{std::move(s), std::vector<double>(n, v)};
  }

  static Tensor vec(std::vector<double> d) {
    std::size_t n = d.size();
    return Tensor{{n}, std::move(d)};
  }

  static Tensor scalar(double v) { return Tensor{{1}, {v}}; }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void check_finite(const std::string& what) const {
    if (!all_finite())
      throw std::runtime_error("non-finite values in " + what);
  }
};

inline double squared_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data) s += v * v;
  return s;
}

inline double l2_distance2(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("l2_distance2: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s;
}

}  // namespace vardlab
