#include "vardlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace vardlab {

double wasserstein1_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("wasserstein1_1d: empty sample set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  // integral over u in (0,1) of |F_a^{-1}(u) - F_b^{-1}(u)| via the merged
  // breakpoint grid i/|a|, j/|b|
  const std::size_t n = a.size(), m = b.size();
  std::size_t i = 0, j = 0;
  double u = 0.0, total = 0.0;
  while (i < n && j < m) {
    const double ua = static_cast<double>(i + 1) / static_cast<double>(n);
    const double ub = static_cast<double>(j + 1) / static_cast<double>(m);
    const double next = std::min(ua, ub);
    total += (next - u) * std::abs(a[i] - b[j]);
    u = next;
    if (ua <= next) ++i;
    if (ub <= next) ++j;
  }
  return total;
}

double sliced_wasserstein(const std::vector<Tensor>& a,
                          const std::vector<Tensor>& b,
                          std::size_t n_projections, Rng& rng) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("sliced_wasserstein: empty sample set");
  if (n_projections < 1)
    throw std::invalid_argument("sliced_wasserstein: need >= 1 projection");
  const std::size_t d = a.front().size();
  for (const Tensor& x : a)
    if (x.size() != d)
      throw std::invalid_argument("sliced_wasserstein: dimension mismatch");
  for (const Tensor& x : b)
    if (x.size() != d)
      throw std::invalid_argument("sliced_wasserstein: dimension mismatch");
  double acc = 0.0;
  std::vector<double> pa(a.size()), pb(b.size());
  for (std::size_t p = 0; p < n_projections; ++p) {
    std::vector<double> dir(d);
    double n2 = 0.0;
    do {
      n2 = 0.0;
      for (double& v : dir) {
        v = rng.gaussian();
        n2 += v * v;
      }
    } while (n2 == 0.0);
    const double inv = 1.0 / std::sqrt(n2);
    for (double& v : dir) v *= inv;
    auto project = [&](const Tensor& x) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += dir[k] * x.data[k];
      return s;
    };
    for (std::size_t k = 0; k < a.size(); ++k) pa[k] = project(a[k]);
    for (std::size_t k = 0; k < b.size(); ++k) pb[k] = project(b[k]);
    acc += wasserstein1_1d(pa, pb);
  }
  return acc / static_cast<double>(n_projections);
}

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return std::string(buf);
}

void write_metrics_csv(const std::string& path,
                       const std::vector<std::string>& columns,
                       const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::binary);  // binary: LF endings everywhere
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  out << "step";
  for (const std::string& c : columns) out << "," << c;
  out << "\n";
  long prev_step = -1;
  for (const MetricRow& row : rows) {
    if (row.step <= prev_step)
      throw std::runtime_error("write_metrics_csv: steps must increase");
    prev_step = row.step;
    out << row.step;
    for (const std::string& c : columns) {
      auto it = row.values.find(c);
      if (it == row.values.end())
        throw std::runtime_error("write_metrics_csv: row " +
                                 std::to_string(row.step) +
                                 " missing column " + c);
      if (!std::isfinite(it->second))
        throw std::runtime_error("write_metrics_csv: non-finite value in " + c);
      out << "," << format_metric(it->second);
    }
    out << "\n";
  }
}

}  // namespace vardlab
