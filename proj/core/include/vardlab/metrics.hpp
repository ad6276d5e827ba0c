#pragma once

#include <map>
#include <string>
#include <vector>

#include "vardlab/rng.hpp"
#include "vardlab/tensor.hpp"

namespace vardlab {

// Average over random unit projections of the 1-D Wasserstein-1 distance
// between the projected empirical distributions. Symmetric, >= 0; sample
// sets may differ in size.
double sliced_wasserstein(const std::vector<Tensor>& a,
                          const std::vector<Tensor>& b,
                          std::size_t n_projections, Rng& rng);

// 1-D W1 between two empirical distributions (possibly unequal sizes),
// computed by a merged quantile sweep.
double wasserstein1_1d(std::vector<double> a, std::vector<double> b);

struct MetricRow {
  long step = 0;
  // insertion order is not preserved by std::map; columns are emitted in the
  // order given to write_metrics_csv instead
  std::map<std::string, double> values;
};

// Writes "step,<columns...>" with LF endings and deterministic %.10g
// formatting. Throws if a row is missing a column, a value is non-finite,
// or steps are not strictly increasing.
void write_metrics_csv(const std::string& path,
                       const std::vector<std::string>& columns,
                       const std::vector<MetricRow>& rows);

std::string format_metric(double v);

}  // namespace vardlab
