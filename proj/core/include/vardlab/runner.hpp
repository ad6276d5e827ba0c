#pragma once

#include <string>

#include "vardlab/config.hpp"

namespace vardlab {

// Executes the configured task and writes metrics.csv, a config echo,
// checkpoints, and summary.json into cfg.output_dir. Throws on invalid
// configs and divergence; exceptions carry actionable messages.
void run(const RunConfig& cfg);

// run() wrapped with artifact-friendly error handling: exceptions become a
// diagnostics.txt in the output directory and a non-zero status.
int run_task(const RunConfig& cfg);

}  // namespace vardlab
