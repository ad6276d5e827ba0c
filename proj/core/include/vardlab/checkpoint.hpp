#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "vardlab/nn.hpp"

namespace vardlab {

// Checkpoint = <base>.json manifest + <base>.bin flat little-endian float64
// blob, parameters in stable enumeration order.
void save_checkpoint(const std::string& base, nlohmann::json manifest,
                     const std::vector<const Param*>& params);

// Verifies the manifest's shapes against `params`, loads the blob into
// them, and returns the manifest.
nlohmann::json load_checkpoint(const std::string& base,
                               const std::vector<Param*>& params);

bool checkpoint_exists(const std::string& base);

}  // namespace vardlab
