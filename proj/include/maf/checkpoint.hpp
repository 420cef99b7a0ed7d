#pragma once

#include <string>

#include "maf/model.hpp"

namespace maf {

// Single-file checkpoint: a plain-text header carrying the config as
// key=value lines, then every parameter tensor as a named MAFT blob.
// Round trips are bit-exact.

void save_checkpoint(const std::string& path, const MafConfig& config,
                     const MafParams& params);

struct Checkpoint {
  MafConfig config;
  MafParams params;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace maf
