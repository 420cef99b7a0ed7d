#pragma once

#include <string>

#include "maf/model.hpp"
#include "maf/train.hpp"

namespace maf {

// Everything a run needs, assembled from a key=value config file.
// Unknown keys are rejected outright.
struct RunSettings {
  MafConfig model;
  TrainOptions trainer;
  bool paper_analog = false;  // switches to the 200-epoch/batch-32 recipe
  int ablation_seeds = 5;
  int ablation_epochs = 30;
  int ablation_batch = 8;
};

// `#` starts a comment; blank lines are skipped; values are bare literals.
RunSettings parse_config_text(const std::string& text);
RunSettings parse_config_file(const std::string& path);

// The settings rendered back as config text (defaults documentation).
std::string default_config_text();

}  // namespace maf
