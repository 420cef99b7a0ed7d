#pragma once

namespace maf {

// Training enables the stochastic attention dropout paths; evaluation masks
// them and never consumes randomness.
enum class Mode { kTrain, kEval };

}  // namespace maf
