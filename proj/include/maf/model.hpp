#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "maf/llfe.hpp"
#include "maf/mlfe.hpp"
#include "maf/mode.hpp"
#include "maf/rng.hpp"
#include "maf/tensor.hpp"

namespace maf {

// Every architectural hyperparameter in one place. The feature grid is
// derived from the image size through the backbone's three stride-2 blocks,
// so it can never drift out of sync.
struct MafConfig {
  int image_h = 48;
  int image_w = 48;
  int channels = 32;    // C
  int num_maps = 2;     // N: LANets in parallel, also the learnable patch count
  int compression = 4;  // r
  double p_map = 0.6;
  double p_head = 0.4;
  int heads = 2;
  int units = 2;  // I
  int num_classes = 2;
  bool use_mlfe = true;
  bool use_llfe = true;

  int grid_h() const {
    return conv_stride2_extent(conv_stride2_extent(conv_stride2_extent(image_h)));
  }
  int grid_w() const {
    return conv_stride2_extent(conv_stride2_extent(conv_stride2_extent(image_w)));
  }

  // Throws naming the violated invariant.
  void validate() const;
};

// Three 3x3/stride-2 conv blocks, 1 -> C/4 -> C/2 -> C channels.
struct BackboneParams {
  Tensor conv1_w, conv1_b;
  Tensor conv2_w, conv2_b;
  Tensor conv3_w, conv3_b;
};

struct MafParams {
  BackboneParams backbone;
  MlfeParams mlfe;
  Tensor embed_w;  // C x C
  Tensor embed_b;  // C
  LearnablePatches patches;      // N x C
  std::vector<CoderUnit> units;  // I encoder/decoder pairs
  Tensor head_w;  // C x num_classes
  Tensor head_b;  // num_classes
};

// Every parameter tensor in a fixed, named order. The order is the contract
// for binding, optimizer state, checkpoints, and gradient sweeps.
std::vector<std::pair<std::string, Tensor*>> param_list(MafParams& params);

// Closed-form parameter count for a config; matches param_list element-wise.
std::size_t param_count(const MafConfig& config);

FeatureMap backbone_forward(Tape& tape, const Tensor& image, const BackboneParams& params);

// CxHxW -> HW x C rows (row-major over (h, w)) followed by a linear map.
Tensor embed(Tape& tape, const FeatureMap& x, const Tensor& w, const Tensor& b);

// Mean over the HW rows, then a linear head to num_classes logits.
Tensor classify(Tape& tape, const Tensor& x_out, const Tensor& w, const Tensor& b);

struct MafOutput {
  Tensor logits;             // num_classes
  AttentionStack attention;  // post-drop stack; empty when MLFE is disabled
};

MafOutput maf_forward(Tape& tape, const Tensor& image, const MafParams& params,
                      const MafConfig& config, Rng& rng, Mode mode);

// Fan-in scaled normal weights, zero biases, N(0, 0.02) patches, unit norms.
MafParams init_params(const MafConfig& config, std::uint64_t seed);

// Parameters placed on a tape as leaves, node ids aligned with param_list.
struct BoundParams {
  MafParams params;
  std::vector<int> nodes;
};

BoundParams bind_params(Tape& tape, const MafParams& source);

}  // namespace maf
