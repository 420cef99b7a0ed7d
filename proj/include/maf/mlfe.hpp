#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "maf/mode.hpp"
#include "maf/rng.hpp"
#include "maf/tensor.hpp"

namespace maf {

// One LANet: two 1x1 convolutions that squeeze C channels down to C/r and
// then to a single sigmoid attention map.
struct LaNetParams {
  Tensor w1;  // (C/r) x C
  Tensor b1;  // C/r
  Tensor w2;  // 1 x (C/r)
  Tensor b2;  // 1
};

// N spatial attention maps stacked channel-wise, plus which one (if any)
// the dropout layer zeroed this pass.
struct AttentionStack {
  Tensor maps;  // N x H x W
  std::optional<int> dropped_index;
};

struct MlfeParams {
  std::vector<LaNetParams> lanets;
  double p_map = 0.0;
};

// conv1x1 -> ReLU -> conv1x1 -> sigmoid; every output value lands in (0,1).
Tensor lanet_forward(Tape& tape, const FeatureMap& x, const LaNetParams& params);

// In train mode a single Bernoulli(p_map) draw decides whether to zero one
// map chosen uniformly at random; call order is one next_double() then, only
// when dropping, one next_below(N). Eval mode returns the stack untouched
// and consumes no randomness. Surviving maps are never rescaled.
AttentionStack attention_drop(Tape& tape, const AttentionStack& stack,
                              double p_map, Rng& rng, Mode mode);

// Channel max-pool over the stack, then element-wise gating of the features.
FeatureMap fuse_and_gate(Tape& tape, const FeatureMap& x, const AttentionStack& stack);

// Full module: N LANets -> stack -> attention_drop -> fuse_and_gate.
// Also returns the post-drop stack for visualization.
std::pair<FeatureMap, AttentionStack> mlfe_forward(Tape& tape, const FeatureMap& x,
                                                   const MlfeParams& params,
                                                   Rng& rng, Mode mode);

}  // namespace maf
