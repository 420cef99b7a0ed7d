#include "maf/mlfe.hpp"

#include <stdexcept>
#include <string>

namespace maf {

Tensor lanet_forward(Tape& tape, const FeatureMap& x, const LaNetParams& params) {
  const Tensor squeezed = relu(tape, conv1x1(tape, x, params.w1, params.b1));
  return sigmoid(tape, conv1x1(tape, squeezed, params.w2, params.b2));
}

AttentionStack attention_drop(Tape& tape, const AttentionStack& stack,
                              double p_map, Rng& rng, Mode mode) {
  if (stack.maps.rank() != 3 || stack.maps.shape[0] < 1) {
    throw std::invalid_argument("attention_drop: stack must hold at least one map, got " +
                                shape_str(stack.maps.shape));
  }
  if (p_map < 0.0 || p_map > 1.0) {
    throw std::invalid_argument("attention_drop: p_map must lie in [0,1]");
  }
  if (mode == Mode::kEval) return stack;
  if (!rng.bernoulli(p_map)) return stack;
  const int n = stack.maps.shape[0];
  const int idx = static_cast<int>(rng.next_below(static_cast<std::uint32_t>(n)));
  AttentionStack out;
  out.maps = zero_channel(tape, stack.maps, idx);
  out.dropped_index = idx;
  return out;
}

FeatureMap fuse_and_gate(Tape& tape, const FeatureMap& x, const AttentionStack& stack) {
  const Tensor fused = channel_max(tape, stack.maps);
  return spatial_gate(tape, x, fused);
}

std::pair<FeatureMap, AttentionStack> mlfe_forward(Tape& tape, const FeatureMap& x,
                                                   const MlfeParams& params,
                                                   Rng& rng, Mode mode) {
  if (params.lanets.empty()) {
    throw std::invalid_argument("mlfe_forward: need at least one LANet");
  }
  std::vector<Tensor> maps;
  maps.reserve(params.lanets.size());
  for (const LaNetParams& lanet : params.lanets) {
    maps.push_back(lanet_forward(tape, x, lanet));
  }
  AttentionStack stack;
  stack.maps = stack_maps(tape, maps);
  stack = attention_drop(tape, stack, params.p_map, rng, mode);
  return {fuse_and_gate(tape, x, stack), stack};
}

}  // namespace maf
