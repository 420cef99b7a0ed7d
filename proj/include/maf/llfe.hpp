#pragma once

#include <utility>
#include <vector>

#include "maf/mode.hpp"
#include "maf/rng.hpp"
#include "maf/tensor.hpp"

namespace maf {

// Trainable N x C patch matrix; row n is the n-th learnable local feature.
using LearnablePatches = Tensor;

// Per-head projection matrices plus the shared output projection.
// d_k = d_v = C / heads throughout.
struct AttentionHeadParams {
  std::vector<Tensor> w_q;  // heads x (C x d_k)
  std::vector<Tensor> w_k;  // heads x (C x d_k)
  std::vector<Tensor> w_v;  // heads x (C x d_v)
  Tensor w_o;               // (heads*d_v) x C
};

// One Encoder or Decoder block: cross-attention and a GELU feed-forward of
// hidden width 4C, each wrapped in a normalized residual layer. Norms sit on
// the branch inputs (pre-norm); the residual stream itself stays raw, which
// is what lets the plain SGD recipe train this stack from scratch.
struct CoderParams {
  AttentionHeadParams attn;
  Tensor norm1_gamma, norm1_beta;
  Tensor norm2_gamma, norm2_beta;
  Tensor ffn_w1;  // C x 4C
  Tensor ffn_b1;  // 4C
  Tensor ffn_w2;  // 4C x C
  Tensor ffn_b2;  // C
};

struct CoderUnit {
  CoderParams encoder;
  CoderParams decoder;
};

constexpr double kCoderEps = 1e-5;

// Optional insight into a cross_attention call, for tests and diagnostics.
struct CrossAttnDebug {
  std::vector<Tensor> attn;  // per head, post-softmax (post-drop)
  int dropped_head = -1;
};

// Multi-head cross-attention: queries from q_src, keys/values from kv_src,
// A = softmax(QK^T/sqrt(d_k)) per head. In train mode one Bernoulli(p_head)
// draw decides whether to zero a uniformly chosen head's A (call order:
// next_double, then next_below(heads) only when dropping). No rescaling.
Tensor cross_attention(Tape& tape, const Tensor& q_src, const Tensor& kv_src,
                       const AttentionHeadParams& params, double p_head,
                       Rng& rng, Mode mode, CrossAttnDebug* debug = nullptr);

// u = L_i + attn(norm1(L_i), norm1(X_i)); L_{i+1} = u + ffn(norm2(u)).
Tensor encoder_step(Tape& tape, const Tensor& patches, const Tensor& features,
                    const CoderParams& params, double p_head, Rng& rng, Mode mode);

// Same block with the roles swapped: X queries, updated L as keys/values.
Tensor decoder_step(Tape& tape, const Tensor& features, const Tensor& patches,
                    const CoderParams& params, double p_head, Rng& rng, Mode mode);

// Alternates encoder and decoder I times and returns the final feature rows.
Tensor llfe_forward(Tape& tape, const Tensor& features, const LearnablePatches& patches,
                    const std::vector<CoderUnit>& units, double p_head, Rng& rng,
                    Mode mode);

}  // namespace maf
