#include "maf/llfe.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace maf {

namespace {

void validate_attn(const AttentionHeadParams& params, int channels) {
  const std::size_t heads = params.w_q.size();
  if (heads == 0 || params.w_k.size() != heads || params.w_v.size() != heads) {
    throw std::invalid_argument("cross_attention: malformed head parameter lists");
  }
  if (channels % static_cast<int>(heads) != 0) {
    throw std::invalid_argument("cross_attention: heads (" + std::to_string(heads) +
                                ") must divide the channel count (" +
                                std::to_string(channels) + ")");
  }
  const int dk = channels / static_cast<int>(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    if (params.w_q[h].shape != Shape{channels, dk} ||
        params.w_k[h].shape != Shape{channels, dk} ||
        params.w_v[h].shape != Shape{channels, dk}) {
      throw std::invalid_argument("cross_attention: head " + std::to_string(h) +
                                  " projections must be " +
                                  shape_str({channels, dk}));
    }
  }
  if (params.w_o.shape != Shape{static_cast<int>(heads) * dk, channels}) {
    throw std::invalid_argument("cross_attention: output projection must be " +
                                shape_str({static_cast<int>(heads) * dk, channels}) +
                                ", got " + shape_str(params.w_o.shape));
  }
}

Tensor ffn(Tape& tape, const Tensor& x, const CoderParams& p) {
  const Tensor hidden = gelu(tape, add_bias_rows(tape, matmul(tape, x, p.ffn_w1), p.ffn_b1));
  return add_bias_rows(tape, matmul(tape, hidden, p.ffn_w2), p.ffn_b2);
}

}  // namespace

Tensor cross_attention(Tape& tape, const Tensor& q_src, const Tensor& kv_src,
                       const AttentionHeadParams& params, double p_head,
                       Rng& rng, Mode mode, CrossAttnDebug* debug) {
  if (q_src.rank() != 2 || kv_src.rank() != 2 || q_src.shape[1] != kv_src.shape[1]) {
    throw std::invalid_argument("cross_attention: feature dims disagree, " +
                                shape_str(q_src.shape) + " vs " + shape_str(kv_src.shape));
  }
  const int channels = q_src.shape[1];
  validate_attn(params, channels);
  const int heads = static_cast<int>(params.w_q.size());
  const int dk = channels / heads;

  int dropped_head = -1;
  if (mode == Mode::kTrain && rng.bernoulli(p_head)) {
    dropped_head = static_cast<int>(rng.next_below(static_cast<std::uint32_t>(heads)));
  }

  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  if (debug) {
    debug->attn.clear();
    debug->dropped_head = dropped_head;
  }
  for (int h = 0; h < heads; ++h) {
    const std::size_t hs = static_cast<std::size_t>(h);
    const Tensor q = matmul(tape, q_src, params.w_q[hs]);
    const Tensor k = matmul(tape, kv_src, params.w_k[hs]);
    const Tensor v = matmul(tape, kv_src, params.w_v[hs]);
    const Tensor scores = scale(tape, matmul(tape, q, transpose(tape, k)), inv_sqrt_dk);
    Tensor attn = softmax_rows(tape, scores);
    if (h == dropped_head) attn = scale(tape, attn, 0.0);
    if (debug) debug->attn.push_back(attn);
    head_outputs.push_back(matmul(tape, attn, v));
  }
  const Tensor merged = heads == 1 ? head_outputs.front()
                                   : concat_cols(tape, head_outputs);
  return matmul(tape, merged, params.w_o);
}

namespace {

// One pre-norm coder block: queries and keys/values are normalized by the
// first norm before attention, the FFN input by the second; the residual
// stream itself stays unnormalized.
Tensor coder_block(Tape& tape, const Tensor& q_src, const Tensor& kv_src,
                   const CoderParams& params, double p_head, Rng& rng, Mode mode) {
  const Tensor q_normed =
      layer_norm(tape, q_src, params.norm1_gamma, params.norm1_beta, kCoderEps);
  const Tensor kv_normed =
      layer_norm(tape, kv_src, params.norm1_gamma, params.norm1_beta, kCoderEps);
  const Tensor attended =
      cross_attention(tape, q_normed, kv_normed, params.attn, p_head, rng, mode);
  const Tensor u = add(tape, q_src, attended);
  const Tensor u_normed =
      layer_norm(tape, u, params.norm2_gamma, params.norm2_beta, kCoderEps);
  return add(tape, u, ffn(tape, u_normed, params));
}

}  // namespace

Tensor encoder_step(Tape& tape, const Tensor& patches, const Tensor& features,
                    const CoderParams& params, double p_head, Rng& rng, Mode mode) {
  return coder_block(tape, patches, features, params, p_head, rng, mode);
}

Tensor decoder_step(Tape& tape, const Tensor& features, const Tensor& patches,
                    const CoderParams& params, double p_head, Rng& rng, Mode mode) {
  return coder_block(tape, features, patches, params, p_head, rng, mode);
}

Tensor llfe_forward(Tape& tape, const Tensor& features, const LearnablePatches& patches,
                    const std::vector<CoderUnit>& units, double p_head, Rng& rng,
                    Mode mode) {
  if (units.empty()) {
    throw std::invalid_argument("llfe_forward: need at least one encoder/decoder unit");
  }
  Tensor l = patches;
  Tensor x = features;
  for (const CoderUnit& unit : units) {
    l = encoder_step(tape, l, x, unit.encoder, p_head, rng, mode);
    x = decoder_step(tape, x, l, unit.decoder, p_head, rng, mode);
  }
  return x;
}

}  // namespace maf
