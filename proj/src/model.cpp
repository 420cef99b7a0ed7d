#include "maf/model.hpp"

#include <cmath>
#include <stdexcept>

namespace maf {

void MafConfig::validate() const {
  const auto fail = [](const std::string& invariant) {
    throw std::invalid_argument("MafConfig: " + invariant);
  };
  if (image_h < 8 || image_w < 8) fail("image size must be at least 8x8");
  if (channels < 4 || channels % 4 != 0) {
    fail("backbone needs channels divisible by 4, got " + std::to_string(channels));
  }
  if (num_maps < 1) fail("N must be >= 1, got " + std::to_string(num_maps));
  if (units < 1) fail("I must be >= 1, got " + std::to_string(units));
  if (heads < 1 || channels % heads != 0) {
    fail("heads must divide channels, got heads=" + std::to_string(heads) +
         " channels=" + std::to_string(channels));
  }
  if (compression < 1 || channels % compression != 0) {
    fail("compression rate must divide channels, got r=" + std::to_string(compression) +
         " channels=" + std::to_string(channels));
  }
  if (p_map < 0.0 || p_map > 1.0) fail("p_map must lie in [0,1]");
  if (p_head < 0.0 || p_head > 1.0) fail("p_head must lie in [0,1]");
  if (num_classes < 2) fail("num_classes must be >= 2");
}

std::vector<std::pair<std::string, Tensor*>> param_list(MafParams& p) {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("backbone.conv1.w", &p.backbone.conv1_w);
  out.emplace_back("backbone.conv1.b", &p.backbone.conv1_b);
  out.emplace_back("backbone.conv2.w", &p.backbone.conv2_w);
  out.emplace_back("backbone.conv2.b", &p.backbone.conv2_b);
  out.emplace_back("backbone.conv3.w", &p.backbone.conv3_w);
  out.emplace_back("backbone.conv3.b", &p.backbone.conv3_b);
  for (std::size_t i = 0; i < p.mlfe.lanets.size(); ++i) {
    const std::string base = "mlfe.lanet" + std::to_string(i);
    out.emplace_back(base + ".w1", &p.mlfe.lanets[i].w1);
    out.emplace_back(base + ".b1", &p.mlfe.lanets[i].b1);
    out.emplace_back(base + ".w2", &p.mlfe.lanets[i].w2);
    out.emplace_back(base + ".b2", &p.mlfe.lanets[i].b2);
  }
  out.emplace_back("embed.w", &p.embed_w);
  out.emplace_back("embed.b", &p.embed_b);
  if (!p.units.empty()) {
    out.emplace_back("llfe.patches", &p.patches);
  }
  for (std::size_t i = 0; i < p.units.size(); ++i) {
    const std::string base = "llfe.unit" + std::to_string(i);
    const auto coder = [&out](const std::string& prefix, CoderParams& c) {
      for (std::size_t h = 0; h < c.attn.w_q.size(); ++h) {
        const std::string hb = prefix + ".head" + std::to_string(h);
        out.emplace_back(hb + ".wq", &c.attn.w_q[h]);
        out.emplace_back(hb + ".wk", &c.attn.w_k[h]);
        out.emplace_back(hb + ".wv", &c.attn.w_v[h]);
      }
      out.emplace_back(prefix + ".wo", &c.attn.w_o);
      out.emplace_back(prefix + ".norm1.gamma", &c.norm1_gamma);
      out.emplace_back(prefix + ".norm1.beta", &c.norm1_beta);
      out.emplace_back(prefix + ".norm2.gamma", &c.norm2_gamma);
      out.emplace_back(prefix + ".norm2.beta", &c.norm2_beta);
      out.emplace_back(prefix + ".ffn.w1", &c.ffn_w1);
      out.emplace_back(prefix + ".ffn.b1", &c.ffn_b1);
      out.emplace_back(prefix + ".ffn.w2", &c.ffn_w2);
      out.emplace_back(prefix + ".ffn.b2", &c.ffn_b2);
    };
    coder(base + ".enc", p.units[i].encoder);
    coder(base + ".dec", p.units[i].decoder);
  }
  out.emplace_back("head.w", &p.head_w);
  out.emplace_back("head.b", &p.head_b);
  return out;
}

std::size_t param_count(const MafConfig& config) {
  const std::size_t c = static_cast<std::size_t>(config.channels);
  const std::size_t c4 = c / 4, c2 = c / 2;
  std::size_t total = 0;
  total += c4 * 1 * 9 + c4;   // conv1
  total += c2 * c4 * 9 + c2;  // conv2
  total += c * c2 * 9 + c;    // conv3
  if (config.use_mlfe) {
    const std::size_t sq = c / static_cast<std::size_t>(config.compression);
    total += static_cast<std::size_t>(config.num_maps) * (sq * c + sq + sq + 1);
  }
  total += c * c + c;  // embed
  if (config.use_llfe) {
    const std::size_t dk = c / static_cast<std::size_t>(config.heads);
    const std::size_t per_coder = static_cast<std::size_t>(config.heads) * 3 * c * dk  // qkv
                                  + static_cast<std::size_t>(config.heads) * dk * c    // wo
                                  + 4 * c                                              // norms
                                  + c * 4 * c + 4 * c + 4 * c * c + c;                 // ffn
    total += static_cast<std::size_t>(config.num_maps) * c;  // patches
    total += static_cast<std::size_t>(config.units) * 2 * per_coder;
  }
  total += c * static_cast<std::size_t>(config.num_classes) +
           static_cast<std::size_t>(config.num_classes);  // head
  return total;
}

FeatureMap backbone_forward(Tape& tape, const Tensor& image, const BackboneParams& params) {
  const Tensor b1 = relu(tape, conv3x3_s2(tape, image, params.conv1_w, params.conv1_b));
  const Tensor b2 = relu(tape, conv3x3_s2(tape, b1, params.conv2_w, params.conv2_b));
  return relu(tape, conv3x3_s2(tape, b2, params.conv3_w, params.conv3_b));
}

Tensor embed(Tape& tape, const FeatureMap& x, const Tensor& w, const Tensor& b) {
  return add_bias_rows(tape, matmul(tape, to_rows(tape, x), w), b);
}

Tensor classify(Tape& tape, const Tensor& x_out, const Tensor& w, const Tensor& b) {
  const Tensor pooled = mean_rows(tape, x_out);
  const Tensor logits = add_bias_rows(tape, matmul(tape, pooled, w), b);
  return reshape(tape, logits, {logits.shape[1]});
}

MafOutput maf_forward(Tape& tape, const Tensor& image, const MafParams& params,
                      const MafConfig& config, Rng& rng, Mode mode) {
  if (image.shape != Shape{1, config.image_h, config.image_w}) {
    throw std::invalid_argument("maf_forward: image must be " +
                                shape_str({1, config.image_h, config.image_w}) +
                                ", got " + shape_str(image.shape));
  }
  MafOutput out;
  FeatureMap features = backbone_forward(tape, image, params.backbone);
  if (config.use_mlfe) {
    MlfeParams gated = params.mlfe;
    gated.p_map = config.p_map;
    auto [fused, stack] = mlfe_forward(tape, features, gated, rng, mode);
    features = fused;
    out.attention = stack;
  }
  Tensor rows = embed(tape, features, params.embed_w, params.embed_b);
  if (config.use_llfe) {
    rows = llfe_forward(tape, rows, params.patches, params.units, config.p_head, rng, mode);
  }
  out.logits = classify(tape, rows, params.head_w, params.head_b);
  return out;
}

MafParams init_params(const MafConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const int c = config.channels;
  const int c4 = c / 4, c2 = c / 2;
  const auto he = [&rng](Shape shape, int fan_in) {
    return Tensor::random_normal(rng, std::move(shape), std::sqrt(2.0 / fan_in));
  };

  MafParams p;
  p.backbone.conv1_w = he({c4, 1, 3, 3}, 9);
  p.backbone.conv1_b = Tensor::zeros({c4});
  p.backbone.conv2_w = he({c2, c4, 3, 3}, c4 * 9);
  p.backbone.conv2_b = Tensor::zeros({c2});
  p.backbone.conv3_w = he({c, c2, 3, 3}, c2 * 9);
  p.backbone.conv3_b = Tensor::zeros({c});

  if (config.use_mlfe) {
    const int sq = c / config.compression;
    for (int i = 0; i < config.num_maps; ++i) {
      LaNetParams lanet;
      lanet.w1 = he({sq, c}, c);
      lanet.b1 = Tensor::zeros({sq});
      lanet.w2 = he({1, sq}, sq);
      lanet.b2 = Tensor::zeros({1});
      p.mlfe.lanets.push_back(std::move(lanet));
    }
    p.mlfe.p_map = config.p_map;
  }

  p.embed_w = he({c, c}, c);
  p.embed_b = Tensor::zeros({c});

  if (config.use_llfe) {
    p.patches = Tensor::random_normal(rng, {config.num_maps, c}, 0.02);
    const int dk = c / config.heads;
    // Residual branch outputs (w_o, ffn_w2) start at a tenth of the fan-in
    // scale so each coder begins near identity; the plain SGD recipe cannot
    // escape the equal-logits saddle otherwise.
    constexpr double kBranchScale = 0.1;
    const auto make_coder = [&]() {
      CoderParams coder;
      for (int h = 0; h < config.heads; ++h) {
        coder.attn.w_q.push_back(he({c, dk}, c));
        coder.attn.w_k.push_back(he({c, dk}, c));
        coder.attn.w_v.push_back(he({c, dk}, c));
      }
      coder.attn.w_o = he({config.heads * dk, c}, config.heads * dk);
      for (double& v : coder.attn.w_o.data) v *= kBranchScale;
      coder.norm1_gamma = Tensor::full({c}, 1.0);
      coder.norm1_beta = Tensor::zeros({c});
      coder.norm2_gamma = Tensor::full({c}, 1.0);
      coder.norm2_beta = Tensor::zeros({c});
      coder.ffn_w1 = he({c, 4 * c}, c);
      coder.ffn_b1 = Tensor::zeros({4 * c});
      coder.ffn_w2 = he({4 * c, c}, 4 * c);
      for (double& v : coder.ffn_w2.data) v *= kBranchScale;
      coder.ffn_b2 = Tensor::zeros({c});
      return coder;
    };
    for (int i = 0; i < config.units; ++i) {
      CoderUnit unit;
      unit.encoder = make_coder();
      unit.decoder = make_coder();
      p.units.push_back(std::move(unit));
    }
  }

  p.head_w = he({c, config.num_classes}, c);
  p.head_b = Tensor::zeros({config.num_classes});
  return p;
}

BoundParams bind_params(Tape& tape, const MafParams& source) {
  BoundParams bound;
  bound.params = source;
  for (auto& [name, tensor] : param_list(bound.params)) {
    tensor->requires_grad = true;
    *tensor = tape.leaf(*tensor);
    bound.nodes.push_back(tensor->node);
  }
  return bound;
}

}  // namespace maf
