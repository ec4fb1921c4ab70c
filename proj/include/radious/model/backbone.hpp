#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "radious/error.hpp"
#include "radious/model/attention.hpp"
#include "radious/num/ops.hpp"
#include "radious/num/tape.hpp"

namespace radious::model {

using num::GradientTape;
using num::Tensor;

struct BackboneConfig {
  int depth = 4;
  int embed_dim = 64;
  int heads = 4;
  int patch_size = 16;
  std::vector<int> interaction_points = {0, 2};
  std::vector<int> scales = {8, 16, 32};  // spatial reductions of the prior maps
  int mlp_ratio = 4;
  int adapter_heads = 1;
  int spm_channels = 16;  // stem width before it reaches embed_dim
  int pos_grid_h = 8;     // base grid the positional table is learned on
  int pos_grid_w = 8;
  int mim_vocab = 64;
  double mask_ratio = 0.4;

  void validate() const {
    if (depth < 0) fail("parameter", "depth must be nonnegative");
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
      fail("parameter", "embed_dim must be positive and divisible by heads");
    if (patch_size <= 0) fail("parameter", "patch_size must be positive");
    for (std::size_t i = 0; i < interaction_points.size(); ++i) {
      const int p = interaction_points[i];
      if (p < 0 || p >= depth)
        fail("parameter", "interaction point " + std::to_string(p) + " outside [0, depth)");
      if (i > 0 && interaction_points[i] <= interaction_points[i - 1])
        fail("parameter", "interaction points must be sorted and unique");
    }
    if (scales.empty()) fail("parameter", "at least one prior scale required");
  }
};

// One feature map per configured scale, channel dim = embed_dim, each stored
// as a rank-3 tensor [C, H/s, W/s].
struct MultiScaleFeatures {
  std::vector<Tensor> maps;
};

// ---------------------------------------------------------------------------
// Patch embedding

// Cuts a [1,H,W] image into non-overlapping p*p patches, row-major over the
// patch grid; output is a value-only [N, p*p] matrix.
inline Tensor extract_patches(const Tensor& image, int patch) {
  if (image.rank() != 3 || image.dim(0) != 1)
    fail("dimension", "expected a [1,H,W] image, got " + num::shape_str(image.shape()));
  const int h = image.dim(1), w = image.dim(2);
  if (h % patch != 0 || w % patch != 0)
    fail("geometry", "image extents " + std::to_string(w) + "x" + std::to_string(h) +
                         " are not divisible by patch size " + std::to_string(patch) +
                         "; resize the input first");
  const int gh = h / patch, gw = w / patch;
  std::vector<num::real> out(static_cast<std::size_t>(gh) * gw * patch * patch);
  auto src = image.data();
  std::size_t at = 0;
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px)
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx)
          out[at++] = src[static_cast<std::size_t>(py * patch + dy) * w + px * patch + dx];
  return Tensor::from({gh * gw, patch * patch}, std::move(out));
}

inline void init_patch_embed(GradientTape& tape, const BackboneConfig& cfg, std::mt19937_64& rng) {
  const int pp = cfg.patch_size * cfg.patch_size;
  tape.parameter("patch.proj", num::mul_scalar(Tensor::randn({pp, cfg.embed_dim}, rng), 0.02));
  tape.parameter("patch.bias", Tensor::zeros({cfg.embed_dim}));
  tape.parameter("patch.pos", num::mul_scalar(
                                  Tensor::randn({cfg.pos_grid_h * cfg.pos_grid_w, cfg.embed_dim}, rng), 0.02));
}

// Learned positional table at the base grid, bilinearly interpolated when the
// incoming grid differs (identity when it matches).
inline Tensor positional_embedding(const GradientTape& tape, const BackboneConfig& cfg, int gh,
                                   int gw) {
  Tensor pos = tape.get("patch.pos");
  if (gh == cfg.pos_grid_h && gw == cfg.pos_grid_w) return pos;
  Tensor as_map = num::tokens_to_map(pos, cfg.pos_grid_h, cfg.pos_grid_w);
  return num::map_to_tokens(num::bilinear_resize(as_map, gh, gw));
}

// Linear projection of flattened patches plus positional embeddings.
inline Tensor patch_embed(const Tensor& image, const BackboneConfig& cfg, const GradientTape& tape) {
  Tensor patches = extract_patches(image, cfg.patch_size);
  const int gh = image.dim(1) / cfg.patch_size, gw = image.dim(2) / cfg.patch_size;
  Tensor projected = num::add_bias(num::matmul(patches, tape.get("patch.proj")), tape.get("patch.bias"));
  return num::add(projected, positional_embedding(tape, cfg, gh, gw));
}

// Projection without positional embeddings, for the MIM path where masking
// must happen before positions are added.
inline Tensor patch_embed_raw(const Tensor& image, const BackboneConfig& cfg,
                              const GradientTape& tape) {
  Tensor patches = extract_patches(image, cfg.patch_size);
  return num::add_bias(num::matmul(patches, tape.get("patch.proj")), tape.get("patch.bias"));
}

// ---------------------------------------------------------------------------
// Transformer encoder

inline void init_encoder_block(GradientTape& tape, const std::string& prefix, int dim,
                               int mlp_ratio, std::mt19937_64& rng) {
  tape.parameter(prefix + ".ln1.gamma", Tensor::full({dim}, 1));
  tape.parameter(prefix + ".ln1.beta", Tensor::zeros({dim}));
  init_attention(tape, prefix + ".attn", dim, rng);
  tape.parameter(prefix + ".ln2.gamma", Tensor::full({dim}, 1));
  tape.parameter(prefix + ".ln2.beta", Tensor::zeros({dim}));
  const int hidden = dim * mlp_ratio;
  tape.parameter(prefix + ".mlp.w1", num::mul_scalar(Tensor::randn({dim, hidden}, rng), 0.02));
  tape.parameter(prefix + ".mlp.b1", Tensor::zeros({hidden}));
  tape.parameter(prefix + ".mlp.w2", num::mul_scalar(Tensor::randn({hidden, dim}, rng), 0.02));
  tape.parameter(prefix + ".mlp.b2", Tensor::zeros({dim}));
}

inline void init_encoder(GradientTape& tape, const BackboneConfig& cfg, std::mt19937_64& rng) {
  for (int i = 0; i < cfg.depth; ++i)
    init_encoder_block(tape, "enc." + std::to_string(i), cfg.embed_dim, cfg.mlp_ratio, rng);
}

// Standard pre-norm block: x += attn(ln(x)); x += mlp(ln(x)).
inline Tensor encoder_block(const Tensor& x, const std::string& prefix, const GradientTape& tape,
                            int heads, std::vector<Tensor>* attn_capture = nullptr) {
  Tensor normed =
      num::layer_norm(x, tape.get(prefix + ".ln1.gamma"), tape.get(prefix + ".ln1.beta"));
  Tensor attended = multi_head_attention(normed, normed, fetch_attention(tape, prefix + ".attn"),
                                         heads, nullptr, attn_capture);
  Tensor x1 = num::add(x, attended);
  Tensor normed2 =
      num::layer_norm(x1, tape.get(prefix + ".ln2.gamma"), tape.get(prefix + ".ln2.beta"));
  Tensor h = num::gelu(num::add_bias(num::matmul(normed2, tape.get(prefix + ".mlp.w1")),
                                     tape.get(prefix + ".mlp.b1")));
  Tensor out = num::add_bias(num::matmul(h, tape.get(prefix + ".mlp.w2")),
                             tape.get(prefix + ".mlp.b2"));
  return num::add(x1, out);
}

// Runs every block and returns the state after each one (empty for depth 0).
inline std::vector<Tensor> transformer_encode(const Tensor& tokens, const BackboneConfig& cfg,
                                              const GradientTape& tape,
                                              std::vector<Tensor>* attn_capture = nullptr) {
  tokens.check_finite("transformer_encode input");
  std::vector<Tensor> states;
  states.reserve(static_cast<std::size_t>(cfg.depth));
  Tensor x = tokens;
  for (int i = 0; i < cfg.depth; ++i) {
    x = encoder_block(x, "enc." + std::to_string(i), tape, cfg.heads, attn_capture);
    states.push_back(x);
  }
  return states;
}

// ---------------------------------------------------------------------------
// Spatial prior module: a strided conv stem emitting one map per scale.

inline void init_spm(GradientTape& tape, const BackboneConfig& cfg, std::mt19937_64& rng) {
  const int c = cfg.spm_channels, d = cfg.embed_dim;
  auto conv = [&](const std::string& name, int out_c, int in_c) {
    tape.parameter(name + ".k", num::mul_scalar(Tensor::randn({out_c, in_c, 3, 3}, rng), 0.05));
    tape.parameter(name + ".b", Tensor::zeros({out_c}));
  };
  conv("spm.conv1", c, 1);       // 1/2
  conv("spm.conv2", 2 * c, c);   // 1/4
  conv("spm.conv3", d, 2 * c);   // 1/8 -> first prior map
  conv("spm.conv4", d, d);       // 1/16
  conv("spm.conv5", d, d);       // 1/32
}

inline MultiScaleFeatures spm_forward(const Tensor& image, const BackboneConfig& cfg,
                                      const GradientTape& tape) {
  if (image.rank() != 3) fail("dimension", "expected [C,H,W] image");
  const int max_reduction = *std::max_element(cfg.scales.begin(), cfg.scales.end());
  if (image.dim(1) % max_reduction != 0 || image.dim(2) % max_reduction != 0)
    fail("geometry", "image extents must be divisible by " + std::to_string(max_reduction));
  auto conv = [&](const Tensor& x, const std::string& name) {
    Tensor b = tape.get(name + ".b");
    return num::conv2d(x, tape.get(name + ".k"), &b, 2, 1);
  };
  Tensor h = num::gelu(conv(image, "spm.conv1"));
  h = num::gelu(conv(h, "spm.conv2"));
  Tensor s8 = conv(h, "spm.conv3");
  Tensor s16 = conv(num::gelu(s8), "spm.conv4");
  Tensor s32 = conv(num::gelu(s16), "spm.conv5");
  MultiScaleFeatures out;
  out.maps = {s8, s16, s32};
  return out;
}

// ---------------------------------------------------------------------------
// Injector / extractor

// Flattens every scale to tokens and stacks them row-wise: [sum(Hs*Ws), D].
inline Tensor flatten_scales(const MultiScaleFeatures& f) {
  std::vector<Tensor> token_blocks;
  token_blocks.reserve(f.maps.size());
  for (const Tensor& m : f.maps) token_blocks.push_back(num::map_to_tokens(m));
  return token_blocks.size() == 1 ? token_blocks[0] : num::concat_rows(token_blocks);
}

inline MultiScaleFeatures unflatten_scales(const Tensor& tokens, const MultiScaleFeatures& like) {
  MultiScaleFeatures out;
  int row = 0;
  for (const Tensor& m : like.maps) {
    const int n = m.dim(1) * m.dim(2);
    out.maps.push_back(num::tokens_to_map(num::slice_rows(tokens, row, row + n), m.dim(1), m.dim(2)));
    row += n;
  }
  return out;
}

inline void init_interactions(GradientTape& tape, const BackboneConfig& cfg, std::mt19937_64& rng) {
  for (std::size_t j = 0; j < cfg.interaction_points.size(); ++j) {
    const std::string tag = std::to_string(j);
    init_attention(tape, "inj." + tag, cfg.embed_dim, rng);
    tape.parameter("inj." + tag + ".gate", Tensor::zeros({1}));
    init_attention(tape, "ext." + tag, cfg.embed_dim, rng);
  }
}

// Spatial feature injector: ViT tokens query the flattened priors; the result
// enters through a learned gate that starts at zero, so a freshly initialized
// adapter leaves the token stream bit-identical.
inline Tensor inject(const Tensor& vit_tokens, const MultiScaleFeatures& priors,
                     const GradientTape& tape, int interaction, int heads) {
  const std::string tag = std::to_string(interaction);
  Tensor prior_tokens = flatten_scales(priors);
  Tensor attended = multi_head_attention(vit_tokens, prior_tokens,
                                         fetch_attention(tape, "inj." + tag), heads);
  // A zero gate multiplies the finite attention output to exact zeros, so the
  // residual add leaves the token values bit-identical.
  Tensor gated = num::mul_gate(attended, tape.get("inj." + tag + ".gate"));
  return num::add(vit_tokens, gated);
}

// Multi-scale feature extractor: priors query the ViT tokens, residual.
inline MultiScaleFeatures extract(const Tensor& vit_tokens, const MultiScaleFeatures& priors,
                                  const GradientTape& tape, int interaction, int heads) {
  const std::string tag = std::to_string(interaction);
  Tensor prior_tokens = flatten_scales(priors);
  Tensor attended = multi_head_attention(prior_tokens, vit_tokens,
                                         fetch_attention(tape, "ext." + tag), heads);
  return unflatten_scales(num::add(prior_tokens, attended), priors);
}

// ---------------------------------------------------------------------------
// Full backbone

inline void init_backbone(GradientTape& tape, const BackboneConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  init_patch_embed(tape, cfg, rng);
  init_encoder(tape, cfg, rng);
  init_spm(tape, cfg, rng);
  init_interactions(tape, cfg, rng);
}

// patch_embed -> blocks interleaved with inject (before each interaction
// point's group) and extract (after the group) -> final priors.
inline MultiScaleFeatures backbone_forward(const Tensor& image, const BackboneConfig& cfg,
                                           const GradientTape& tape) {
  cfg.validate();
  Tensor x = patch_embed(image, cfg, tape);
  MultiScaleFeatures priors = spm_forward(image, cfg, tape);
  const auto& points = cfg.interaction_points;
  std::size_t group = 0;
  for (int block = 0; block < cfg.depth; ++block) {
    if (group < points.size() && block == points[group])
      x = inject(x, priors, tape, static_cast<int>(group), cfg.adapter_heads);
    x = encoder_block(x, "enc." + std::to_string(block), tape, cfg.heads);
    const bool group_ends = group < points.size() &&
                            (group + 1 == points.size() ? block == cfg.depth - 1
                                                        : block == points[group + 1] - 1);
    if (group_ends) {
      priors = extract(x, priors, tape, static_cast<int>(group), cfg.adapter_heads);
      ++group;
    }
  }
  return priors;
}

}  // namespace radious::model
