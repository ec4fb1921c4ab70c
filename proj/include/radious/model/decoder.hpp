#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "radious/error.hpp"
#include "radious/io/png.hpp"
#include "radious/model/attention.hpp"
#include "radious/model/backbone.hpp"
#include "radious/num/ops.hpp"
#include "radious/num/tape.hpp"

namespace radious::model {

struct DecoderConfig {
  int num_queries = 20;
  int num_layers = 3;      // one scale per layer, coarsest first
  int num_classes = 33;    // foreground classes; "no object" is appended
  double mask_threshold = 0.5;
  int heads = 4;
  int mlp_ratio = 4;
  double background_floor = 0.25;
  bool masked_attention_enabled = true;  // ablation hook: all-true masks when off

  void validate(int num_scales) const {
    if (num_queries < 1) fail("parameter", "need at least one query");
    if (num_classes < 1) fail("parameter", "need at least one class");
    if (num_scales < 1) fail("parameter", "need at least one scale");
    if (num_layers % num_scales != 0)
      fail("parameter", "num_layers must be a multiple of the scale count");
  }
};

struct SegmentationOutput {
  Tensor class_logits;  // [Nq, C+1]
  Tensor mask_logits;   // [Nq, H4, W4]
};

struct PixelDecoded {
  Tensor per_pixel;            // [D, H4, W4]
  std::vector<Tensor> memory;  // merged maps, same extents/order as the input scales
};

// ---------------------------------------------------------------------------
// Weights

inline void init_decoder(GradientTape& tape, const DecoderConfig& cfg, int dim,
                         int num_scales, std::mt19937_64& rng) {
  cfg.validate(num_scales);
  for (int s = 0; s < num_scales; ++s) {
    tape.parameter("pix.lat" + std::to_string(s) + ".k",
                   num::mul_scalar(Tensor::randn({dim, dim, 1, 1}, rng), 0.05));
    tape.parameter("pix.lat" + std::to_string(s) + ".b", Tensor::zeros({dim}));
  }
  tape.parameter("pix.out.k", num::mul_scalar(Tensor::randn({dim, dim, 3, 3}, rng), 0.05));
  tape.parameter("pix.out.b", Tensor::zeros({dim}));
  tape.parameter("dec.query", num::mul_scalar(Tensor::randn({cfg.num_queries, dim}, rng), 0.02));
  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    tape.parameter(p + ".ln1.gamma", Tensor::full({dim}, 1));
    tape.parameter(p + ".ln1.beta", Tensor::zeros({dim}));
    init_attention(tape, p + ".cross", dim, rng);
    tape.parameter(p + ".ln2.gamma", Tensor::full({dim}, 1));
    tape.parameter(p + ".ln2.beta", Tensor::zeros({dim}));
    init_attention(tape, p + ".self", dim, rng);
    tape.parameter(p + ".ln3.gamma", Tensor::full({dim}, 1));
    tape.parameter(p + ".ln3.beta", Tensor::zeros({dim}));
    const int hidden = dim * cfg.mlp_ratio;
    tape.parameter(p + ".mlp.w1", num::mul_scalar(Tensor::randn({dim, hidden}, rng), 0.02));
    tape.parameter(p + ".mlp.b1", Tensor::zeros({hidden}));
    tape.parameter(p + ".mlp.w2", num::mul_scalar(Tensor::randn({hidden, dim}, rng), 0.02));
    tape.parameter(p + ".mlp.b2", Tensor::zeros({dim}));
  }
  tape.parameter("dec.outnorm.gamma", Tensor::full({dim}, 1));
  tape.parameter("dec.outnorm.beta", Tensor::zeros({dim}));
  tape.parameter("dec.cls.w", num::mul_scalar(Tensor::randn({dim, cfg.num_classes + 1}, rng), 0.02));
  tape.parameter("dec.cls.b", Tensor::zeros({cfg.num_classes + 1}));
  tape.parameter("dec.mask.w1", num::mul_scalar(Tensor::randn({dim, dim}, rng), 0.02));
  tape.parameter("dec.mask.b1", Tensor::zeros({dim}));
  tape.parameter("dec.mask.w2", num::mul_scalar(Tensor::randn({dim, dim}, rng), 0.02));
  tape.parameter("dec.mask.b2", Tensor::zeros({dim}));
}

// ---------------------------------------------------------------------------
// Pixel decoder: top-down pathway ending 2x above the finest scale.

inline PixelDecoded pixel_decode(const MultiScaleFeatures& ms, const GradientTape& tape) {
  if (ms.maps.empty()) fail("dimension", "pixel decoder needs at least one scale");
  const int scales = static_cast<int>(ms.maps.size());
  auto lateral = [&](int s) {
    Tensor b = tape.get("pix.lat" + std::to_string(s) + ".b");
    return num::conv2d(ms.maps[static_cast<std::size_t>(s)],
                       tape.get("pix.lat" + std::to_string(s) + ".k"), &b, 1, 0);
  };
  // Start at the coarsest scale and merge upward.
  Tensor y = lateral(scales - 1);
  PixelDecoded out;
  out.memory.assign(static_cast<std::size_t>(scales), Tensor());
  out.memory[static_cast<std::size_t>(scales - 1)] = y;
  for (int s = scales - 2; s >= 0; --s) {
    Tensor finer = lateral(s);
    Tensor up = num::bilinear_resize(y, finer.dim(1), finer.dim(2));
    y = num::add(finer, up);
    out.memory[static_cast<std::size_t>(s)] = y;
  }
  Tensor up4 = num::bilinear_resize(y, y.dim(1) * 2, y.dim(2) * 2);
  Tensor b = tape.get("pix.out.b");
  out.per_pixel = num::conv2d(up4, tape.get("pix.out.k"), &b, 1, 1);
  return out;
}

// ---------------------------------------------------------------------------
// Masked attention

// Queries whose mask row is entirely false are reset to all-true before the
// softmax — a degenerate early prediction must not poison the layer.
inline std::vector<std::uint8_t> rescue_empty_rows(std::vector<std::uint8_t> mask, int rows,
                                                   int cols) {
  for (int r = 0; r < rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * cols;
    bool any = false;
    for (int c = 0; c < cols && !any; ++c) any = mask[base + c] != 0;
    if (!any) std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(base), cols, std::uint8_t(1));
  }
  return mask;
}

inline Tensor masked_attention(const Tensor& queries, const Tensor& memory,
                               const std::vector<std::uint8_t>& attn_mask,
                               const AttentionWeights& w, int heads,
                               std::vector<Tensor>* capture = nullptr) {
  const int nq = queries.dim(0), m = memory.dim(0);
  if (attn_mask.size() != static_cast<std::size_t>(nq) * m)
    fail("dimension", "attention mask must be num_queries x memory_size");
  std::vector<std::uint8_t> rescued = rescue_empty_rows(attn_mask, nq, m);
  const bool all_true =
      std::all_of(rescued.begin(), rescued.end(), [](std::uint8_t v) { return v != 0; });
  // The all-true path goes through the identical unmasked kernel, so it is
  // bitwise-equal to plain cross-attention.
  return multi_head_attention(queries, memory, w, heads, all_true ? nullptr : &rescued, capture);
}

// Boolean attend-mask for a target extent: bilinearly resize the mask logits
// (queries as channels), squash, threshold.
inline std::vector<std::uint8_t> attention_mask_from_logits(const Tensor& mask_logits, int h, int w,
                                                            double threshold) {
  num::NoGradGuard guard;
  Tensor resized = num::bilinear_resize(mask_logits.detached(), h, w);
  std::vector<std::uint8_t> out(resized.size());
  auto v = resized.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = num::sigmoid_value(v[i]) > threshold ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Query decoder

namespace detail {

inline SegmentationOutput predict_heads(const Tensor& x, const Tensor& per_pixel_tokens, int h,
                                        int w, const GradientTape& tape) {
  Tensor n = num::layer_norm(x, tape.get("dec.outnorm.gamma"), tape.get("dec.outnorm.beta"));
  SegmentationOutput out;
  out.class_logits = num::add_bias(num::matmul(n, tape.get("dec.cls.w")), tape.get("dec.cls.b"));
  Tensor e = num::gelu(num::add_bias(num::matmul(n, tape.get("dec.mask.w1")), tape.get("dec.mask.b1")));
  e = num::add_bias(num::matmul(e, tape.get("dec.mask.w2")), tape.get("dec.mask.b2"));
  Tensor logits2d = num::matmul(e, num::transpose(per_pixel_tokens));  // [Nq, HW]
  out.mask_logits = logits2d.reshape({x.dim(0), h, w});
  return out;
}

}  // namespace detail

// Learned queries refined one scale per layer, coarsest first; a prediction
// is emitted from the initial queries and after every layer.
inline std::vector<SegmentationOutput> decoder_forward(const PixelDecoded& pix,
                                                       const DecoderConfig& cfg,
                                                       const GradientTape& tape,
                                                       std::vector<std::vector<std::uint8_t>>* mask_capture = nullptr) {
  cfg.validate(static_cast<int>(pix.memory.size()));
  const int scales = static_cast<int>(pix.memory.size());
  const int h4 = pix.per_pixel.dim(1), w4 = pix.per_pixel.dim(2);
  Tensor per_pixel_tokens = num::map_to_tokens(pix.per_pixel);
  Tensor x = tape.get("dec.query");

  std::vector<SegmentationOutput> outputs;
  outputs.reserve(static_cast<std::size_t>(cfg.num_layers) + 1);
  outputs.push_back(detail::predict_heads(x, per_pixel_tokens, h4, w4, tape));

  for (int l = 0; l < cfg.num_layers; ++l) {
    const int scale = scales - 1 - (l % scales);  // coarsest first
    const Tensor& mem_map = pix.memory[static_cast<std::size_t>(scale)];
    Tensor mem_tokens = num::map_to_tokens(mem_map);
    std::vector<std::uint8_t> attn_mask;
    if (cfg.masked_attention_enabled) {
      attn_mask = attention_mask_from_logits(outputs.back().mask_logits, mem_map.dim(1),
                                             mem_map.dim(2), cfg.mask_threshold);
    } else {
      attn_mask.assign(static_cast<std::size_t>(cfg.num_queries) * mem_tokens.dim(0), 1);
    }
    attn_mask = rescue_empty_rows(std::move(attn_mask), cfg.num_queries, mem_tokens.dim(0));
    if (mask_capture) mask_capture->push_back(attn_mask);
    const std::string p = "dec." + std::to_string(l);
    Tensor n1 = num::layer_norm(x, tape.get(p + ".ln1.gamma"), tape.get(p + ".ln1.beta"));
    x = num::add(x, masked_attention(n1, mem_tokens, attn_mask,
                                     fetch_attention(tape, p + ".cross"), cfg.heads));
    Tensor n2 = num::layer_norm(x, tape.get(p + ".ln2.gamma"), tape.get(p + ".ln2.beta"));
    x = num::add(x, multi_head_attention(n2, n2, fetch_attention(tape, p + ".self"), cfg.heads));
    Tensor n3 = num::layer_norm(x, tape.get(p + ".ln3.gamma"), tape.get(p + ".ln3.beta"));
    Tensor hmid = num::gelu(num::add_bias(num::matmul(n3, tape.get(p + ".mlp.w1")),
                                          tape.get(p + ".mlp.b1")));
    x = num::add(x, num::add_bias(num::matmul(hmid, tape.get(p + ".mlp.w2")),
                                  tape.get(p + ".mlp.b2")));
    outputs.push_back(detail::predict_heads(x, per_pixel_tokens, h4, w4, tape));
  }
  return outputs;
}

// ---------------------------------------------------------------------------
// Semantic inference

// score(c, x) = sum_q p_q(c) * sigmoid(mask_q(x)) over foreground classes;
// per-pixel argmax with a background floor, computed at 1/4 resolution and
// nearest-upsampled to the requested extent. Foreground class index c maps to
// palette id c+1.
inline io::GrayImage semantic_inference(const SegmentationOutput& out, int full_h, int full_w,
                                        const DecoderConfig& cfg) {
  num::NoGradGuard guard;
  const int nq = out.class_logits.dim(0);
  const int c_total = out.class_logits.dim(1);  // C + 1
  const int c_fg = c_total - 1;
  if (c_fg != cfg.num_classes) fail("dimension", "class head width does not match config");
  if (c_fg + 1 > 256) fail("label", "palette ids must fit one byte");
  const int h4 = out.mask_logits.dim(1), w4 = out.mask_logits.dim(2);
  Tensor probs = num::softmax(out.class_logits.detached(), 1);
  Tensor fg = num::slice_cols(probs, 0, c_fg);                       // [Nq, C]
  Tensor sig = num::sigmoid(out.mask_logits.detached().reshape({nq, h4 * w4}));  // [Nq, HW]
  Tensor scores = num::matmul(num::transpose(fg), sig);              // [C, HW]

  io::GrayImage quarter;
  quarter.width = w4;
  quarter.height = h4;
  quarter.pixels.assign(static_cast<std::size_t>(h4) * w4, 0);
  auto sv = scores.data();
  const std::size_t hw = static_cast<std::size_t>(h4) * w4;
  for (std::size_t px = 0; px < hw; ++px) {
    int best = -1;
    num::real best_score = 0;
    for (int c = 0; c < c_fg; ++c) {
      const num::real s = sv[static_cast<std::size_t>(c) * hw + px];
      if (best < 0 || s > best_score) {
        best = c;
        best_score = s;
      }
    }
    quarter.pixels[px] =
        (best >= 0 && best_score >= static_cast<num::real>(cfg.background_floor))
            ? static_cast<std::uint8_t>(best + 1)
            : 0;
  }

  if (full_h == h4 && full_w == w4) return quarter;
  io::GrayImage full;
  full.width = full_w;
  full.height = full_h;
  full.pixels.resize(static_cast<std::size_t>(full_h) * full_w);
  for (int y = 0; y < full_h; ++y) {
    const int sy = std::min(h4 - 1, static_cast<int>(std::floor((y + 0.5) * static_cast<double>(h4) / full_h)));
    for (int x = 0; x < full_w; ++x) {
      const int sx = std::min(w4 - 1, static_cast<int>(std::floor((x + 0.5) * static_cast<double>(w4) / full_w)));
      full.at(y, x) = quarter.at(sy, sx);
    }
  }
  return full;
}

}  // namespace radious::model
