#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "radious/error.hpp"
#include "radious/num/ops.hpp"
#include "radious/num/tape.hpp"

namespace radious::model {

using num::GradientTape;
using num::Tensor;

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // [D,D] each
  Tensor bq, bk, bv, bo;  // [D]
};

inline AttentionWeights init_attention(GradientTape& tape, const std::string& prefix, int dim,
                                       std::mt19937_64& rng, num::real scale = 0.02) {
  AttentionWeights w;
  w.wq = tape.parameter(prefix + ".wq", num::mul_scalar(Tensor::randn({dim, dim}, rng), scale));
  w.wk = tape.parameter(prefix + ".wk", num::mul_scalar(Tensor::randn({dim, dim}, rng), scale));
  w.wv = tape.parameter(prefix + ".wv", num::mul_scalar(Tensor::randn({dim, dim}, rng), scale));
  w.wo = tape.parameter(prefix + ".wo", num::mul_scalar(Tensor::randn({dim, dim}, rng), scale));
  w.bq = tape.parameter(prefix + ".bq", Tensor::zeros({dim}));
  w.bk = tape.parameter(prefix + ".bk", Tensor::zeros({dim}));
  w.bv = tape.parameter(prefix + ".bv", Tensor::zeros({dim}));
  w.bo = tape.parameter(prefix + ".bo", Tensor::zeros({dim}));
  return w;
}

inline AttentionWeights fetch_attention(const GradientTape& tape, const std::string& prefix) {
  return {tape.get(prefix + ".wq"), tape.get(prefix + ".wk"), tape.get(prefix + ".wv"),
          tape.get(prefix + ".wo"), tape.get(prefix + ".bq"), tape.get(prefix + ".bk"),
          tape.get(prefix + ".bv"), tape.get(prefix + ".bo")};
}

// Multi-head attention with queries from `xq` [Nq,D] and keys/values from
// `xkv` [Nkv,D]. `attn_mask`, when given, holds Nq*Nkv row-major flags
// (true = attend) shared across heads. Per-head attention matrices can be
// captured for inspection via `capture`.
inline Tensor multi_head_attention(const Tensor& xq, const Tensor& xkv, const AttentionWeights& w,
                                   int heads, const std::vector<std::uint8_t>* attn_mask = nullptr,
                                   std::vector<Tensor>* capture = nullptr) {
  const int dim = xq.dim(1);
  if (dim % heads != 0) fail("parameter", "embed dim must be divisible by head count");
  const int head_dim = dim / heads;
  Tensor q = num::add_bias(num::matmul(xq, w.wq), w.bq);
  Tensor k = num::add_bias(num::matmul(xkv, w.wk), w.bk);
  Tensor v = num::add_bias(num::matmul(xkv, w.wv), w.bv);
  const num::real inv_sqrt = static_cast<num::real>(1.0 / std::sqrt(static_cast<double>(head_dim)));
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = num::slice_cols(q, h * head_dim, (h + 1) * head_dim);
    Tensor kh = num::slice_cols(k, h * head_dim, (h + 1) * head_dim);
    Tensor vh = num::slice_cols(v, h * head_dim, (h + 1) * head_dim);
    Tensor scores = num::mul_scalar(num::matmul(qh, num::transpose(kh)), inv_sqrt);
    Tensor attn = attn_mask ? num::softmax_masked(scores, *attn_mask, 1) : num::softmax(scores, 1);
    if (capture) capture->push_back(attn);
    head_outputs.push_back(num::matmul(attn, vh));
  }
  Tensor merged = heads == 1 ? head_outputs[0] : num::concat_cols(head_outputs);
  return num::add_bias(num::matmul(merged, w.wo), w.bo);
}

}  // namespace radious::model
