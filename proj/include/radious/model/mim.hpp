#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "radious/error.hpp"
#include "radious/num/ops.hpp"

namespace radious::model {

using num::Tensor;

struct CorruptedTokens {
  Tensor tokens;             // [N,D] with masked rows replaced
  std::vector<int> masked;   // sorted masked indices
};

// Replaces round(ratio*N) token rows with the learned mask embedding,
// sampling positions uniformly without replacement, deterministically in
// `seed`. Applied before positional embeddings so positions are retained.
inline CorruptedTokens mim_corrupt(const Tensor& tokens, double ratio, const Tensor& mask_embedding,
                                   std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) fail("parameter", "mask ratio must lie strictly in (0,1)");
  if (tokens.rank() != 2) fail("dimension", "mim_corrupt expects [N,D] tokens");
  const int n = tokens.dim(0), d = tokens.dim(1);
  if (mask_embedding.shape() != num::Shape{d})
    fail("dimension", "mask embedding must be [D]");
  const int m = static_cast<int>(std::llround(ratio * n));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> masked(order.begin(), order.begin() + m);
  std::sort(masked.begin(), masked.end());

  std::vector<num::real> out(tokens.size());
  auto tv = tokens.data();
  auto mv = mask_embedding.data();
  std::copy(tv.begin(), tv.end(), out.begin());
  for (int i : masked)
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] = mv[static_cast<std::size_t>(j)];

  std::vector<bool> is_masked(static_cast<std::size_t>(n), false);
  for (int i : masked) is_masked[static_cast<std::size_t>(i)] = true;
  auto node = num::detail::make_node(
      tokens.shape(), {&tokens, &mask_embedding},
      [is_masked, n, d](std::span<const num::real> g, const std::vector<std::span<num::real>>& gp) {
        for (int i = 0; i < n; ++i) {
          const std::size_t base = static_cast<std::size_t>(i) * d;
          if (is_masked[static_cast<std::size_t>(i)]) {
            if (!gp[1].empty())
              for (int j = 0; j < d; ++j) gp[1][static_cast<std::size_t>(j)] += g[base + j];
          } else if (!gp[0].empty()) {
            for (int j = 0; j < d; ++j) gp[0][base + j] += g[base + j];
          }
        }
      });
  CorruptedTokens result;
  result.tokens = Tensor::make(tokens.shape(), std::move(out), std::move(node));
  result.masked = std::move(masked);
  return result;
}

// Mean cross-entropy over the masked positions only; predictions at unmasked
// positions receive exactly zero gradient.
inline Tensor mim_loss(const Tensor& predictions, const std::vector<int>& targets,
                       const std::vector<int>& masked) {
  if (predictions.rank() != 2) fail("dimension", "mim_loss expects [N,K] predictions");
  if (static_cast<int>(targets.size()) != predictions.dim(0))
    fail("dimension", "one target token per position required");
  if (masked.empty()) fail("degenerate_batch", "mim_loss needs at least one masked position");
  return num::nll_selected(num::log_softmax(predictions, 1), targets, masked);
}

}  // namespace radious::model
