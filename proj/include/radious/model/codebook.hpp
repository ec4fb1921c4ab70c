#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include "radious/error.hpp"
#include "radious/num/tensor.hpp"

namespace radious::model {

// Discrete patch vocabulary: K centroids in patch-pixel space. Stands in for
// a learned tokenizer while keeping the MIM objective's structure (discrete
// targets, cross-entropy).
struct VisualCodebook {
  int dim = 0;
  std::vector<std::vector<num::real>> centroids;  // K entries of length dim

  int size() const { return static_cast<int>(centroids.size()); }
};

namespace detail {

inline double sq_dist(const std::vector<num::real>& a, std::span<const num::real> b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    d += diff * diff;
  }
  return d;
}

}  // namespace detail

// Nearest centroid by Euclidean distance; ties broken by lowest id.
inline int tokenize(std::span<const num::real> patch, const VisualCodebook& cb) {
  if (static_cast<int>(patch.size()) != cb.dim)
    fail("dimension", "patch dimension does not match codebook");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cb.size(); ++k) {
    const double d = detail::sq_dist(cb.centroids[static_cast<std::size_t>(k)], patch);
    if (d < best_d) {  // strict: earlier id wins ties
      best_d = d;
      best = k;
    }
  }
  return best;
}

// Lloyd's k-means with k-means++ seeding, deterministic in `seed`.
// `patches` is a [N, dim] matrix.
inline VisualCodebook fit_codebook(const num::Tensor& patches, int K, std::uint64_t seed,
                                   int max_iters = 50) {
  if (patches.rank() != 2) fail("dimension", "fit_codebook expects an [N,dim] patch matrix");
  const int n = patches.dim(0), dim = patches.dim(1);
  if (K < 1) fail("parameter", "K must be at least 1");
  // Distinct-patch precondition: fewer distinct patches than K cannot be
  // clustered into K nonempty cells.
  std::set<std::vector<num::real>> distinct;
  for (int i = 0; i < n && static_cast<int>(distinct.size()) < K; ++i) {
    auto row = patches.data().subspan(static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim));
    distinct.emplace(row.begin(), row.end());
  }
  if (static_cast<int>(distinct.size()) < K)
    fail("cardinality", "need at least K=" + std::to_string(K) + " distinct patches, found " +
                            std::to_string(distinct.size()));

  auto row = [&](int i) {
    return patches.data().subspan(static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim));
  };

  VisualCodebook cb;
  cb.dim = dim;
  std::mt19937_64 rng(seed);

  // k-means++: first centroid uniform, then proportional to squared distance.
  std::uniform_int_distribution<int> first(0, n - 1);
  auto push_centroid = [&](int i) {
    auto r = row(i);
    cb.centroids.emplace_back(r.begin(), r.end());
  };
  push_centroid(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n), 0.0);
  while (cb.size() < K) {
    double total = 0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : cb.centroids) best = std::min(best, detail::sq_dist(c, row(i)));
      d2[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    if (total <= 0) {
      // All remaining mass sits on existing centroids; pick any unseen patch.
      for (int i = 0; i < n; ++i)
        if (d2[static_cast<std::size_t>(i)] > 0) {
          push_centroid(i);
          break;
        }
      // Distinct-count precondition guarantees progress above.
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double draw = u(rng);
    int chosen = n - 1;
    for (int i = 0; i < n; ++i) {
      draw -= d2[static_cast<std::size_t>(i)];
      if (draw <= 0) {
        chosen = i;
        break;
      }
    }
    push_centroid(chosen);
  }

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      const int a = tokenize(row(i), cb);
      if (a != assign[static_cast<std::size_t>(i)]) {
        assign[static_cast<std::size_t>(i)] = a;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(K),
                                          std::vector<double>(static_cast<std::size_t>(dim), 0.0));
    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    for (int i = 0; i < n; ++i) {
      auto r = row(i);
      auto& s = sums[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
      for (int d = 0; d < dim; ++d) s[static_cast<std::size_t>(d)] += r[static_cast<std::size_t>(d)];
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int k = 0; k < K; ++k) {
      if (counts[static_cast<std::size_t>(k)] == 0) {
        // Re-seed an empty cell with the patch farthest from its centroid.
        int far = 0;
        double far_d = -1;
        for (int i = 0; i < n; ++i) {
          const double d = detail::sq_dist(cb.centroids[static_cast<std::size_t>(
                                               assign[static_cast<std::size_t>(i)])],
                                           row(i));
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        auto r = row(far);
        cb.centroids[static_cast<std::size_t>(k)].assign(r.begin(), r.end());
        continue;
      }
      for (int d = 0; d < dim; ++d)
        cb.centroids[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] =
            static_cast<num::real>(sums[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] /
                                   counts[static_cast<std::size_t>(k)]);
    }
  }
  return cb;
}

// Token ids for every row of a patch matrix.
inline std::vector<int> tokenize_all(const num::Tensor& patches, const VisualCodebook& cb) {
  const int n = patches.dim(0), dim = patches.dim(1);
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    ids[static_cast<std::size_t>(i)] =
        tokenize(patches.data().subspan(static_cast<std::size_t>(i) * dim,
                                        static_cast<std::size_t>(dim)),
                 cb);
  return ids;
}

}  // namespace radious::model
