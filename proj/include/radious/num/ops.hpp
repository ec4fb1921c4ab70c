#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "radious/num/tensor.hpp"

namespace radious::num {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

namespace detail {

using EMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EMat>;
using MutMap = Eigen::Map<EMat>;

using Vjp = std::function<void(std::span<const real>, const std::vector<std::span<real>>&)>;

// Attaches a node when any input participates in gradient tracking. Inputs
// without a node get a sink placeholder so every vjp sees its parents at
// fixed positions; sinks receive an empty gradient span and kernels skip
// the corresponding work.
inline NodePtr make_node_vec(const Shape& shape, const std::vector<const Tensor*>& inputs, Vjp vjp) {
  if (!grad_mode()) return nullptr;
  bool tracked = false;
  for (const Tensor* t : inputs)
    if (t->node()) tracked = true;
  if (!tracked) return nullptr;
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->parents.reserve(inputs.size());
  for (const Tensor* t : inputs) {
    if (t->node()) {
      node->parents.push_back(t->node());
    } else {
      auto sink = std::make_shared<Node>();
      sink->shape = t->shape();
      sink->leaf = true;
      sink->sink = true;
      node->parents.push_back(std::move(sink));
    }
  }
  node->vjp = std::move(vjp);
  return node;
}

inline NodePtr make_node(const Shape& shape, std::initializer_list<const Tensor*> inputs, Vjp vjp) {
  return make_node_vec(shape, std::vector<const Tensor*>(inputs), std::move(vjp));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail("dimension", std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()) + " differ");
}

// Splits a shape at `axis` into [outer, n, inner] so lane loops can run over
// any axis of any rank.
struct AxisLanes {
  std::size_t outer, n, inner;
};

inline AxisLanes lanes(const Shape& shape, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    fail("dimension", std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                          shape_str(shape));
  AxisLanes l{1, static_cast<std::size_t>(shape[axis]), 1};
  for (int i = 0; i < axis; ++i) l.outer *= static_cast<std::size_t>(shape[i]);
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i)
    l.inner *= static_cast<std::size_t>(shape[i]);
  return l;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<real> out(a.size());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto node = detail::make_node(a.shape(), {&a, &b},
                                [](std::span<const real> g, const std::vector<std::span<real>>& gp) {
                                  if (!gp[0].empty())
                                    for (std::size_t i = 0; i < g.size(); ++i) gp[0][i] += g[i];
                                  if (!gp[1].empty())
                                    for (std::size_t i = 0; i < g.size(); ++i) gp[1][i] += g[i];
                                });
  return Tensor::make(a.shape(), std::move(out), std::move(node));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<real> out(a.size());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  auto node = detail::make_node(a.shape(), {&a, &b},
                                [](std::span<const real> g, const std::vector<std::span<real>>& gp) {
                                  if (!gp[0].empty())
                                    for (std::size_t i = 0; i < g.size(); ++i) gp[0][i] += g[i];
                                  if (!gp[1].empty())
                                    for (std::size_t i = 0; i < g.size(); ++i) gp[1][i] -= g[i];
                                });
  return Tensor::make(a.shape(), std::move(out), std::move(node));
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<real> out(a.size());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto node = detail::make_node(
      a.shape(), {&a, &b},
      [as = a.storage(), bs = b.storage()](std::span<const real> g,
                                           const std::vector<std::span<real>>& gp) {
        if (!gp[0].empty())
          for (std::size_t i = 0; i < g.size(); ++i) gp[0][i] += g[i] * (*bs)[i];
        if (!gp[1].empty())
          for (std::size_t i = 0; i < g.size(); ++i) gp[1][i] += g[i] * (*as)[i];
      });
  return Tensor::make(a.shape(), std::move(out), std::move(node));
}

inline Tensor mul_scalar(const Tensor& a, real s) {
  std::vector<real> out(a.size());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  auto node = detail::make_node(a.shape(), {&a},
                                [s](std::span<const real> g, const std::vector<std::span<real>>& gp) {
                                  if (!gp[0].empty())
                                    for (std::size_t i = 0; i < g.size(); ++i) gp[0][i] += g[i] * s;
                                });
  return Tensor::make(a.shape(), std::move(out), std::move(node));
}

// x scaled by a learnable one-element tensor (a gate). Gradient reaches both
// the gated values and the gate itself.
inline Tensor mul_gate(const Tensor& a, const Tensor& gate) {
  if (gate.size() != 1) fail("dimension", "gate must hold exactly one element");
  const real s = gate[0];
  std::vector<real> out(a.size());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  Tensor a_kept = a;  // keep values alive for the backward pass
  auto node = detail::make_node(
      a.shape(), {&a, &gate},
      [s, a_kept](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        if (!gp[0].empty())
          for (std::size_t i = 0; i < g.size(); ++i) gp[0][i] += g[i] * s;
        if (!gp[1].empty()) {
          real acc = 0;
          auto av2 = a_kept.data();
          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av2[i];
          gp[1][0] += acc;
        }
      });
  return Tensor::make(a.shape(), std::move(out), std::move(node));
}

inline Tensor add_scalar(const Tensor& a, real s) {
  std::vector<real> out(a.size());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  auto node = detail::make_node(a.shape(), {&a},
                                [](std::span<const real> g, const std::vector<std::span<real>>& gp) {
                                  if (!gp[0].empty())
                                    for (std::size_t i = 0; i < g.size(); ++i) gp[0][i] += g[i];
                                });
  return Tensor::make(a.shape(), std::move(out), std::move(node));
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, real(-1)); }

// x[..., D] + b[D], broadcast over all leading axes.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() < 1 || b.rank() != 1 || x.dim(x.rank() - 1) != b.dim(0))
    fail("dimension", "add_bias: bias " + shape_str(b.shape()) + " does not match last axis of " +
                          shape_str(x.shape()));
  const std::size_t d = static_cast<std::size_t>(b.dim(0));
  const std::size_t rows = x.size() / d;
  std::vector<real> out(x.size());
  auto xv = x.data(), bv = b.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] + bv[j];
  auto node = detail::make_node(
      x.shape(), {&x, &b},
      [rows, d](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        if (!gp[0].empty())
          for (std::size_t i = 0; i < g.size(); ++i) gp[0][i] += g[i];
        if (!gp[1].empty())
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gp[1][j] += g[r * d + j];
      });
  return Tensor::make(x.shape(), std::move(out), std::move(node));
}

inline Tensor gelu(const Tensor& x) {
  std::vector<real> out(x.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = real(0.5) * xv[i] * (real(1) + std::erf(xv[i] * real(kInvSqrt2)));
  auto node = detail::make_node(
      x.shape(), {&x},
      [xs = x.storage()](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        if (gp[0].empty()) return;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const real v = (*xs)[i];
          const real phi = std::exp(real(-0.5) * v * v) * real(kInvSqrt2Pi);
          const real cdf = real(0.5) * (real(1) + std::erf(v * real(kInvSqrt2)));
          gp[0][i] += g[i] * (cdf + v * phi);
        }
      });
  return Tensor::make(x.shape(), std::move(out), std::move(node));
}

inline real sigmoid_value(real z) {
  if (z >= 0) return real(1) / (real(1) + std::exp(-z));
  const real e = std::exp(z);
  return e / (real(1) + e);
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<real> out(x.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(xv[i]);
  auto ys = std::make_shared<std::vector<real>>(out);
  auto node = detail::make_node(
      x.shape(), {&x},
      [ys](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        if (gp[0].empty()) return;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const real y = (*ys)[i];
          gp[0][i] += g[i] * y * (real(1) - y);
        }
      });
  return Tensor::make(x.shape(), std::move(out), std::move(node));
}

inline Tensor sum(const Tensor& x) {
  real acc = 0;
  for (real v : x.data()) acc += v;
  auto node = detail::make_node(Shape{1}, {&x},
                                [](std::span<const real> g, const std::vector<std::span<real>>& gp) {
                                  if (gp[0].empty()) return;
                                  for (auto& gi : gp[0]) gi += g[0];
                                });
  return Tensor::make({1}, {acc}, std::move(node));
}

inline Tensor mean(const Tensor& x) {
  if (x.size() == 0) fail("dimension", "mean of an empty tensor");
  return mul_scalar(sum(x), real(1) / static_cast<real>(x.size()));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    fail("dimension",
         "matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<real> out(static_cast<std::size_t>(m) * n);
  {
    detail::ConstMap am(a.data().data(), m, k), bm(b.data().data(), k, n);
    detail::MutMap om(out.data(), m, n);
    om.noalias() = am * bm;
  }
  auto node = detail::make_node(
      Shape{m, n}, {&a, &b},
      [as = a.storage(), bs = b.storage(), m, k, n](std::span<const real> g,
                                                    const std::vector<std::span<real>>& gp) {
        detail::ConstMap gm(g.data(), m, n);
        if (!gp[0].empty()) {
          detail::ConstMap bm(bs->data(), k, n);
          detail::MutMap gam(gp[0].data(), m, k);
          gam.noalias() += gm * bm.transpose();
        }
        if (!gp[1].empty()) {
          detail::ConstMap am(as->data(), m, k);
          detail::MutMap gbm(gp[1].data(), k, n);
          gbm.noalias() += am.transpose() * gm;
        }
      });
  return Tensor::make({m, n}, std::move(out), std::move(node));
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) fail("dimension", "transpose expects a matrix, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  std::vector<real> out(a.size());
  auto av = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
  auto node = detail::make_node(
      Shape{n, m}, {&a},
      [m, n](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        if (gp[0].empty()) return;
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < m; ++i)
            gp[0][static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
      });
  return Tensor::make({n, m}, std::move(out), std::move(node));
}

inline Tensor slice_cols(const Tensor& x, int c0, int c1) {
  if (x.rank() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
    fail("dimension", "slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                          ") for " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1), w = c1 - c0;
  std::vector<real> out(static_cast<std::size_t>(m) * w);
  auto xv = x.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j)
      out[static_cast<std::size_t>(i) * w + j] = xv[static_cast<std::size_t>(i) * n + c0 + j];
  auto node = detail::make_node(
      Shape{m, w}, {&x},
      [m, n, w, c0](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        if (gp[0].empty()) return;
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            gp[0][static_cast<std::size_t>(i) * n + c0 + j] += g[static_cast<std::size_t>(i) * w + j];
      });
  return Tensor::make({m, w}, std::move(out), std::move(node));
}

inline Tensor slice_rows(const Tensor& x, int r0, int r1) {
  if (x.rank() != 2 || r0 < 0 || r1 > x.dim(0) || r0 >= r1)
    fail("dimension", "slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                          ") for " + shape_str(x.shape()));
  const int n = x.dim(1), h = r1 - r0;
  std::vector<real> out(static_cast<std::size_t>(h) * n);
  auto xv = x.data();
  std::copy(xv.begin() + static_cast<std::size_t>(r0) * n,
            xv.begin() + static_cast<std::size_t>(r1) * n, out.begin());
  auto node = detail::make_node(
      Shape{h, n}, {&x},
      [n, r0](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        if (gp[0].empty()) return;
        const std::size_t off = static_cast<std::size_t>(r0) * n;
        for (std::size_t i = 0; i < g.size(); ++i) gp[0][off + i] += g[i];
      });
  return Tensor::make({h, n}, std::move(out), std::move(node));
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("dimension", "concat_cols of an empty list");
  const int m = parts[0].dim(0);
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m) fail("dimension", "concat_cols: row counts differ");
    total += p.dim(1);
  }
  std::vector<real> out(static_cast<std::size_t>(m) * total);
  std::vector<int> widths;
  int off = 0;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    auto pv = p.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        out[static_cast<std::size_t>(i) * total + off + j] = pv[static_cast<std::size_t>(i) * w + j];
    widths.push_back(w);
    off += w;
  }
  std::vector<const Tensor*> inputs;
  for (const Tensor& p : parts) inputs.push_back(&p);
  auto node = detail::make_node_vec(
      {m, total}, inputs,
      [m, total, widths](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        int off = 0;
        for (std::size_t pi = 0; pi < widths.size(); ++pi) {
          const int w = widths[pi];
          if (!gp[pi].empty())
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < w; ++j)
                gp[pi][static_cast<std::size_t>(i) * w + j] +=
                    g[static_cast<std::size_t>(i) * total + off + j];
          off += w;
        }
      });
  return Tensor::make({m, total}, std::move(out), std::move(node));
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("dimension", "concat_rows of an empty list");
  const int n = parts[0].dim(1);
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(1) != n) fail("dimension", "concat_rows: column counts differ");
    total += p.dim(0);
  }
  std::vector<real> out;
  out.reserve(static_cast<std::size_t>(total) * n);
  std::vector<std::size_t> sizes;
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.size());
  }
  std::vector<const Tensor*> inputs;
  for (const Tensor& p : parts) inputs.push_back(&p);
  auto node = detail::make_node_vec(
      {total, n}, inputs,
      [sizes](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < sizes.size(); ++pi) {
          if (!gp[pi].empty())
            for (std::size_t i = 0; i < sizes[pi]; ++i) gp[pi][i] += g[off + i];
          off += sizes[pi];
        }
      });
  return Tensor::make({total, n}, std::move(out), std::move(node));
}

namespace detail {

// Shared kernel for softmax and its masked variant. An empty mask means every
// position is allowed; with a mask, disallowed outputs are exactly zero and
// the max-subtraction and normalization run over the allowed set only. The
// all-true-mask path executes the identical arithmetic as the unmasked path.
inline std::vector<real> softmax_kernel(std::span<const real> x, const std::uint8_t* mask,
                                        const AxisLanes& l) {
  std::vector<real> out(x.size(), real(0));
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.n * l.inner + in;
      real mx = -std::numeric_limits<real>::infinity();
      for (std::size_t j = 0; j < l.n; ++j) {
        const std::size_t idx = base + j * l.inner;
        if (mask && !mask[idx]) continue;
        mx = std::max(mx, x[idx]);
      }
      if (mx == -std::numeric_limits<real>::infinity())
        fail("degenerate_mask", "softmax lane with no allowed position");
      real denom = 0;
      for (std::size_t j = 0; j < l.n; ++j) {
        const std::size_t idx = base + j * l.inner;
        if (mask && !mask[idx]) continue;
        const real e = std::exp(x[idx] - mx);
        out[idx] = e;
        denom += e;
      }
      for (std::size_t j = 0; j < l.n; ++j) {
        const std::size_t idx = base + j * l.inner;
        if (mask && !mask[idx]) continue;
        out[idx] /= denom;
      }
    }
  }
  return out;
}

inline Vjp softmax_vjp(std::shared_ptr<std::vector<real>> y, AxisLanes l) {
  return [y = std::move(y), l](std::span<const real> g, const std::vector<std::span<real>>& gp) {
    if (gp[0].empty()) return;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.n * l.inner + in;
        real dot = 0;
        for (std::size_t j = 0; j < l.n; ++j) {
          const std::size_t idx = base + j * l.inner;
          dot += g[idx] * (*y)[idx];
        }
        for (std::size_t j = 0; j < l.n; ++j) {
          const std::size_t idx = base + j * l.inner;
          gp[0][idx] += (*y)[idx] * (g[idx] - dot);
        }
      }
    }
  };
}

}  // namespace detail

inline Tensor softmax(const Tensor& x, int axis) {
  auto l = detail::lanes(x.shape(), axis, "softmax");
  auto out = detail::softmax_kernel(x.data(), nullptr, l);
  auto ys = std::make_shared<std::vector<real>>(out);
  auto node = detail::make_node(x.shape(), {&x}, detail::softmax_vjp(ys, l));
  return Tensor::make(x.shape(), std::move(out), std::move(node));
}

// mask is row-major over x's shape, nonzero = allowed. Lanes with no allowed
// position are rejected; callers that can see such lanes reset them first.
inline Tensor softmax_masked(const Tensor& x, const std::vector<std::uint8_t>& mask, int axis) {
  if (mask.size() != x.size()) fail("dimension", "softmax_masked: mask size does not match tensor");
  auto l = detail::lanes(x.shape(), axis, "softmax_masked");
  auto out = detail::softmax_kernel(x.data(), mask.data(), l);
  auto ys = std::make_shared<std::vector<real>>(out);
  auto node = detail::make_node(x.shape(), {&x}, detail::softmax_vjp(ys, l));
  return Tensor::make(x.shape(), std::move(out), std::move(node));
}

inline Tensor log_softmax(const Tensor& x, int axis) {
  auto l = detail::lanes(x.shape(), axis, "log_softmax");
  auto xv = x.data();
  std::vector<real> out(x.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.n * l.inner + in;
      real mx = -std::numeric_limits<real>::infinity();
      for (std::size_t j = 0; j < l.n; ++j) mx = std::max(mx, xv[base + j * l.inner]);
      real acc = 0;
      for (std::size_t j = 0; j < l.n; ++j) acc += std::exp(xv[base + j * l.inner] - mx);
      const real lse = mx + std::log(acc);
      for (std::size_t j = 0; j < l.n; ++j) {
        const std::size_t idx = base + j * l.inner;
        out[idx] = xv[idx] - lse;
      }
    }
  }
  auto ys = std::make_shared<std::vector<real>>(out);
  auto node = detail::make_node(
      x.shape(), {&x},
      [ys, l](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        if (gp[0].empty()) return;
        for (std::size_t o = 0; o < l.outer; ++o) {
          for (std::size_t in = 0; in < l.inner; ++in) {
            const std::size_t base = o * l.n * l.inner + in;
            real s = 0;
            for (std::size_t j = 0; j < l.n; ++j) s += g[base + j * l.inner];
            for (std::size_t j = 0; j < l.n; ++j) {
              const std::size_t idx = base + j * l.inner;
              gp[0][idx] += g[idx] - std::exp((*ys)[idx]) * s;
            }
          }
        }
      });
  return Tensor::make(x.shape(), std::move(out), std::move(node));
}

// Normalizes over the last axis; gamma and beta match that axis. eps sits
// inside the square root.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         real eps = real(1e-5)) {
  if (x.rank() < 1) fail("dimension", "layer_norm needs at least rank 1");
  const int d = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    fail("dimension", "layer_norm: gamma/beta must have shape [" + std::to_string(d) + "]");
  if (!(eps > 0)) fail("parameter", "layer_norm: eps must be positive");
  const std::size_t dd = static_cast<std::size_t>(d);
  const std::size_t rows = x.size() / dd;
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<real> out(x.size());
  auto xhat = std::make_shared<std::vector<real>>(x.size());
  auto inv_sigma = std::make_shared<std::vector<real>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const real* row = xv.data() + r * dd;
    real mu = 0;
    for (std::size_t j = 0; j < dd; ++j) mu += row[j];
    mu /= static_cast<real>(dd);
    real var = 0;
    for (std::size_t j = 0; j < dd; ++j) {
      const real c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<real>(dd);
    const real inv = real(1) / std::sqrt(var + eps);
    (*inv_sigma)[r] = inv;
    for (std::size_t j = 0; j < dd; ++j) {
      const real h = (row[j] - mu) * inv;
      (*xhat)[r * dd + j] = h;
      out[r * dd + j] = gv[j] * h + bv[j];
    }
  }
  auto node = detail::make_node(
      x.shape(), {&x, &gamma, &beta},
      [xhat, inv_sigma, gs = gamma.storage(), rows, dd](std::span<const real> g,
                                                        const std::vector<std::span<real>>& gp) {
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t off = r * dd;
          if (!gp[0].empty()) {
            real sum1 = 0, sum2 = 0;
            for (std::size_t j = 0; j < dd; ++j) {
              const real gy = g[off + j] * (*gs)[j];
              sum1 += gy;
              sum2 += gy * (*xhat)[off + j];
            }
            const real inv = (*inv_sigma)[r];
            const real n = static_cast<real>(dd);
            for (std::size_t j = 0; j < dd; ++j) {
              const real gy = g[off + j] * (*gs)[j];
              gp[0][off + j] += inv * (gy - sum1 / n - (*xhat)[off + j] * sum2 / n);
            }
          }
          if (!gp[1].empty())
            for (std::size_t j = 0; j < dd; ++j) gp[1][j] += g[off + j] * (*xhat)[off + j];
          if (!gp[2].empty())
            for (std::size_t j = 0; j < dd; ++j) gp[2][j] += g[off + j];
        }
      });
  return Tensor::make(x.shape(), std::move(out), std::move(node));
}

namespace detail {

struct ConvGeometry {
  int cin, h, w, cout, kh, kw, stride, pad, oh, ow;
};

inline ConvGeometry conv_geometry(const Tensor& x, const Tensor& k, int stride, int pad) {
  if (x.rank() != 3 || k.rank() != 4)
    fail("dimension", "conv2d expects input [C,H,W] and kernels [O,C,kh,kw]");
  ConvGeometry g{};
  g.cin = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.cout = k.dim(0);
  g.kh = k.dim(2);
  g.kw = k.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (k.dim(1) != g.cin)
    fail("dimension", "conv2d: kernel channel count " + std::to_string(k.dim(1)) +
                          " does not match input channels " + std::to_string(g.cin));
  if (stride < 1 || pad < 0) fail("parameter", "conv2d: stride must be >=1 and pad >=0");
  if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad)
    fail("dimension", "conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                          " larger than padded input " + std::to_string(g.h + 2 * pad) + "x" +
                          std::to_string(g.w + 2 * pad));
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

inline std::vector<real> im2col(std::span<const real> x, const ConvGeometry& g) {
  const std::size_t cols = static_cast<std::size_t>(g.oh) * g.ow;
  std::vector<real> m(static_cast<std::size_t>(g.cin) * g.kh * g.kw * cols, real(0));
  for (int c = 0; c < g.cin; ++c) {
    for (int u = 0; u < g.kh; ++u) {
      for (int v = 0; v < g.kw; ++v) {
        const std::size_t row = (static_cast<std::size_t>(c) * g.kh + u) * g.kw + v;
        real* dst = m.data() + row * cols;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride + u - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride + v - g.pad;
            if (ix < 0 || ix >= g.w) continue;
            dst[static_cast<std::size_t>(oy) * g.ow + ox] =
                x[(static_cast<std::size_t>(c) * g.h + iy) * g.w + ix];
          }
        }
      }
    }
  }
  return m;
}

inline void col2im_accumulate(std::span<const real> cols_grad, const ConvGeometry& g,
                              std::span<real> gx) {
  const std::size_t cols = static_cast<std::size_t>(g.oh) * g.ow;
  for (int c = 0; c < g.cin; ++c) {
    for (int u = 0; u < g.kh; ++u) {
      for (int v = 0; v < g.kw; ++v) {
        const std::size_t row = (static_cast<std::size_t>(c) * g.kh + u) * g.kw + v;
        const real* src = cols_grad.data() + row * cols;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride + u - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride + v - g.pad;
            if (ix < 0 || ix >= g.w) continue;
            gx[(static_cast<std::size_t>(c) * g.h + iy) * g.w + ix] +=
                src[static_cast<std::size_t>(oy) * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Zero-padded 2D convolution, input [C,H,W], kernels [O,C,kh,kw], optional
// bias [O]. Runs as im2col + GEMM.
inline Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor* bias, int stride,
                     int pad) {
  auto g = detail::conv_geometry(x, kernels, stride, pad);
  if (bias && bias->shape() != Shape{g.cout})
    fail("dimension", "conv2d: bias must have shape [" + std::to_string(g.cout) + "]");
  const std::size_t cols = static_cast<std::size_t>(g.oh) * g.ow;
  const std::size_t krows = static_cast<std::size_t>(g.cin) * g.kh * g.kw;
  auto cols_data = std::make_shared<std::vector<real>>(detail::im2col(x.data(), g));
  std::vector<real> out(static_cast<std::size_t>(g.cout) * cols);
  {
    detail::ConstMap km(kernels.data().data(), g.cout, static_cast<int>(krows));
    detail::ConstMap cm(cols_data->data(), static_cast<int>(krows), static_cast<int>(cols));
    detail::MutMap om(out.data(), g.cout, static_cast<int>(cols));
    om.noalias() = km * cm;
    if (bias) {
      auto bv = bias->data();
      for (int o = 0; o < g.cout; ++o)
        for (std::size_t i = 0; i < cols; ++i) out[o * cols + i] += bv[o];
    }
  }
  Shape out_shape{g.cout, g.oh, g.ow};
  detail::Vjp vjp = [g, cols, krows, cols_data, ks = kernels.storage()](
                        std::span<const real> gr, const std::vector<std::span<real>>& gp) {
    detail::ConstMap gm(gr.data(), g.cout, static_cast<int>(cols));
    if (!gp[1].empty()) {
      detail::ConstMap cm(cols_data->data(), static_cast<int>(krows), static_cast<int>(cols));
      detail::MutMap gkm(gp[1].data(), g.cout, static_cast<int>(krows));
      gkm.noalias() += gm * cm.transpose();
    }
    if (!gp[0].empty()) {
      std::vector<real> gcols(krows * cols);
      detail::ConstMap km(ks->data(), g.cout, static_cast<int>(krows));
      detail::MutMap gcm(gcols.data(), static_cast<int>(krows), static_cast<int>(cols));
      gcm.noalias() = km.transpose() * gm;
      detail::col2im_accumulate(gcols, g, gp[0]);
    }
    if (gp.size() > 2 && !gp[2].empty()) {
      for (int o = 0; o < g.cout; ++o) {
        real acc = 0;
        for (std::size_t i = 0; i < cols; ++i) acc += gr[o * cols + i];
        gp[2][o] += acc;
      }
    }
  };
  detail::NodePtr node;
  if (bias)
    node = detail::make_node(out_shape, {&x, &kernels, bias}, std::move(vjp));
  else
    node = detail::make_node(out_shape, {&x, &kernels}, std::move(vjp));
  return Tensor::make(std::move(out_shape), std::move(out), std::move(node));
}

inline Tensor conv2d(const Tensor& x, const Tensor& kernels, int stride, int pad) {
  return conv2d(x, kernels, nullptr, stride, pad);
}

namespace detail {

struct ResizeTap {
  int lo, hi;
  real t;  // weight of hi; weight of lo is 1-t
};

// align_corners = false sampling taps. Purely a function of the two extents.
inline std::vector<ResizeTap> resize_taps(int in, int out) {
  std::vector<ResizeTap> taps(static_cast<std::size_t>(out));
  const real scale = static_cast<real>(in) / static_cast<real>(out);
  for (int i = 0; i < out; ++i) {
    real src = (static_cast<real>(i) + real(0.5)) * scale - real(0.5);
    ResizeTap tap{};
    if (src <= 0) {
      tap.lo = tap.hi = 0;
      tap.t = 0;
    } else if (src >= static_cast<real>(in - 1)) {
      tap.lo = tap.hi = in - 1;
      tap.t = 0;
    } else {
      tap.lo = static_cast<int>(std::floor(src));
      tap.hi = tap.lo + 1;
      tap.t = src - static_cast<real>(tap.lo);
    }
    taps[static_cast<std::size_t>(i)] = tap;
  }
  return taps;
}

}  // namespace detail

// Bilinear resampling of [C,H,W] to [C,h,w], align_corners = false. The
// interpolation is written in lerp form, so constant inputs reproduce exactly
// and the identity resize is bitwise identity.
inline Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 3) fail("dimension", "bilinear_resize expects [C,H,W], got " + shape_str(x.shape()));
  if (out_h < 1 || out_w < 1) fail("parameter", "bilinear_resize: target extents must be >= 1");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto ys = detail::resize_taps(h, out_h);
  auto xs = detail::resize_taps(w, out_w);
  auto xv = x.data();
  std::vector<real> out(static_cast<std::size_t>(c) * out_h * out_w);
  for (int ch = 0; ch < c; ++ch) {
    const real* plane = xv.data() + static_cast<std::size_t>(ch) * h * w;
    real* oplane = out.data() + static_cast<std::size_t>(ch) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const auto& ty = ys[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const auto& tx = xs[static_cast<std::size_t>(ox)];
        const real v00 = plane[static_cast<std::size_t>(ty.lo) * w + tx.lo];
        const real v01 = plane[static_cast<std::size_t>(ty.lo) * w + tx.hi];
        const real v10 = plane[static_cast<std::size_t>(ty.hi) * w + tx.lo];
        const real v11 = plane[static_cast<std::size_t>(ty.hi) * w + tx.hi];
        const real top = v00 + tx.t * (v01 - v00);
        const real bot = v10 + tx.t * (v11 - v10);
        oplane[static_cast<std::size_t>(oy) * out_w + ox] = top + ty.t * (bot - top);
      }
    }
  }
  auto node = detail::make_node(
      Shape{c, out_h, out_w}, {&x},
      [c, h, w, out_h, out_w, ys, xs](std::span<const real> g,
                                      const std::vector<std::span<real>>& gp) {
        if (gp[0].empty()) return;
        for (int ch = 0; ch < c; ++ch) {
          real* gplane = gp[0].data() + static_cast<std::size_t>(ch) * h * w;
          const real* goplane = g.data() + static_cast<std::size_t>(ch) * out_h * out_w;
          for (int oy = 0; oy < out_h; ++oy) {
            const auto& ty = ys[static_cast<std::size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
              const auto& tx = xs[static_cast<std::size_t>(ox)];
              const real go = goplane[static_cast<std::size_t>(oy) * out_w + ox];
              gplane[static_cast<std::size_t>(ty.lo) * w + tx.lo] += go * (1 - ty.t) * (1 - tx.t);
              gplane[static_cast<std::size_t>(ty.lo) * w + tx.hi] += go * (1 - ty.t) * tx.t;
              gplane[static_cast<std::size_t>(ty.hi) * w + tx.lo] += go * ty.t * (1 - tx.t);
              gplane[static_cast<std::size_t>(ty.hi) * w + tx.hi] += go * ty.t * tx.t;
            }
          }
        }
      });
  return Tensor::make({c, out_h, out_w}, std::move(out), std::move(node));
}

// [C,H,W] -> [(H*W), C] token layout and back.
inline Tensor map_to_tokens(const Tensor& x) {
  if (x.rank() != 3) fail("dimension", "map_to_tokens expects [C,H,W]");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<real> out(x.size());
  auto xv = x.data();
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[p * c + ch] = xv[static_cast<std::size_t>(ch) * hw + p];
  auto node = detail::make_node(
      Shape{static_cast<int>(hw), c}, {&x},
      [c, hw](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        if (gp[0].empty()) return;
        for (int ch = 0; ch < c; ++ch)
          for (std::size_t p = 0; p < hw; ++p)
            gp[0][static_cast<std::size_t>(ch) * hw + p] += g[p * c + ch];
      });
  return Tensor::make({static_cast<int>(hw), c}, std::move(out), std::move(node));
}

inline Tensor tokens_to_map(const Tensor& x, int h, int w) {
  if (x.rank() != 2 || x.dim(0) != h * w)
    fail("dimension", "tokens_to_map: " + shape_str(x.shape()) + " does not cover " +
                          std::to_string(h) + "x" + std::to_string(w));
  const int c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<real> out(x.size());
  auto xv = x.data();
  for (std::size_t p = 0; p < hw; ++p)
    for (int ch = 0; ch < c; ++ch) out[static_cast<std::size_t>(ch) * hw + p] = xv[p * c + ch];
  auto node = detail::make_node(
      Shape{c, h, w}, {&x},
      [c, hw](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        if (gp[0].empty()) return;
        for (std::size_t p = 0; p < hw; ++p)
          for (int ch = 0; ch < c; ++ch)
            gp[0][p * c + ch] += g[static_cast<std::size_t>(ch) * hw + p];
      });
  return Tensor::make({c, h, w}, std::move(out), std::move(node));
}

// Mean negative log-likelihood over a chosen subset of rows of logp [N,K].
inline Tensor nll_selected(const Tensor& logp, const std::vector<int>& targets,
                           const std::vector<int>& positions) {
  if (logp.rank() != 2) fail("dimension", "nll_selected expects [N,K]");
  if (positions.empty()) fail("degenerate_batch", "nll_selected over an empty position set");
  const int n = logp.dim(0), k = logp.dim(1);
  if (static_cast<int>(targets.size()) != n)
    fail("dimension", "nll_selected: one target per row required");
  real acc = 0;
  auto lv = logp.data();
  for (int i : positions) {
    if (i < 0 || i >= n) fail("dimension", "nll_selected: position out of range");
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= k) fail("label", "nll_selected: target id " + std::to_string(t) + " out of range");
    acc -= lv[static_cast<std::size_t>(i) * k + t];
  }
  acc /= static_cast<real>(positions.size());
  auto node = detail::make_node(
      Shape{1}, {&logp},
      [targets, positions, k](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        if (gp[0].empty()) return;
        const real scale = g[0] / static_cast<real>(positions.size());
        for (int i : positions)
          gp[0][static_cast<std::size_t>(i) * k + targets[static_cast<std::size_t>(i)]] -= scale;
      });
  return Tensor::make({1}, {acc}, std::move(node));
}

// Weighted negative log-likelihood, normalized by the total weight.
inline Tensor nll_weighted(const Tensor& logp, const std::vector<int>& targets,
                           const std::vector<real>& weights) {
  if (logp.rank() != 2) fail("dimension", "nll_weighted expects [N,K]");
  const int n = logp.dim(0), k = logp.dim(1);
  if (static_cast<int>(targets.size()) != n || static_cast<int>(weights.size()) != n)
    fail("dimension", "nll_weighted: one target and weight per row required");
  real wsum = 0;
  for (real w : weights) wsum += w;
  if (!(wsum > 0)) fail("parameter", "nll_weighted: total weight must be positive");
  real acc = 0;
  auto lv = logp.data();
  for (int i = 0; i < n; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= k) fail("label", "nll_weighted: target id out of range");
    acc -= weights[static_cast<std::size_t>(i)] * lv[static_cast<std::size_t>(i) * k + t];
  }
  acc /= wsum;
  auto node = detail::make_node(
      Shape{1}, {&logp},
      [targets, weights, wsum, n, k](std::span<const real> g,
                                     const std::vector<std::span<real>>& gp) {
        if (gp[0].empty()) return;
        for (int i = 0; i < n; ++i)
          gp[0][static_cast<std::size_t>(i) * k + targets[static_cast<std::size_t>(i)]] -=
              g[0] * weights[static_cast<std::size_t>(i)] / wsum;
      });
  return Tensor::make({1}, {acc}, std::move(node));
}

// Numerically stable mean binary cross-entropy on logits against fixed
// targets in [0,1].
inline Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets) {
  detail::require_same_shape(logits, targets, "bce_with_logits_mean");
  const std::size_t n = logits.size();
  if (n == 0) fail("dimension", "bce over an empty tensor");
  auto zv = logits.data();
  auto yv = targets.data();
  real acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const real z = zv[i], y = yv[i];
    acc += std::max(z, real(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  acc /= static_cast<real>(n);
  auto node = detail::make_node(
      Shape{1}, {&logits, &targets},
      [zs = logits.storage(), ts = targets.storage(), n](std::span<const real> g,
                                                         const std::vector<std::span<real>>& gp) {
        const real scale = g[0] / static_cast<real>(n);
        if (!gp[0].empty())
          for (std::size_t i = 0; i < n; ++i)
            gp[0][i] += scale * (sigmoid_value((*zs)[i]) - (*ts)[i]);
        if (!gp[1].empty())
          for (std::size_t i = 0; i < n; ++i) gp[1][i] += scale * (-(*zs)[i]);
      });
  return Tensor::make({1}, {acc}, std::move(node));
}

// Soft Dice loss on logits: 1 - (2*sum(p*y)+1)/(sum(p)+sum(y)+1), p = sigmoid.
inline Tensor dice_loss(const Tensor& logits, const Tensor& targets) {
  detail::require_same_shape(logits, targets, "dice_loss");
  const std::size_t n = logits.size();
  if (n == 0) fail("dimension", "dice over an empty tensor");
  auto zv = logits.data();
  auto yv = targets.data();
  auto probs = std::make_shared<std::vector<real>>(n);
  real inter = 0, psum = 0, ysum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const real p = sigmoid_value(zv[i]);
    (*probs)[i] = p;
    inter += p * yv[i];
    psum += p;
    ysum += yv[i];
  }
  const real num = 2 * inter + 1;
  const real den = psum + ysum + 1;
  const real loss = real(1) - num / den;
  auto node = detail::make_node(
      Shape{1}, {&logits, &targets},
      [probs, ts = targets.storage(), num, den, n](std::span<const real> g,
                                                   const std::vector<std::span<real>>& gp) {
        if (!gp[0].empty()) {
          for (std::size_t i = 0; i < n; ++i) {
            const real p = (*probs)[i];
            const real dldp = -(2 * (*ts)[i] * den - num) / (den * den);
            gp[0][i] += g[0] * dldp * p * (real(1) - p);
          }
        }
        if (!gp[1].empty()) {
          for (std::size_t i = 0; i < n; ++i) {
            const real dldy = -(2 * (*probs)[i] * den - num) / (den * den);
            gp[1][i] += g[0] * dldy;
          }
        }
      });
  return Tensor::make({1}, {loss}, std::move(node));
}

}  // namespace radious::num
