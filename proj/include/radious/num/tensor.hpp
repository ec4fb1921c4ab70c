#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "radious/error.hpp"

namespace radious::num {

#ifdef RADIOUS_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded operation. `vjp` receives the upstream gradient of this node
// and accumulates contributions into the parents' gradient buffers, which are
// handed over in the same order as `parents`.
struct Node {
  Shape shape;
  bool leaf = false;
  // Placeholder for a non-tracked input: keeps parent positions stable for
  // the vjp while the backward sweep hands it an empty gradient span.
  bool sink = false;
  std::vector<NodePtr> parents;
  std::function<void(std::span<const real> g_out, const std::vector<std::span<real>>& g_parents)> vjp;
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables recording of operations in the current scope. Forward-only passes
// (inference, evaluation) run under this guard to skip graph construction.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major tensor. Values are immutable once constructed; operations
// return fresh tensors and, when any input participates in gradient
// computation, record themselves on the implicit tape via `node_`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<real> values) {
    if (shape_size(shape) != values.size())
      fail("dimension", "tensor data length " + std::to_string(values.size()) +
                            " does not match shape " + shape_str(shape));
    check_finite(values);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<real>>(std::move(values));
    return t;
  }

  static Tensor zeros(Shape shape) {
    std::vector<real> v(shape_size(shape), real(0));
    return from(std::move(shape), std::move(v));
  }

  static Tensor full(Shape shape, real value) {
    std::vector<real> v(shape_size(shape), value);
    return from(std::move(shape), std::move(v));
  }

  static Tensor scalar(real value) { return from({1}, {value}); }

  static Tensor randn(Shape shape, std::mt19937_64& rng, real stddev = real(1)) {
    std::normal_distribution<real> dist(real(0), stddev);
    std::vector<real> v(shape_size(shape));
    for (auto& x : v) x = dist(rng);
    return from(std::move(shape), std::move(v));
  }

  static Tensor uniform(Shape shape, std::mt19937_64& rng, real lo, real hi) {
    std::uniform_real_distribution<real> dist(lo, hi);
    std::vector<real> v(shape_size(shape));
    for (auto& x : v) x = dist(rng);
    return from(std::move(shape), std::move(v));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool defined() const { return data_ != nullptr; }

  std::span<const real> data() const {
    return data_ ? std::span<const real>(*data_) : std::span<const real>();
  }
  const std::shared_ptr<const std::vector<real>>& storage() const { return data_; }

  real item() const {
    if (size() != 1) fail("dimension", "item() requires a scalar, got " + shape_str(shape_));
    return (*data_)[0];
  }

  real operator[](std::size_t i) const { return (*data_)[i]; }

  real at(std::initializer_list<int> idx) const {
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (int i : idx) {
      flat = flat * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
      ++axis;
    }
    return (*data_)[flat];
  }

  bool requires_grad() const { return node_ != nullptr; }
  const detail::NodePtr& node() const { return node_; }

  // Same values, not connected to any recorded operation.
  Tensor detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  // Marks the tensor as a differentiable leaf (a parameter).
  Tensor with_grad() const {
    Tensor t = detached();
    auto node = std::make_shared<detail::Node>();
    node->shape = shape_;
    node->leaf = true;
    t.node_ = std::move(node);
    return t;
  }

  Tensor reshape(Shape shape) const {
    if (shape_size(shape) != size())
      fail("dimension", "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor t;
    t.shape_ = shape;
    t.data_ = data_;
    if (node_ && detail::grad_mode()) {
      auto node = std::make_shared<detail::Node>();
      node->shape = std::move(shape);
      node->parents = {node_};
      node->vjp = [](std::span<const real> g, const std::vector<std::span<real>>& gp) {
        for (std::size_t i = 0; i < g.size(); ++i) gp[0][i] += g[i];
      };
      t.node_ = std::move(node);
    }
    return t;
  }

  // Used by the operation layer to attach a recorded node to a fresh result.
  static Tensor make(Shape shape, std::vector<real> values, detail::NodePtr node) {
    Tensor t = from(std::move(shape), std::move(values));
    t.node_ = std::move(node);
    return t;
  }

  // Every constructor path already rejects non-finite values; this re-check
  // exists for callers that want a named failure point.
  void check_finite(const std::string& what) const {
    if (!data_) fail("non_finite", what + ": undefined tensor");
    for (real v : *data_)
      if (!std::isfinite(v)) fail("non_finite", what + " holds a non-finite value");
  }

 private:
  static void check_finite(const std::vector<real>& values) {
    for (real v : values)
      if (!std::isfinite(v)) fail("non_finite", "tensor holds a non-finite value");
  }

  Shape shape_{};
  std::shared_ptr<const std::vector<real>> data_;
  detail::NodePtr node_;
};

}  // namespace radious::num
