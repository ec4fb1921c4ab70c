#pragma once

#include <cstring>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "radious/num/tensor.hpp"

namespace radious::num {

namespace detail {

// Post-order (parents before children) over the recorded graph, iterative so
// deep graphs cannot overflow the stack.
inline std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next].get();
      ++next;
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace detail

// Reverse-mode sweep: d(loss)/d(p) for each requested parameter. Parameters
// must have been created as differentiable leaves. Parameters the loss never
// touched get a zero gradient of matching shape. The recorded graph is left
// intact, so running the same sweep twice yields identical results.
inline std::vector<Tensor> gradient(const Tensor& loss, std::span<const Tensor> params) {
  if (loss.size() != 1) fail("dimension", "gradient requires a scalar loss, got " + shape_str(loss.shape()));
  for (const Tensor& p : params)
    if (!p.node() || !p.node()->leaf)
      fail("unregistered_parameter", "gradient target was not created as a parameter leaf");

  std::unordered_map<detail::Node*, std::vector<real>> grads;
  if (loss.node()) {
    std::vector<detail::Node*> order = detail::topo_order(loss.node().get());
    grads[loss.node().get()] = {real(1)};
    // `order` ends with the loss; walk children-first.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* node = *it;
      if (node->leaf || !node->vjp) continue;
      auto found = grads.find(node);
      if (found == grads.end()) continue;
      std::vector<std::span<real>> parent_spans;
      parent_spans.reserve(node->parents.size());
      for (const auto& parent : node->parents) {
        if (parent->sink) {
          parent_spans.emplace_back();
          continue;
        }
        auto& buf = grads[parent.get()];
        if (buf.empty()) buf.assign(shape_size(parent->shape), real(0));
        parent_spans.emplace_back(buf);
      }
      node->vjp(found->second, parent_spans);
    }
  }

  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Tensor& p : params) {
    auto found = grads.find(p.node().get());
    if (found == grads.end() || found->second.empty())
      out.push_back(Tensor::zeros(p.shape()));
    else
      out.push_back(Tensor::from(p.shape(), found->second));
  }
  return out;
}

inline std::vector<Tensor> gradient(const Tensor& loss, const std::vector<Tensor>& params) {
  return gradient(loss, std::span<const Tensor>(params));
}

// Named parameter registry. One training step owns one tape: it reads the
// current parameter values, builds a loss, calls `gradients`, and writes the
// updated values back with `set`.
class GradientTape {
 public:
  Tensor parameter(const std::string& name, const Tensor& init) {
    if (params_.count(name)) fail("naming", "parameter registered twice: " + name);
    // Adopt an existing leaf unchanged so callers can hold a differentiable
    // handle; anything else is detached into a fresh leaf.
    Tensor leaf = (init.node() && init.node()->leaf) ? init : init.detached().with_grad();
    order_.push_back(name);
    params_.emplace(name, leaf);
    return leaf;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  Tensor get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail("unregistered_parameter", "no parameter named " + name);
    return it->second;
  }

  // Replaces the value and re-marks the tensor as a leaf.
  void set(const std::string& name, const Tensor& value) {
    auto it = params_.find(name);
    if (it == params_.end()) fail("unregistered_parameter", "no parameter named " + name);
    if (value.shape() != it->second.shape())
      fail("dimension", "parameter " + name + " has shape " + shape_str(it->second.shape()) +
                            ", refusing value of shape " + shape_str(value.shape()));
    it->second = value.detached().with_grad();
  }

  const std::vector<std::string>& names() const { return order_; }
  std::size_t count() const { return order_.size(); }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    out.reserve(order_.size());
    for (const auto& name : order_) out.push_back(params_.at(name));
    return out;
  }

  std::vector<Tensor> gradients(const Tensor& loss) const {
    return num::gradient(loss, parameters());
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> params_;
};

// Plain stochastic gradient descent: p <- p - lr * g, value-level.
inline void sgd_step(GradientTape& tape, const std::vector<Tensor>& grads, real lr) {
  const auto& names = tape.names();
  if (grads.size() != names.size()) fail("dimension", "gradient list does not match parameter registry");
  for (std::size_t i = 0; i < names.size(); ++i) {
    Tensor p = tape.get(names[i]);
    std::vector<real> next(p.size());
    auto pv = p.data();
    auto gv = grads[i].data();
    for (std::size_t j = 0; j < next.size(); ++j) next[j] = pv[j] - lr * gv[j];
    tape.set(names[i], Tensor::from(p.shape(), std::move(next)));
  }
}

}  // namespace radious::num
