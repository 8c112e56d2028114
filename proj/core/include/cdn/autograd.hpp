#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "cdn/tensor.hpp"

namespace cdn::ad {

/// One value in the computation graph. Leaves (parameters, inputs) have no
/// parents; interior nodes carry a closure that pushes `grad` to parents.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-allocated on first use.
  Tensor& grad_buffer();
};

/// Shared handle to a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  /// Mutable access for leaves (parameter updates, hand-set weights).
  Tensor& value_mut() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  void zero_grad() const;
  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Tensor value) { return Var(std::move(value), false); }
inline Var parameter(Tensor value) { return Var(std::move(value), true); }

/// Same value, cut from the graph.
Var detach(const Var& v);

/// Builds an interior node. When no parent requires grad the closure is
/// dropped and the result is a constant.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Reverse-mode sweep from a one-element root, seeding d(root) = 1.
/// Gradients accumulate into every reachable node that requires grad.
void backward(const Var& root);

}  // namespace cdn::ad
