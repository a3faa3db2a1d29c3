// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over a dynamically recorded graph.
//
// Every value produced by a differentiable op is a node stamped with a
// monotonically increasing sequence number at creation. A GradTape built
// from a root collects the nodes that require gradients and replays their
// backward functions in strictly decreasing sequence order, i.e. the exact
// reverse of execution order. Consumers always have larger sequence numbers
// than their inputs, so a node's gradient is complete before it is read.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "aftk/tensor.hpp"

namespace aftk {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  /// Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  static Var parameter(Tensor value);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  /// In-place access for optimizers; never mutate a value that a live graph still reads.
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const { return node_->value.item(); }
  std::uint64_t seq() const { return node_->seq; }
  const char* op() const { return node_->op; }

  /// Detached copy of the value (constant, no history).
  Var detach() const { return constant(node_->value); }

  const NodePtr& node() const { return node_; }

  /// Records a new node. Inputs are only retained when at least one requires
  /// gradients; the output value must be finite.
  static Var record(const char* op, Tensor value, std::vector<Var> inputs,
                    std::function<void(Node&)> backward);

 private:
  explicit Var(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

/// Adds `g` elementwise into `target.grad`, allocating it on first touch.
void accumulate_grad(Node& target, const Tensor& g);
void accumulate_grad(Node& target, std::span<const double> g);

class GradTape {
 public:
  /// Collects every node reachable from `root` that requires gradients.
  explicit GradTape(const Var& root);

  /// Zeroes the collected gradients, seeds d(root)=1 and runs all backward
  /// functions in reverse execution order. `root` must hold one element.
  void backward();

  /// Sequence numbers in the order backward visits them.
  std::vector<std::uint64_t> visit_order() const;

 private:
  NodePtr root_;
  std::vector<Node*> nodes_;
};

inline void backward(const Var& root) { GradTape(root).backward(); }

}  // namespace aftk
