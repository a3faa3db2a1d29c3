// SPDX-License-Identifier: Apache-2.0
#include "aftk/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <string>
#include <unordered_set>

#include "aftk/errors.hpp"

namespace aftk {

namespace {
std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
}  // namespace

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->seq = next_seq();
  return Var(std::move(node));
}

Var Var::parameter(Tensor value) {
  Var v = constant(std::move(value));
  v.node_->requires_grad = true;
  return v;
}

Var Var::record(const char* op, Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  node->seq = next_seq();
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& v : inputs) node->inputs.push_back(v.node_);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void accumulate_grad(Node& target, std::span<const double> g) {
  if (!target.requires_grad) return;
  if (g.size() != target.value.size()) throw DimensionError("gradient size mismatch in accumulate_grad");
  if (target.grad.size() != target.value.size()) target.grad = Tensor(target.value.shape(), 0.0);
  double* dst = target.grad.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void accumulate_grad(Node& target, const Tensor& g) { accumulate_grad(target, g.values()); }

GradTape::GradTape(const Var& root) : root_(root.node()) {
  if (!root_) throw StateError("backward on an undefined value");
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root_.get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || !seen.insert(n).second) continue;
    nodes_.push_back(n);
    for (auto& in : n->inputs) stack.push_back(in.get());
  }
  std::sort(nodes_.begin(), nodes_.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });
}

void GradTape::backward() {
  if (root_->value.size() != 1) throw DimensionError("backward root must be a scalar");
  for (Node* n : nodes_) n->grad = Tensor(n->value.shape(), 0.0);
  if (!root_->requires_grad) return;
  root_->grad[0] = 1.0;
  for (Node* n : nodes_)
    if (n->backward) n->backward(*n);
}

std::vector<std::uint64_t> GradTape::visit_order() const {
  std::vector<std::uint64_t> out;
  out.reserve(nodes_.size());
  for (const Node* n : nodes_) out.push_back(n->seq);
  return out;
}

}  // namespace aftk
