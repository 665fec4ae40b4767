// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/autodiff.hpp"

#include "natdoc/errors.hpp"

namespace natdoc::nc {

const Array& Var::value() const { return graph->value(id); }

Var Graph::constant(Array value) {
  nodes_.push_back(Node{.value = std::move(value)});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::parameter(const Array& storage) {
  nodes_.push_back(Node{.borrowed = &storage, .needs_grad = record_});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::push(Array value, std::initializer_list<int> inputs, Backprop backprop) {
  bool needs = false;
  for (int i : inputs) needs = needs || nodes_[i].needs_grad;
  Node n{.value = std::move(value), .needs_grad = needs && record_};
  if (n.needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::push(Array value, const std::vector<int>& inputs, Backprop backprop) {
  bool needs = false;
  for (int i : inputs) needs = needs || nodes_[i].needs_grad;
  Node n{.value = std::move(value), .needs_grad = needs && record_};
  if (n.needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

const Array& Graph::value(int id) const {
  const Node& n = nodes_[id];
  return n.borrowed ? *n.borrowed : n.value;
}

Array& Graph::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Array(value(id).shape(), 0.0);
  return n.grad;
}

void Graph::backward(Var output) {
  if (output.graph != this) throw ContractError("backward: output belongs to another graph");
  if (value(output.id).size() != 1) throw ContractError("backward: output must be a scalar loss");
  if (!record_) throw ContractError("backward: graph was built without recording");
  grad(output.id).fill(1.0);
  for (int id = output.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backprop && !n.grad.empty()) n.backprop(*this, id);
  }
}

std::vector<Array> gradients(Var output, std::span<const Var> wrt) {
  Graph& g = *output.graph;
  g.backward(output);
  std::vector<Array> out;
  out.reserve(wrt.size());
  for (const Var& v : wrt) out.push_back(g.has_grad(v.id) ? g.grad(v.id) : Array(v.value().shape(), 0.0));
  return out;
}

}  // namespace natdoc::nc
