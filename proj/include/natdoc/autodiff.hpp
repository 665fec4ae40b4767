// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "natdoc/array.hpp"

namespace natdoc::nc {

class Graph;

// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Array& value() const;
  bool valid() const { return graph != nullptr && id >= 0; }
};

using Backprop = std::function<void(Graph&, int self)>;

// Tape of primitive operations. Nodes are appended in evaluation order, so
// the tape is acyclic by construction and reverse order is a valid
// topological order for the backward sweep. A graph built with
// `record = false` only evaluates values (inference mode).
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  // Constant input; never receives a gradient.
  Var constant(Array value);
  // Leaf that refers to caller-owned storage and receives gradients. The
  // array must outlive the graph.
  Var parameter(const Array& storage);

  // Appends an op result. `backprop` is dropped when no input needs a gradient
  // or the graph is not recording.
  Var push(Array value, std::initializer_list<int> inputs, Backprop backprop);
  Var push(Array value, const std::vector<int>& inputs, Backprop backprop);

  const Array& value(int id) const;
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  // Gradient buffer of a node, zero-initialised on first access.
  Array& grad(int id);
  bool has_grad(int id) const { return !nodes_[id].grad.empty(); }

  // Reverse sweep from a scalar output. Accumulation order is the reverse
  // tape order, so repeated runs are bit-identical.
  void backward(Var output);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Array value;
    const Array* borrowed = nullptr;
    Array grad;
    Backprop backprop;
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;
  bool record_;
};

// Runs the backward sweep and returns d(output)/d(wrt[i]) for each handle.
std::vector<Array> gradients(Var output, std::span<const Var> wrt);

}  // namespace natdoc::nc
