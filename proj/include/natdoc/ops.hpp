// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <span>
#include <vector>

#include "natdoc/autodiff.hpp"
#include "natdoc/kernels.hpp"

// Differentiable primitives. Shapes are validated eagerly and mismatches
// raise DimensionError.
namespace natdoc::nc {

Var matmul(Var a, Var b);
// a[m,k] * b[n,k]^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
// x[m,n] + bias broadcast over rows (bias holds n values).
Var add_row(Var x, Var bias);
Var mul(Var a, Var b);
Var scale(Var x, double s);
Var relu(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Row-wise softmax restricted to mask; fully-masked rows are all zeros.
Var softmax_masked(Var logits, const BoolArray& mask);
// Row-wise log-softmax; masked entries (and fully-masked rows) are -inf.
Var log_softmax(Var logits, const BoolArray* mask = nullptr);
// Scalar log-sum-exp over every entry.
Var logsumexp(Var v);

Var gather_rows(Var x, std::vector<std::size_t> index);
Var concat_rows(std::span<const Var> parts);
// Sum over rows r with index[r] >= 0 of x[r, index[r]].
Var pick_sum(Var x, std::vector<int> index);
Var sum(Var x);
// Mean of the rows of each range; result has one row per range.
Var segment_mean(Var x, std::vector<IndexRange> ranges);

// Block layout for multi-head attention; the dense masks referenced by blocks
// are owned here so the layout can be captured by the backward closure.
struct AttnLayout {
  std::vector<kernels::AttnBlock> blocks;
  std::vector<std::shared_ptr<const BoolArray>> owned_masks;
};

// Multi-head scaled dot-product attention of q[nq,d] over k,v[nk,d].
Var attention(Var q, Var k, Var v, AttnLayout layout, std::size_t heads);

// Non-differentiable helper on values.
Array linear_forward(const Array& x, const Array& w, const Array* bias);

}  // namespace natdoc::nc
