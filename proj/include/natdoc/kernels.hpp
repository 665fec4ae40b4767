// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "natdoc/array.hpp"

// Dense compute kernels. Every kernel has a straightforward serial reference
// in `serial::` that the tests and bench_kernels compare against the
// OpenMP-parallel, register-blocked versions in `parallel::`.
namespace natdoc::kernels {

// C[m,n] (+)= op(A)[m,k] * op(B)[k,n]; leading dimensions are row strides
// of the stored (untransposed) operands.
struct GemmArgs {
  std::size_t m = 0, n = 0, k = 0;
  const double* a = nullptr;
  std::size_t lda = 0;
  bool trans_a = false;
  const double* b = nullptr;
  std::size_t ldb = 0;
  bool trans_b = false;
  double* c = nullptr;
  std::size_t ldc = 0;
  bool accumulate = false;
};

// One rectangular attention block: query rows [q0, q0+nq) attend to key rows
// [k0, k0+nk). With `causal`, key k0+j is visible to query q0+i iff
// k0+j <= q0+i. An optional dense mask (nq x nk) is applied on top.
struct AttnBlock {
  std::size_t q0 = 0, nq = 0, k0 = 0, nk = 0;
  bool causal = false;
  const nc::BoolArray* mask = nullptr;
};

// Attention probabilities kept for the backward pass, one nq x nk matrix per
// (block, head), block-major.
using AttnProbs = std::vector<std::vector<double>>;

struct AttnShape {
  std::size_t n_q = 0;
  std::size_t n_k = 0;
  std::size_t dim = 0;
  std::size_t heads = 1;
};

namespace serial {
void gemm(const GemmArgs& g);
// Reference attention over a dense boolean mask (n_q x n_k).
void attention_dense(const double* q, const double* k, const double* v, const AttnShape& s,
                     const nc::BoolArray& mask, double* out);
}  // namespace serial

namespace parallel {
void gemm(const GemmArgs& g);
void attention_forward(const double* q, const double* k, const double* v, const AttnShape& s,
                       std::span<const AttnBlock> blocks, double* out, AttnProbs* probs);
// Accumulates into dq, dk, dv (each may be null when not needed).
void attention_backward(const double* q, const double* k, const double* v, const AttnShape& s,
                        std::span<const AttnBlock> blocks, const AttnProbs& probs,
                        const double* dout, double* dq, double* dk, double* dv);
}  // namespace parallel

// Engine entry point.
inline void gemm(const GemmArgs& g) { parallel::gemm(g); }

// Max-shifted log-sum-exp over a contiguous range; -inf if every entry is -inf.
double logsumexp(std::span<const double> v);

// In-place masked softmax of one row; disallowed entries become 0 and a row
// with no allowed entry becomes all zeros. `allowed` may be null (all allowed).
void softmax_row(std::span<double> row, const std::uint8_t* allowed);

// Index of the maximum, ties to the lowest index.
std::size_t argmax(std::span<const double> v);

}  // namespace natdoc::kernels
