// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace natdoc::kernels {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double at_a(const GemmArgs& g, std::size_t i, std::size_t p) {
  return g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p];
}

inline double at_b(const GemmArgs& g, std::size_t p, std::size_t j) {
  return g.trans_b ? g.b[j * g.ldb + p] : g.b[p * g.ldb + j];
}

// Packs op(X) (rows x cols) into a contiguous row-major buffer.
std::vector<double> pack(const double* x, std::size_t ld, bool trans, std::size_t rows,
                         std::size_t cols) {
  std::vector<double> out(rows * cols);
  if (trans) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[c * ld + r];
  } else {
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(x + r * ld, cols, out.data() + r * cols);
  }
  return out;
}

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 16;

using V8 = double __attribute__((vector_size(64)));

inline V8 load8(const double* p) {
  V8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store8(double* p, V8 v) { std::memcpy(p, &v, sizeof v); }

using I8 = long long __attribute__((vector_size(64)));

// exp for x <= 0, 8 lanes: x = n ln2 + r with |r| <= ln2 / 2, Taylor
// polynomial to degree 13, scaled by 2^n through the exponent bits. Lanes
// below -745 (including -inf) give exactly 0.
inline V8 exp8_nonpositive(V8 x) {
  const V8 lo = x < -745.0 ? V8{} + 1.0 : V8{};
  x = x < -745.0 ? V8{} : x;
  // Truncation towards zero of x / ln2 - 0.5 (<= -0.5) rounds x / ln2 to nearest.
  const V8 n = __builtin_convertvector(__builtin_convertvector(x * 1.4426950408889634 - 0.5, I8), V8);
  const V8 r = (x - n * 6.93147180369123816490e-01) - n * 1.90821492927058770002e-10;
  V8 p = V8{} + 1.0 / 6227020800.0;
  p = p * r + 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  // 2^n in two factors so that n down to -1075 stays representable.
  const I8 ni = __builtin_convertvector(n, I8);
  const I8 half = ni >> 1;
  V8 s1, s2;
  const I8 b1 = (half + 1023) << 52, b2 = (ni - half + 1023) << 52;
  std::memcpy(&s1, &b1, sizeof s1);
  std::memcpy(&s2, &b2, sizeof s2);
  const V8 out = p * s1 * s2;
  return lo != 0.0 ? V8{} : out;
}

// C[4 x 16] tile over full k; a and b untransposed. Each output accumulates
// a[r, p] * b[p, j] in increasing p, like edge_tile.
inline void micro_4x16(std::size_t k, const double* a, std::size_t lda, const double* b,
                       std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  V8 acc[kMr][2];
  for (std::size_t r = 0; r < kMr; ++r)
    for (std::size_t h = 0; h < 2; ++h) acc[r][h] = accumulate ? load8(c + r * ldc + 8 * h) : V8{};
  for (std::size_t p = 0; p < k; ++p) {
    const V8 b0 = load8(b + p * ldb), b1 = load8(b + p * ldb + 8);
    for (std::size_t r = 0; r < kMr; ++r) {
      const double ar = a[r * lda + p];
      acc[r][0] += ar * b0;
      acc[r][1] += ar * b1;
    }
  }
  for (std::size_t r = 0; r < kMr; ++r)
    for (std::size_t h = 0; h < 2; ++h) store8(c + r * ldc + 8 * h, acc[r][h]);
}

inline void edge_tile(std::size_t mr, std::size_t nr, std::size_t k, const double* a,
                      std::size_t lda, const double* b, std::size_t ldb, double* c,
                      std::size_t ldc, bool accumulate) {
  for (std::size_t r = 0; r < mr; ++r) {
    double acc[kNr];
    for (std::size_t j = 0; j < nr; ++j) acc[j] = accumulate ? c[r * ldc + j] : 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double ar = a[r * lda + p];
      const double* bp = b + p * ldb;
      for (std::size_t j = 0; j < nr; ++j) acc[j] += ar * bp[j];
    }
    for (std::size_t j = 0; j < nr; ++j) c[r * ldc + j] = acc[j];
  }
}

}  // namespace

namespace serial {

void gemm(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < g.k; ++p) s += at_a(g, i, p) * at_b(g, p, j);
      double& dst = g.c[i * g.ldc + j];
      dst = g.accumulate ? dst + s : s;
    }
  }
}

void attention_dense(const double* q, const double* k, const double* v, const AttnShape& s,
                     const nc::BoolArray& mask, double* out) {
  const std::size_t dh = s.dim / s.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> w(s.n_k);
  for (std::size_t h = 0; h < s.heads; ++h) {
    for (std::size_t i = 0; i < s.n_q; ++i) {
      double mx = kNegInf;
      for (std::size_t j = 0; j < s.n_k; ++j) {
        if (!mask(i, j)) continue;
        double dot = 0.0;
        for (std::size_t t = 0; t < dh; ++t) dot += q[i * s.dim + h * dh + t] * k[j * s.dim + h * dh + t];
        w[j] = dot * scale;
        mx = std::max(mx, w[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < s.n_k; ++j) {
        w[j] = mask(i, j) ? std::exp(w[j] - mx) : 0.0;
        z += w[j];
      }
      for (std::size_t t = 0; t < dh; ++t) {
        double acc = 0.0;
        if (z > 0.0)
          for (std::size_t j = 0; j < s.n_k; ++j) acc += w[j] / z * v[j * s.dim + h * dh + t];
        out[i * s.dim + h * dh + t] = acc;
      }
    }
  }
}

}  // namespace serial

namespace parallel {

void gemm(const GemmArgs& g) {
  if (g.m == 0 || g.n == 0) return;
  if (g.k == 0) {
    if (!g.accumulate)
      for (std::size_t i = 0; i < g.m; ++i) std::fill_n(g.c + i * g.ldc, g.n, 0.0);
    return;
  }
  std::vector<double> a_pack, b_pack;
  const double* a = g.a;
  std::size_t lda = g.lda;
  const double* b = g.b;
  std::size_t ldb = g.ldb;
  if (g.trans_a) {
    a_pack = pack(g.a, g.lda, true, g.m, g.k);
    a = a_pack.data();
    lda = g.k;
  }
  if (g.trans_b) {
    b_pack = pack(g.b, g.ldb, true, g.k, g.n);
    b = b_pack.data();
    ldb = g.n;
  }
  const std::size_t row_blocks = (g.m + kMr - 1) / kMr;
  const bool big = g.m * g.n * g.k > (1u << 16);
#pragma omp parallel for schedule(static) if (big)
  for (std::size_t ib = 0; ib < row_blocks; ++ib) {
    const std::size_t i0 = ib * kMr;
    const std::size_t mr = std::min(kMr, g.m - i0);
    for (std::size_t j0 = 0; j0 < g.n; j0 += kNr) {
      const std::size_t nr = std::min(kNr, g.n - j0);
      const double* ap = a + i0 * lda;
      const double* bp = b + j0;
      double* cp = g.c + i0 * g.ldc + j0;
      if (mr == kMr && nr == kNr)
        micro_4x16(g.k, ap, lda, bp, ldb, cp, g.ldc, g.accumulate);
      else
        edge_tile(mr, nr, g.k, ap, lda, bp, ldb, cp, g.ldc, g.accumulate);
    }
  }
}

namespace {

bool visible(const AttnBlock& b, std::size_t i, std::size_t j) {
  if (b.causal && b.k0 + j > b.q0 + i) return false;
  if (b.mask && !(*b.mask)(i, j)) return false;
  return true;
}

}  // namespace

void attention_forward(const double* q, const double* k, const double* v, const AttnShape& s,
                       std::span<const AttnBlock> blocks, double* out, AttnProbs* probs) {
  const std::size_t dh = s.dim / s.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t i = 0; i < s.n_q; ++i) std::fill_n(out + i * s.dim, s.dim, 0.0);
  if (probs) probs->assign(blocks.size() * s.heads, {});
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const AttnBlock& b = blocks[bi];
    if (b.nq == 0 || b.nk == 0) continue;
    const bool big = b.nq * b.nk * s.dim > (1u << 15);
#pragma omp parallel for schedule(static) if (big)
    for (std::size_t h = 0; h < s.heads; ++h) {
      std::vector<double> p(b.nq * b.nk);
      parallel::gemm(GemmArgs{.m = b.nq, .n = b.nk, .k = dh,
                    .a = q + b.q0 * s.dim + h * dh, .lda = s.dim,
                    .b = k + b.k0 * s.dim + h * dh, .ldb = s.dim, .trans_b = true,
                    .c = p.data(), .ldc = b.nk});
      std::vector<std::uint8_t> allowed(b.nk);
      for (std::size_t i = 0; i < b.nq; ++i) {
        double* row = p.data() + i * b.nk;
        for (std::size_t j = 0; j < b.nk; ++j) {
          row[j] *= scale;
          allowed[j] = visible(b, i, j) ? 1 : 0;
        }
        softmax_row({row, b.nk}, allowed.data());
      }
      parallel::gemm(GemmArgs{.m = b.nq, .n = dh, .k = b.nk,
                    .a = p.data(), .lda = b.nk,
                    .b = v + b.k0 * s.dim + h * dh, .ldb = s.dim,
                    .c = out + b.q0 * s.dim + h * dh, .ldc = s.dim});
      if (probs) (*probs)[bi * s.heads + h] = std::move(p);
    }
  }
}

void attention_backward(const double* q, const double* k, const double* v, const AttnShape& s,
                        std::span<const AttnBlock> blocks, const AttnProbs& probs,
                        const double* dout, double* dq, double* dk, double* dv) {
  const std::size_t dh = s.dim / s.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const AttnBlock& b = blocks[bi];
    if (b.nq == 0 || b.nk == 0) continue;
    const bool big = b.nq * b.nk * s.dim > (1u << 15);
#pragma omp parallel for schedule(static) if (big)
    for (std::size_t h = 0; h < s.heads; ++h) {
      const std::vector<double>& p = probs[bi * s.heads + h];
      const double* dout_h = dout + b.q0 * s.dim + h * dh;
      if (dv) {
        parallel::gemm(GemmArgs{.m = b.nk, .n = dh, .k = b.nq,
                      .a = p.data(), .lda = b.nk, .trans_a = true,
                      .b = dout_h, .ldb = s.dim,
                      .c = dv + b.k0 * s.dim + h * dh, .ldc = s.dim, .accumulate = true});
      }
      if (!dq && !dk) continue;
      std::vector<double> ds(b.nq * b.nk);
      parallel::gemm(GemmArgs{.m = b.nq, .n = b.nk, .k = dh,
                    .a = dout_h, .lda = s.dim,
                    .b = v + b.k0 * s.dim + h * dh, .ldb = s.dim, .trans_b = true,
                    .c = ds.data(), .ldc = b.nk});
      for (std::size_t i = 0; i < b.nq; ++i) {
        const double* pr = p.data() + i * b.nk;
        double* dr = ds.data() + i * b.nk;
        double dot = 0.0;
        for (std::size_t j = 0; j < b.nk; ++j) dot += pr[j] * dr[j];
        for (std::size_t j = 0; j < b.nk; ++j) dr[j] = pr[j] * (dr[j] - dot) * scale;
      }
      if (dq) {
        parallel::gemm(GemmArgs{.m = b.nq, .n = dh, .k = b.nk,
                      .a = ds.data(), .lda = b.nk,
                      .b = k + b.k0 * s.dim + h * dh, .ldb = s.dim,
                      .c = dq + b.q0 * s.dim + h * dh, .ldc = s.dim, .accumulate = true});
      }
      if (dk) {
        parallel::gemm(GemmArgs{.m = b.nk, .n = dh, .k = b.nq,
                      .a = ds.data(), .lda = b.nk, .trans_a = true,
                      .b = q + b.q0 * s.dim + h * dh, .ldb = s.dim,
                      .c = dk + b.k0 * s.dim + h * dh, .ldc = s.dim, .accumulate = true});
      }
    }
  }
}

}  // namespace parallel

double logsumexp(std::span<const double> v) {
  double mx = kNegInf;
  for (double x : v) mx = std::max(mx, x);
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

void softmax_row(std::span<double> row, const std::uint8_t* allowed) {
  const std::size_t n = row.size();
  if (allowed)
    for (std::size_t j = 0; j < n; ++j)
      if (!allowed[j]) row[j] = kNegInf;
  // Padded tail: -inf lanes leave the max alone and contribute exp = 0.
  const std::size_t full = n / 8 * 8;
  double tail[8];
  std::fill_n(tail, 8, kNegInf);
  std::copy(row.begin() + full, row.end(), tail);
  V8 m = V8{} + kNegInf;
  for (std::size_t j = 0; j < full; j += 8) {
    const V8 x = load8(row.data() + j);
    m = x > m ? x : m;
  }
  m = load8(tail) > m ? load8(tail) : m;
  double mx = m[0];
  for (int l = 1; l < 8; ++l) mx = std::max(mx, m[l]);
  if (mx == kNegInf) {
    std::fill(row.begin(), row.end(), 0.0);
    return;
  }
  // Lane-wise partial sums, reduced in a fixed order, so trailing masked
  // entries do not change the result.
  V8 z8{};
  for (std::size_t j = 0; j < full; j += 8) {
    const V8 e = exp8_nonpositive(load8(row.data() + j) - mx);
    store8(row.data() + j, e);
    z8 += e;
  }
  const V8 et = exp8_nonpositive(load8(tail) - mx);
  store8(tail, et);
  z8 += et;
  std::copy_n(tail, n - full, row.begin() + full);
  const double z = ((z8[0] + z8[1]) + (z8[2] + z8[3])) + ((z8[4] + z8[5]) + (z8[6] + z8[7]));
  const double inv = 1.0 / z;
  for (double& x : row) x *= inv;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace natdoc::kernels
