// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/ops.hpp"

#include <cmath>
#include <string>

#include "natdoc/errors.hpp"

namespace natdoc::nc {

namespace {

std::string shape_str(const Array& a) {
  std::string s = "[";
  for (std::size_t i = 0; i < a.shape().size(); ++i) {
    if (i) s += ",";
    s += std::to_string(a.shape()[i]);
  }
  return s + "]";
}

void require_same(const Array& a, const Array& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void mm(const Array& a, bool ta, const Array& b, bool tb, Array& c, bool acc) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t n = tb ? b.rows() : b.cols();
  kernels::gemm(kernels::GemmArgs{.m = m, .n = n, .k = k,
                                  .a = a.data(), .lda = a.cols(), .trans_a = ta,
                                  .b = b.data(), .ldb = b.cols(), .trans_b = tb,
                                  .c = c.data(), .ldc = c.cols(), .accumulate = acc});
}

}  // namespace

Var matmul(Var a, Var b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: inner extents differ " + shape_str(av) + " x " + shape_str(bv));
  Array out = Array::matrix(av.rows(), bv.cols());
  mm(av, false, bv, false, out, false);
  return a.graph->push(std::move(out), {a.id, b.id}, [a, b](Graph& g, int self) {
    const Array& dc = g.grad(self);
    if (g.needs_grad(a.id)) mm(dc, false, g.value(b.id), true, g.grad(a.id), true);
    if (g.needs_grad(b.id)) mm(g.value(a.id), true, dc, false, g.grad(b.id), true);
  });
}

Var matmul_nt(Var a, Var b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.cols() != bv.cols())
    throw DimensionError("matmul_nt: inner extents differ " + shape_str(av) + " x " + shape_str(bv) + "^T");
  Array out = Array::matrix(av.rows(), bv.rows());
  mm(av, false, bv, true, out, false);
  return a.graph->push(std::move(out), {a.id, b.id}, [a, b](Graph& g, int self) {
    const Array& dc = g.grad(self);
    if (g.needs_grad(a.id)) mm(dc, false, g.value(b.id), false, g.grad(a.id), true);
    if (g.needs_grad(b.id)) mm(dc, true, g.value(a.id), false, g.grad(b.id), true);
  });
}

Var add(Var a, Var b) {
  require_same(a.value(), b.value(), "add");
  Array out = a.value();
  const Array& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph->push(std::move(out), {a.id, b.id}, [a, b](Graph& g, int self) {
    const Array& dc = g.grad(self);
    for (int id : {a.id, b.id}) {
      if (!g.needs_grad(id)) continue;
      Array& d = g.grad(id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i];
    }
  });
}

Var add_row(Var x, Var bias) {
  const Array& xv = x.value();
  const Array& bv = bias.value();
  if (bv.size() != xv.cols()) throw DimensionError("add_row: bias length differs from columns");
  Array out = xv;
  const std::size_t n = xv.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  return x.graph->push(std::move(out), {x.id, bias.id}, [x, bias](Graph& g, int self) {
    const Array& dc = g.grad(self);
    if (g.needs_grad(x.id)) {
      Array& d = g.grad(x.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i];
    }
    if (g.needs_grad(bias.id)) {
      Array& d = g.grad(bias.id);
      const std::size_t cols = dc.cols();
      for (std::size_t r = 0; r < dc.rows(); ++r)
        for (std::size_t c = 0; c < cols; ++c) d[c] += dc[r * cols + c];
    }
  });
}

Var mul(Var a, Var b) {
  require_same(a.value(), b.value(), "mul");
  Array out = a.value();
  const Array& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.graph->push(std::move(out), {a.id, b.id}, [a, b](Graph& g, int self) {
    const Array& dc = g.grad(self);
    if (g.needs_grad(a.id)) {
      Array& d = g.grad(a.id);
      const Array& bv = g.value(b.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i] * bv[i];
    }
    if (g.needs_grad(b.id)) {
      Array& d = g.grad(b.id);
      const Array& av = g.value(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i] * av[i];
    }
  });
}

Var scale(Var x, double s) {
  Array out = x.value();
  for (double& v : out.values()) v *= s;
  return x.graph->push(std::move(out), {x.id}, [x, s](Graph& g, int self) {
    const Array& dc = g.grad(self);
    Array& d = g.grad(x.id);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * dc[i];
  });
}

Var relu(Var x) {
  Array out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return x.graph->push(std::move(out), {x.id}, [x](Graph& g, int self) {
    const Array& dc = g.grad(self);
    const Array& xv = g.value(x.id);
    Array& d = g.grad(x.id);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (xv[i] > 0.0) d[i] += dc[i];
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Array& xv = x.value();
  const std::size_t n = xv.cols();
  const std::size_t rows = xv.rows();
  if (gain.value().size() != n || bias.value().size() != n)
    throw DimensionError("layer_norm: gain/bias length differs from columns");
  Array out(xv.shape());
  auto xhat = std::make_shared<Array>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const Array& gv = gain.value();
  const Array& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += xr[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (xr[c] - mean) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  return x.graph->push(std::move(out), {x.id, gain.id, bias.id},
                       [x, gain, bias, xhat, inv_std](Graph& g, int self) {
    const Array& dy = g.grad(self);
    const std::size_t n = dy.cols();
    const std::size_t rows = dy.rows();
    const Array& gv = g.value(gain.id);
    if (g.needs_grad(gain.id) || g.needs_grad(bias.id)) {
      Array* dg = g.needs_grad(gain.id) ? &g.grad(gain.id) : nullptr;
      Array* db = g.needs_grad(bias.id) ? &g.grad(bias.id) : nullptr;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          if (dg) (*dg)[c] += dy[r * n + c] * (*xhat)[r * n + c];
          if (db) (*db)[c] += dy[r * n + c];
        }
    }
    if (g.needs_grad(x.id)) {
      Array& dx = g.grad(x.id);
      std::vector<double> dh(n);
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          dh[c] = dy[r * n + c] * gv[c];
          m1 += dh[c];
          m2 += dh[c] * (*xhat)[r * n + c];
        }
        m1 /= static_cast<double>(n);
        m2 /= static_cast<double>(n);
        for (std::size_t c = 0; c < n; ++c)
          dx[r * n + c] += (*inv_std)[r] * (dh[c] - m1 - (*xhat)[r * n + c] * m2);
      }
    }
  });
}

Var softmax_masked(Var logits, const BoolArray& mask) {
  const Array& lv = logits.value();
  if (mask.shape() != lv.shape()) throw DimensionError("softmax_masked: mask shape differs");
  Array out = lv;
  const std::size_t n = lv.cols();
  for (std::size_t r = 0; r < lv.rows(); ++r)
    kernels::softmax_row(out.row(r), mask.data() + r * n);
  return logits.graph->push(std::move(out), {logits.id}, [logits](Graph& g, int self) {
    const Array& dy = g.grad(self);
    const Array& p = g.value(self);
    Array& dx = g.grad(logits.id);
    const std::size_t n = p.cols();
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += p[r * n + c] * dy[r * n + c];
      for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += p[r * n + c] * (dy[r * n + c] - dot);
    }
  });
}

Var log_softmax(Var logits, const BoolArray* mask) {
  const Array& lv = logits.value();
  if (mask && mask->shape() != lv.shape()) throw DimensionError("log_softmax: mask shape differs");
  Array out = lv;
  const std::size_t n = lv.cols();
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    double* row = out.data() + r * n;
    const std::uint8_t* allowed = mask ? mask->data() + r * n : nullptr;
    double mx = kLogZero;
    for (std::size_t c = 0; c < n; ++c)
      if (!allowed || allowed[c]) mx = std::max(mx, row[c]);
    if (mx == kLogZero) {
      std::fill_n(row, n, kLogZero);
      continue;
    }
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c)
      if (!allowed || allowed[c]) z += std::exp(row[c] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) row[c] = (!allowed || allowed[c]) ? row[c] - lz : kLogZero;
  }
  return logits.graph->push(std::move(out), {logits.id}, [logits](Graph& g, int self) {
    const Array& dy = g.grad(self);
    const Array& y = g.value(self);
    Array& dx = g.grad(logits.id);
    const std::size_t n = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < n; ++c)
        if (y[r * n + c] != kLogZero) total += dy[r * n + c];
      for (std::size_t c = 0; c < n; ++c) {
        const double v = y[r * n + c];
        if (v != kLogZero) dx[r * n + c] += dy[r * n + c] - std::exp(v) * total;
      }
    }
  });
}

Var logsumexp(Var v) {
  const Array& vv = v.value();
  if (vv.size() == 0) throw DomainError("logsumexp: empty input");
  const double out = kernels::logsumexp(vv.values());
  return v.graph->push(Array::scalar(out), {v.id}, [v](Graph& g, int self) {
    const double dy = g.grad(self)[0];
    const double lse = g.value(self)[0];
    if (lse == kLogZero) return;
    const Array& vv = g.value(v.id);
    Array& d = g.grad(v.id);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy * std::exp(vv[i] - lse);
  });
}

Var gather_rows(Var x, std::vector<std::size_t> index) {
  const Array& xv = x.value();
  const std::size_t n = xv.cols();
  for (std::size_t r : index)
    if (r >= xv.rows()) throw DimensionError("gather_rows: row index out of range");
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  Array out = Array::matrix(index.size(), n);
  for (std::size_t i = 0; i < index.size(); ++i)
    std::copy_n(xv.data() + index[i] * n, n, out.data() + i * n);
  return x.graph->push(std::move(out), {x.id}, [x, index = std::move(index)](Graph& g, int self) {
    const Array& dy = g.grad(self);
    Array& dx = g.grad(x.id);
    const std::size_t n = dy.cols();
    for (std::size_t i = 0; i < index.size(); ++i)
      for (std::size_t c = 0; c < n; ++c) dx[index[i] * n + c] += dy[i * n + c];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].value().cols();
  std::size_t rows = 0;
  std::vector<int> ids;
  for (const Var& p : parts) {
    if (p.value().cols() != n) throw DimensionError("concat_rows: column count differs");
    rows += p.value().rows();
    ids.push_back(p.id);
  }
  Array out = Array::matrix(rows, n);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + off);
    off += p.value().size();
  }
  return parts[0].graph->push(std::move(out), ids, [ids](Graph& g, int self) {
    const Array& dy = g.grad(self);
    std::size_t off = 0;
    for (int id : ids) {
      const std::size_t sz = g.value(id).size();
      if (g.needs_grad(id)) {
        Array& d = g.grad(id);
        for (std::size_t i = 0; i < sz; ++i) d[i] += dy[off + i];
      }
      off += sz;
    }
  });
}

Var pick_sum(Var x, std::vector<int> index) {
  const Array& xv = x.value();
  if (index.size() != xv.rows()) throw DimensionError("pick_sum: one index per row required");
  const std::size_t n = xv.cols();
  double s = 0.0;
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0) continue;
    if (static_cast<std::size_t>(index[r]) >= n) throw DimensionError("pick_sum: index out of range");
    s += xv[r * n + index[r]];
  }
  return x.graph->push(Array::scalar(s), {x.id}, [x, index = std::move(index)](Graph& g, int self) {
    const double dy = g.grad(self)[0];
    Array& dx = g.grad(x.id);
    const std::size_t n = dx.cols();
    for (std::size_t r = 0; r < index.size(); ++r)
      if (index[r] >= 0) dx[r * n + index[r]] += dy;
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.graph->push(Array::scalar(s), {x.id}, [x](Graph& g, int self) {
    const double dy = g.grad(self)[0];
    for (double& d : g.grad(x.id).values()) d += dy;
  });
}

Var segment_mean(Var x, std::vector<IndexRange> ranges) {
  const Array& xv = x.value();
  const std::size_t n = xv.cols();
  if (ranges.empty()) throw DimensionError("segment_mean: no ranges");
  Array out = Array::matrix(ranges.size(), n);
  for (std::size_t k = 0; k < ranges.size(); ++k) {
    const IndexRange& r = ranges[k];
    if (r.size() == 0 || r.end > xv.rows()) throw ContractError("segment_mean: empty or out-of-range span");
    for (std::size_t i = r.begin; i < r.end; ++i)
      for (std::size_t c = 0; c < n; ++c) out[k * n + c] += xv[i * n + c];
    for (std::size_t c = 0; c < n; ++c) out[k * n + c] /= static_cast<double>(r.size());
  }
  return x.graph->push(std::move(out), {x.id}, [x, ranges = std::move(ranges)](Graph& g, int self) {
    const Array& dy = g.grad(self);
    Array& dx = g.grad(x.id);
    const std::size_t n = dy.cols();
    for (std::size_t k = 0; k < ranges.size(); ++k) {
      const double inv = 1.0 / static_cast<double>(ranges[k].size());
      for (std::size_t i = ranges[k].begin; i < ranges[k].end; ++i)
        for (std::size_t c = 0; c < n; ++c) dx[i * n + c] += dy[k * n + c] * inv;
    }
  });
}

Var attention(Var q, Var k, Var v, AttnLayout layout, std::size_t heads) {
  const Array& qv = q.value();
  const Array& kv = k.value();
  const Array& vv = v.value();
  const std::size_t d = qv.cols();
  if (heads == 0 || d % heads != 0) throw ConfigError("attention: model dimension not divisible by heads");
  if (kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows())
    throw DimensionError("attention: q/k/v dimensions disagree");
  const kernels::AttnShape shape{.n_q = qv.rows(), .n_k = kv.rows(), .dim = d, .heads = heads};
  for (const auto& b : layout.blocks)
    if (b.q0 + b.nq > shape.n_q || b.k0 + b.nk > shape.n_k)
      throw DimensionError("attention: block outside q/k extents");
  Array out = Array::matrix(shape.n_q, d);
  const bool keep = q.graph->recording();
  auto probs = std::make_shared<kernels::AttnProbs>();
  kernels::parallel::attention_forward(qv.data(), kv.data(), vv.data(), shape, layout.blocks,
                                       out.data(), keep ? probs.get() : nullptr);
  return q.graph->push(std::move(out), {q.id, k.id, v.id},
                       [q, k, v, shape, layout = std::move(layout), probs](Graph& g, int self) {
    double* dq = g.needs_grad(q.id) ? g.grad(q.id).data() : nullptr;
    double* dk = g.needs_grad(k.id) ? g.grad(k.id).data() : nullptr;
    double* dv = g.needs_grad(v.id) ? g.grad(v.id).data() : nullptr;
    kernels::parallel::attention_backward(g.value(q.id).data(), g.value(k.id).data(),
                                          g.value(v.id).data(), shape, layout.blocks, *probs,
                                          g.grad(self).data(), dq, dk, dv);
  });
}

Array linear_forward(const Array& x, const Array& w, const Array* bias) {
  if (x.cols() != w.rows()) throw DimensionError("linear: inner extents differ");
  Array out = Array::matrix(x.rows(), w.cols());
  mm(x, false, w, false, out, false);
  if (bias) {
    const std::size_t n = w.cols();
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < n; ++c) out[r * n + c] += (*bias)[c];
  }
  return out;
}

}  // namespace natdoc::nc
