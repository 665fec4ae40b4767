// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/loss.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>

#include "natdoc/errors.hpp"
#include "natdoc/kernels.hpp"

namespace natdoc::loss {

namespace {

constexpr double kNegInf = nc::kLogZero;

double logadd(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void check_blank(const nc::Array& lp, int blank) {
  if (blank < 0 || static_cast<std::size_t>(blank) >= lp.cols())
    throw ContractError("ctc: blank id outside the vocabulary");
}

std::vector<int> expand(std::span<const int> y, int blank) {
  std::vector<int> e(2 * y.size() + 1, blank);
  for (std::size_t i = 0; i < y.size(); ++i) e[2 * i + 1] = y[i];
  return e;
}

bool can_skip(const std::vector<int>& e, std::size_t s, int blank) {
  return s >= 2 && e[s] != blank && e[s] != e[s - 2];
}

// Backward scores beta[t][s], emission at t included.
nc::Array ctc_backward(const nc::Array& lp, const std::vector<int>& e, int blank, nc::IndexRange rows) {
  const std::size_t m = rows.size(), S = e.size();
  nc::Array beta = nc::Array::matrix(m, S, kNegInf);
  const double* last = lp.data() + (rows.end - 1) * lp.cols();
  beta(m - 1, S - 1) = last[e[S - 1]];
  if (S >= 2) beta(m - 1, S - 2) = last[e[S - 2]];
  for (std::size_t t = m - 1; t-- > 0;) {
    const double* row = lp.data() + (rows.begin + t) * lp.cols();
    for (std::size_t s = 0; s < S; ++s) {
      double acc = beta(t + 1, s);
      if (s + 1 < S) acc = logadd(acc, beta(t + 1, s + 1));
      if (s + 2 < S && can_skip(e, s + 2, blank)) acc = logadd(acc, beta(t + 1, s + 2));
      beta(t, s) = acc == kNegInf ? kNegInf : acc + row[e[s]];
    }
  }
  return beta;
}

// Adds d(log p)/d(lp) for one span into grad (scaled by `w`).
void ctc_accumulate_grad(const nc::Array& lp, std::span<const int> y, int blank, nc::IndexRange rows,
                         double w, nc::Array& grad) {
  if (rows.size() == 0) return;
  CtcLattice lat = ctc_forward(lp, y, blank, rows);
  if (lat.log_prob == kNegInf) return;
  nc::Array beta = ctc_backward(lp, lat.expanded, blank, rows);
  const std::size_t S = lat.expanded.size(), v = lp.cols();
  for (std::size_t t = 0; t < rows.size(); ++t) {
    const double* row = lp.data() + (rows.begin + t) * v;
    double* g = grad.data() + (rows.begin + t) * v;
    for (std::size_t s = 0; s < S; ++s) {
      const double a = lat.alpha(t, s), b = beta(t, s);
      if (a == kNegInf || b == kNegInf) continue;
      const int label = lat.expanded[s];
      g[label] += w * std::exp(a + b - row[label] - lat.log_prob);
    }
  }
}

}  // namespace

nc::Var xe_nat_loss(nc::Var logits, const std::vector<int>& target, const std::vector<bool>& mask) {
  const std::size_t n = logits.value().rows();
  if (target.size() != n) throw DimensionError("xe_nat_loss: one target per logits row");
  if (!mask.empty() && mask.size() != n) throw DimensionError("xe_nat_loss: mask length differs");
  std::vector<int> idx(n, -1);
  std::size_t count = 0;
  for (std::size_t t = 0; t < n; ++t)
    if (mask.empty() || mask[t]) {
      idx[t] = target[t];
      ++count;
    }
  if (count == 0) throw ContractError("xe_nat_loss: every position is masked");
  nc::Var lp = nc::log_softmax(logits);
  return nc::scale(nc::pick_sum(lp, std::move(idx)), -1.0 / static_cast<double>(count));
}

std::size_t glancing_count(std::size_t d, std::size_t n, double ratio) {
  if (n == 0) return 0;
  const auto c = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(d) - 1e-12));
  return std::min(c, n - 1);
}

std::vector<std::size_t> glancing_reveal(std::span<const int> pred, std::span<const int> target,
                                         double ratio, std::mt19937_64& rng) {
  if (pred.size() != target.size()) throw DimensionError("glancing_reveal: lengths differ");
  std::size_t d = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) d += pred[i] != target[i];
  const std::size_t k = glancing_count(d, pred.size(), ratio);
  std::vector<std::size_t> pool(pred.size());
  std::iota(pool.begin(), pool.end(), 0);
  // Partial Fisher-Yates with explicit draws keeps the sample portable.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

// ---- CTC ----------------------------------------------------------------

std::size_t ctc_min_frames(std::span<const int> y) {
  std::size_t n = y.size();
  for (std::size_t i = 1; i < y.size(); ++i) n += y[i] == y[i - 1];
  return n;
}

CtcLattice ctc_forward(const nc::Array& lp, std::span<const int> y, int blank, nc::IndexRange rows) {
  check_blank(lp, blank);
  CtcLattice lat;
  lat.expanded = expand(y, blank);
  const std::size_t m = rows.size(), S = lat.expanded.size();
  if (m == 0) {
    lat.log_prob = y.empty() ? 0.0 : kNegInf;
    return lat;
  }
  for (int label : y)
    if (label < 0 || static_cast<std::size_t>(label) >= lp.cols())
      throw DimensionError("ctc: target label outside the vocabulary");
  lat.alpha = nc::Array::matrix(m, S, kNegInf);
  const auto& e = lat.expanded;
  const double* first = lp.data() + rows.begin * lp.cols();
  lat.alpha(0, 0) = first[e[0]];
  if (S > 1) lat.alpha(0, 1) = first[e[1]];
  for (std::size_t t = 1; t < m; ++t) {
    const double* row = lp.data() + (rows.begin + t) * lp.cols();
    for (std::size_t s = 0; s < S; ++s) {
      double acc = lat.alpha(t - 1, s);
      if (s >= 1) acc = logadd(acc, lat.alpha(t - 1, s - 1));
      if (can_skip(e, s, blank)) acc = logadd(acc, lat.alpha(t - 1, s - 2));
      lat.alpha(t, s) = acc == kNegInf ? kNegInf : acc + row[e[s]];
    }
  }
  lat.log_prob = lat.alpha(m - 1, S - 1);
  if (S > 1) lat.log_prob = logadd(lat.log_prob, lat.alpha(m - 1, S - 2));
  return lat;
}

double ctc_log_prob(const nc::Array& lp, std::span<const int> y, int blank) {
  return ctc_forward(lp, y, blank, {0, lp.rows()}).log_prob;
}

namespace {

void check_spans(std::span<const int> y, const std::vector<nc::IndexRange>& tgt_spans,
                 const std::vector<nc::IndexRange>& reserved, std::size_t rows) {
  if (tgt_spans.size() != reserved.size())
    throw DataError("sentence ctc: " + std::to_string(tgt_spans.size()) + " target sentences but " +
                    std::to_string(reserved.size()) + " reserved spans");
  for (const auto& s : tgt_spans)
    if (s.end > y.size() || s.begin > s.end) throw DataError("sentence ctc: target span out of range");
  for (const auto& s : reserved)
    if (s.end > rows || s.begin > s.end) throw DataError("sentence ctc: reserved span out of range");
}

}  // namespace

double ctc_sentence_log_prob(const nc::Array& lp, std::span<const int> y,
                             const std::vector<nc::IndexRange>& tgt_spans,
                             const std::vector<nc::IndexRange>& reserved, int blank) {
  check_spans(y, tgt_spans, reserved, lp.rows());
  double total = 0.0;
  for (std::size_t j = 0; j < tgt_spans.size(); ++j) {
    const double v = ctc_forward(lp, y.subspan(tgt_spans[j].begin, tgt_spans[j].size()), blank, reserved[j]).log_prob;
    if (v == kNegInf) return kNegInf;
    total += v;
  }
  return total;
}

nc::Var ctc_sentence_log_prob(nc::Var token_logp, std::vector<int> y,
                              std::vector<nc::IndexRange> tgt_spans,
                              std::vector<nc::IndexRange> reserved, int blank) {
  const double value = ctc_sentence_log_prob(token_logp.value(), y, tgt_spans, reserved, blank);
  return token_logp.graph->push(
      nc::Array::scalar(value), {token_logp.id},
      [token_logp, y = std::move(y), tgt_spans = std::move(tgt_spans),
       reserved = std::move(reserved), blank](nc::Graph& g, int self) {
        if (g.value(self)[0] == kNegInf) return;
        const double w = g.grad(self)[0];
        const nc::Array& lp = g.value(token_logp.id);
        nc::Array& grad = g.grad(token_logp.id);
        const std::span<const int> ys(y);
        for (std::size_t j = 0; j < tgt_spans.size(); ++j)
          ctc_accumulate_grad(lp, ys.subspan(tgt_spans[j].begin, tgt_spans[j].size()), blank,
                              reserved[j], w, grad);
      });
}

nc::Var ctc_log_prob(nc::Var token_logp, std::vector<int> y, int blank) {
  const std::size_t n = y.size(), m = token_logp.value().rows();
  return ctc_sentence_log_prob(token_logp, std::move(y), {{0, n}}, {{0, m}}, blank);
}

std::vector<int> ctc_viterbi(const nc::Array& lp, std::span<const int> y, int blank, nc::IndexRange rows) {
  check_blank(lp, blank);
  const std::vector<int> e = expand(y, blank);
  const std::size_t m = rows.size(), S = e.size();
  if (m == 0 || m < ctc_min_frames(y)) return {};
  nc::Array score = nc::Array::matrix(m, S, kNegInf);
  std::vector<std::size_t> back(m * S, 0);
  const double* first = lp.data() + rows.begin * lp.cols();
  score(0, 0) = first[e[0]];
  if (S > 1) score(0, 1) = first[e[1]];
  for (std::size_t t = 1; t < m; ++t) {
    const double* row = lp.data() + (rows.begin + t) * lp.cols();
    for (std::size_t s = 0; s < S; ++s) {
      double best = score(t - 1, s);
      std::size_t from = s;
      if (s >= 1 && score(t - 1, s - 1) > best) {
        best = score(t - 1, s - 1);
        from = s - 1;
      }
      if (can_skip(e, s, blank) && score(t - 1, s - 2) > best) {
        best = score(t - 1, s - 2);
        from = s - 2;
      }
      if (best == kNegInf) continue;
      score(t, s) = best + row[e[s]];
      back[t * S + s] = from;
    }
  }
  std::size_t s = S - 1;
  if (S > 1 && score(m - 1, S - 2) > score(m - 1, S - 1)) s = S - 2;
  if (score(m - 1, s) == kNegInf) return {};
  std::vector<int> labels(m);
  for (std::size_t t = m; t-- > 0;) {
    labels[t] = e[s];
    if (t > 0) s = back[t * S + s];
  }
  return labels;
}

// ---- DAG ----------------------------------------------------------------

DagStructure DagStructure::plain(std::size_t m) {
  DagStructure s;
  s.vertices = m;
  s.vertex_tags.assign(m, 0);
  s.bos_vertices = {0};
  s.eos_vertices = {m - 1};
  return s;
}

DagStructure DagStructure::sentences(const std::vector<std::size_t>& sizes) {
  DagStructure s;
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    if (sizes[j] < 2) throw ContractError("dag: a sentence block needs at least two vertices");
    s.bos_vertices.push_back(s.vertices);
    s.vertices += sizes[j];
    s.eos_vertices.push_back(s.vertices - 1);
    s.vertex_tags.insert(s.vertex_tags.end(), sizes[j], static_cast<int>(j));
  }
  return s;
}

nc::BoolArray dag_forward_mask(std::size_t m) {
  nc::BoolArray mask = nc::BoolArray::matrix(m, m, false);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) mask.set(i, j, true);
  return mask;
}

namespace {

void check_structure(const DagStructure& s) {
  if (s.vertex_tags.size() != s.vertices || s.bos_vertices.empty() ||
      s.bos_vertices.size() != s.eos_vertices.size())
    throw ConfigError("dag: marker vertices or vertex tags missing");
}

}  // namespace

nc::BoolArray dag_sentence_mask(const DagStructure& s) {
  check_structure(s);
  const std::size_t m = s.vertices;
  nc::BoolArray mask = nc::BoolArray::matrix(m, m, false);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) mask.set(i, j, s.vertex_tags[i] == s.vertex_tags[j]);
  for (std::size_t k = 0; k + 1 < s.eos_vertices.size(); ++k)
    mask.set(s.eos_vertices[k], s.bos_vertices[k + 1], true);
  return mask;
}

nc::BoolArray dag_emission_mask(const DagStructure& s, std::size_t vocab) {
  check_structure(s);
  nc::BoolArray mask = nc::BoolArray::matrix(s.vertices, vocab, true);
  for (std::size_t i = 0; i < s.vertices; ++i)
    for (int sp : {kPad, kBos, kEos, kBlank}) mask.set(i, static_cast<std::size_t>(sp), false);
  auto only = [&](std::size_t i, int tok) {
    for (std::size_t v = 0; v < vocab; ++v) mask.set(i, v, static_cast<int>(v) == tok);
  };
  for (std::size_t b : s.bos_vertices) only(b, kBos);
  for (std::size_t e : s.eos_vertices) only(e, kEos);
  return mask;
}

DagGraph make_dag_graph(const nc::Array& token_logits, const nc::Array& trans_logits,
                        DagStructure structure, bool mask_emissions) {
  const std::size_t m = structure.vertices;
  if (token_logits.rows() != m || trans_logits.rows() != m || trans_logits.cols() != m)
    throw DimensionError("dag: logits do not match the vertex count");
  nc::Graph g(false);
  nc::BoolArray em = mask_emissions ? dag_emission_mask(structure, token_logits.cols()) : nc::BoolArray();
  nc::BoolArray tm = structure.bos_vertices.size() > 1 ? dag_sentence_mask(structure) : dag_forward_mask(m);
  DagGraph out;
  out.token_logp = nc::log_softmax(g.constant(token_logits), mask_emissions ? &em : nullptr).value();
  out.trans_logp = nc::log_softmax(g.constant(trans_logits), &tm).value();
  out.structure = std::move(structure);
  return out;
}

DagGraph apply_sentence_mask(const DagGraph& g) {
  const nc::BoolArray mask = dag_sentence_mask(g.structure);
  DagGraph out = g;
  const std::size_t m = g.structure.vertices;
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.trans_logp.data() + i * m;
    bool removed = false;
    for (std::size_t j = 0; j < m; ++j)
      if (!mask(i, j) && row[j] != kNegInf) {
        row[j] = kNegInf;
        removed = true;
      }
    if (!removed) continue;
    const double z = kernels::logsumexp({row, m});
    if (z == kNegInf) continue;
    for (std::size_t j = 0; j < m; ++j)
      if (row[j] != kNegInf) row[j] -= z;
  }
  return out;
}

namespace {

// Scaled-probability forward/backward over (target position, vertex).
struct DagPass {
  std::size_t m = 0, len = 0;
  std::vector<double> p;          // exp(trans_logp), m x m
  std::vector<double> ehat;       // len x m, emissions divided by exp(shift)
  std::vector<double> shift;      // per target position
  std::vector<double> ahat, la;   // scaled forward
  double log_z = kNegInf;
};

DagPass dag_forward(const nc::Array& tok, const nc::Array& trans, std::span<const int> y) {
  DagPass d;
  d.m = tok.rows();
  d.len = y.size();
  const std::size_t m = d.m, v = tok.cols();
  if (trans.rows() != m || trans.cols() != m) throw DimensionError("dag: transition shape differs");
  if (d.len == 0 || d.len > m || m == 0) return d;
  d.p.resize(m * m);
  for (std::size_t i = 0; i < m * m; ++i) d.p[i] = trans[i] == kNegInf ? 0.0 : std::exp(trans[i]);
  d.ehat.assign(d.len * m, 0.0);
  d.shift.assign(d.len, kNegInf);
  for (std::size_t i = 0; i < d.len; ++i) {
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= v) throw DimensionError("dag: target label outside the vocabulary");
    double mx = kNegInf;
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, tok[j * v + y[i]]);
    if (mx == kNegInf) return d;
    d.shift[i] = mx;
    for (std::size_t j = 0; j < m; ++j) {
      const double x = tok[j * v + y[i]];
      d.ehat[i * m + j] = x == kNegInf ? 0.0 : std::exp(x - mx);
    }
  }
  d.ahat.assign(d.len * m, 0.0);
  d.la.assign(d.len, kNegInf);
  if (d.ehat[0] == 0.0) return d;
  d.ahat[0] = 1.0;
  d.la[0] = d.shift[0] + std::log(d.ehat[0]);
  for (std::size_t i = 1; i < d.len; ++i) {
    double* t = d.ahat.data() + i * m;
    kernels::gemm({.m = 1, .n = m, .k = m, .a = d.ahat.data() + (i - 1) * m, .lda = m,
                   .b = d.p.data(), .ldb = m, .c = t, .ldc = m});
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += (t[j] *= d.ehat[i * m + j]);
    if (!(s > 0.0)) return d;
    for (std::size_t j = 0; j < m; ++j) t[j] /= s;
    d.la[i] = d.la[i - 1] + d.shift[i] + std::log(s);
  }
  const double end = d.ahat[(d.len - 1) * m + m - 1];
  if (end > 0.0) d.log_z = d.la[d.len - 1] + std::log(end);
  return d;
}

void dag_backward(const DagPass& d, double w, double* dtok, std::size_t v, std::span<const int> y,
                  double* dtrans) {
  const std::size_t m = d.m, n = d.len;
  std::vector<double> bhat(n * m, 0.0), lb(n, 0.0);
  bhat[(n - 1) * m + m - 1] = 1.0;
  std::vector<double> wv(m);
  for (std::size_t i = n - 1; i-- > 0;) {
    for (std::size_t j = 0; j < m; ++j) wv[j] = d.ehat[(i + 1) * m + j] * bhat[(i + 1) * m + j];
    double* u = bhat.data() + i * m;
    kernels::gemm({.m = m, .n = 1, .k = m, .a = d.p.data(), .lda = m, .b = wv.data(), .ldb = 1,
                   .c = u, .ldc = 1});
    double s = 0.0;
    for (std::size_t k = 0; k < m; ++k) s += u[k];
    if (!(s > 0.0)) return;
    for (std::size_t k = 0; k < m; ++k) u[k] /= s;
    lb[i] = lb[i + 1] + d.shift[i + 1] + std::log(s);
  }
  // Vertex posteriors.
  for (std::size_t i = 0; i < n; ++i) {
    const double c = std::exp(d.la[i] + lb[i] - d.log_z);
    for (std::size_t j = 0; j < m; ++j) {
      const double g = d.ahat[i * m + j] * bhat[i * m + j];
      if (g != 0.0) dtok[j * v + y[i]] += w * c * g;
    }
  }
  if (n < 2) return;
  // Edge posteriors: sum_i c_i ahat_{i-1} (ehat_i * bhat_i)^T, then times P.
  std::vector<double> a((n - 1) * m), b((n - 1) * m), e(m * m, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const double c = std::exp(d.la[i - 1] + d.shift[i] + lb[i] - d.log_z);
    for (std::size_t j = 0; j < m; ++j) {
      a[(i - 1) * m + j] = c * d.ahat[(i - 1) * m + j];
      b[(i - 1) * m + j] = d.ehat[i * m + j] * bhat[i * m + j];
    }
  }
  kernels::gemm({.m = m, .n = m, .k = n - 1, .a = a.data(), .lda = m, .trans_a = true,
                 .b = b.data(), .ldb = m, .c = e.data(), .ldc = m});
  for (std::size_t i = 0; i < m * m; ++i) dtrans[i] += w * e[i] * d.p[i];
}

}  // namespace

double dag_log_prob(const nc::Array& token_logp, const nc::Array& trans_logp, std::span<const int> y) {
  return dag_forward(token_logp, trans_logp, y).log_z;
}

double dag_log_prob(const DagGraph& g, std::span<const int> y) {
  return dag_log_prob(g.token_logp, g.trans_logp, y);
}

nc::Var dag_log_prob(nc::Var token_logp, nc::Var trans_logp, std::vector<int> y) {
  auto pass = std::make_shared<DagPass>(dag_forward(token_logp.value(), trans_logp.value(), y));
  const double value = pass->log_z;
  return token_logp.graph->push(
      nc::Array::scalar(value), {token_logp.id, trans_logp.id},
      [token_logp, trans_logp, y = std::move(y), pass](nc::Graph& g, int self) {
        if (pass->log_z == kNegInf) return;
        const double w = g.grad(self)[0];
        nc::Array& dtok = g.grad(token_logp.id);
        nc::Array& dtrans = g.grad(trans_logp.id);
        dag_backward(*pass, w, dtok.data(), dtok.cols(), y, dtrans.data());
      });
}

// ---- length and composite ------------------------------------------------

std::size_t clamp_length(std::size_t len, std::size_t classes, bool* clamped) {
  const std::size_t c = std::clamp<std::size_t>(len, 1, classes);
  if (clamped) *clamped = c != len;
  return c;
}

nc::Var length_loss(nc::Var length_logits, const std::vector<std::size_t>& lengths) {
  const std::size_t k = length_logits.value().rows(), classes = length_logits.value().cols();
  if (lengths.size() != k) throw DimensionError("length_loss: one length per sentence");
  std::vector<int> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = static_cast<int>(clamp_length(lengths[i], classes) - 1);
  return nc::scale(nc::pick_sum(nc::log_softmax(length_logits), std::move(idx)),
                   -1.0 / static_cast<double>(k));
}

std::vector<int> teacher_targets(const Segment& s) {
  std::vector<int> out;
  for (const auto& sent : s.tgt) {
    out.insert(out.end(), sent.begin(), sent.end());
    out.push_back(kEos);
  }
  return out;
}

namespace {

// Accumulates per-document losses into the batch mean.
struct DocSum {
  std::vector<nc::Var> terms;
  double token_nll = 0.0;
  void add(nc::Var per_token_nll) {
    token_nll += per_token_nll.value().item();
    terms.push_back(per_token_nll);
  }
};

std::vector<int> argmax_rows(const nc::Array& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) out[r] = static_cast<int>(kernels::argmax(logits.row(r)));
  return out;
}

// Logits of a first, inference-only decoder pass over the same encoder states.
nc::Array first_pass_logits(const Model& model, const EncoderStates& enc, const DecoderLayout& lay) {
  nc::Graph g(false);
  Forward f(model, g);
  EncoderStates e{g.constant(enc.h.value()), enc.src};
  nc::Var x = f.decoder_inputs(lay.tgt, e, lay.copy_rows);
  return f.token_logits(f.decode(x, lay.tgt, e, false)).value();
}

LossResult finish(DocSum& docs, LossMetrics m, std::optional<nc::Var> extra) {
  LossResult r;
  m.docs = docs.terms.size();
  if (!docs.terms.empty()) {
    const double inv = 1.0 / static_cast<double>(docs.terms.size());
    nc::Var total = docs.terms[0];
    for (std::size_t i = 1; i < docs.terms.size(); ++i) total = nc::add(total, docs.terms[i]);
    r.loss = nc::scale(total, inv);
    m.token_loss = docs.token_nll * inv;
    if (extra) r.loss = nc::add(r.loss, *extra);
  } else if (extra) {
    r.loss = *extra;
  }
  r.metrics = m;
  return r;
}

LossResult teacher_loss(Forward& f, std::span<const Segment* const> batch) {
  const ModelConfig& cfg = f.config();
  SeqBatch src = source_batch(cfg, batch);
  SeqBatch tgt;
  std::vector<int> targets;
  for (const Segment* s : batch) {
    std::vector<int> d = teacher_targets(*s);
    std::vector<int> in = {kBos};
    in.insert(in.end(), d.begin(), d.end() - 1);
    tgt.append(in, teacher_input_tags(in), true);
    targets.insert(targets.end(), d.begin(), d.end());
  }
  nc::Var lp = nc::log_softmax(teacher_logits(f, src, tgt));
  DocSum docs;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const nc::IndexRange r = tgt.sequence(s);
    std::vector<int> idx(tgt.rows(), -1);
    for (std::size_t i = r.begin; i < r.end; ++i) idx[i] = targets[i];
    docs.add(nc::scale(nc::pick_sum(lp, std::move(idx)), -1.0 / static_cast<double>(r.size())));
  }
  return finish(docs, {}, std::nullopt);
}

LossResult xe_loss(Forward& f, std::span<const Segment* const> batch, const LossOptions& opt,
                   std::mt19937_64& rng) {
  const ModelConfig& cfg = f.config();
  const bool gtrans = is_gtrans(cfg.variant);
  SeqBatch src = source_batch(cfg, batch);
  EncoderStates enc = f.encode(src);
  std::vector<std::vector<std::size_t>> rows(batch.size());
  std::vector<std::size_t> lengths;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Segment& seg = *batch[s];
    if (seg.tgt.size() != seg.src.size()) throw DataError("segment '" + seg.doc_id + "': sentence counts differ");
    if (gtrans) {
      for (const auto& y : seg.tgt) {
        rows[s].push_back(y.size() + 2);
        lengths.push_back(y.size());
      }
    } else {
      if (seg.tgt_len() == 0) throw DataError("segment '" + seg.doc_id + "' has an empty target");
      rows[s].push_back(seg.tgt_len());
      lengths.push_back(seg.tgt_len());
    }
  }
  DecoderLayout lay = build_decoder_layout(cfg, src, rows, gtrans);
  std::vector<int> target(lay.tgt.rows(), 0);
  std::vector<bool> scored(lay.tgt.rows(), true);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    for (std::size_t j = 0; j < lay.blocks[s].size(); ++j) {
      const nc::IndexRange b = lay.blocks[s][j];
      if (gtrans) {
        const auto& y = batch[s]->tgt[j];
        target[b.begin] = kBos;
        scored[b.begin] = false;
        for (std::size_t t = 0; t < y.size(); ++t) target[b.begin + 1 + t] = y[t];
        target[b.end - 1] = kEos;
        scored[b.end - 1] = false;
      } else {
        const std::vector<int> y = batch[s]->tgt_tokens();
        std::copy(y.begin(), y.end(), target.begin() + static_cast<long>(b.begin));
      }
    }
  }
  LossMetrics metrics;
  if (is_glancing(cfg.variant) && opt.glance_ratio > 0.0) {
    const std::vector<int> pred = argmax_rows(first_pass_logits(f.model(), enc, lay));
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const nc::IndexRange r = lay.tgt.sequence(s);
      std::vector<std::size_t> pos;
      std::vector<int> p, y;
      for (std::size_t i = r.begin; i < r.end; ++i)
        if (scored[i]) {
          pos.push_back(i);
          p.push_back(pred[i]);
          y.push_back(target[i]);
        }
      for (std::size_t k : glancing_reveal(p, y, opt.glance_ratio, rng)) {
        const std::size_t i = pos[k];
        lay.tgt.tokens[i] = target[i];
        lay.copy_rows[i] = -1;
        scored[i] = false;
        ++metrics.revealed;
      }
    }
  }
  nc::Var x = f.decoder_inputs(lay.tgt, enc, lay.copy_rows);
  nc::Var lp = nc::log_softmax(f.token_logits(f.decode(x, lay.tgt, enc, false)));
  DocSum docs;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const nc::IndexRange r = lay.tgt.sequence(s);
    std::vector<int> idx(lay.tgt.rows(), -1);
    std::size_t n = 0;
    for (std::size_t i = r.begin; i < r.end; ++i)
      if (scored[i]) {
        idx[i] = target[i];
        ++n;
      }
    if (n == 0) continue;
    docs.add(nc::scale(nc::pick_sum(lp, std::move(idx)), -1.0 / static_cast<double>(n)));
  }
  std::optional<nc::Var> extra;
  if (opt.w_len > 0.0) {
    std::vector<nc::IndexRange> spans;
    for (const auto& v : length_spans(cfg, src)) spans.insert(spans.end(), v.begin(), v.end());
    for (std::size_t len : lengths) {
      bool c = false;
      clamp_length(len, cfg.length_classes(), &c);
      metrics.clamped_lengths += c;
    }
    nc::Var ll = length_loss(f.length_logits(enc, spans), lengths);
    metrics.length_loss = ll.value().item();
    extra = nc::scale(ll, opt.w_len);
  }
  return finish(docs, metrics, extra);
}

LossResult ctc_loss(Forward& f, std::span<const Segment* const> batch, const LossOptions& opt,
                    std::mt19937_64& rng) {
  const ModelConfig& cfg = f.config();
  const bool gtrans = is_gtrans(cfg.variant);
  SeqBatch src = source_batch(cfg, batch);
  EncoderStates enc = f.encode(src);
  std::vector<std::vector<std::size_t>> rows(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Segment& seg = *batch[s];
    if (seg.tgt.size() != seg.src.size()) throw DataError("segment '" + seg.doc_id + "': sentence counts differ");
    if (gtrans)
      for (const auto& x : seg.src) rows[s].push_back(cfg.ctc_upsample * x.size());
    else
      rows[s].push_back(cfg.ctc_upsample * seg.src_len());
  }
  DecoderLayout lay = build_decoder_layout(cfg, src, rows, false);
  // Per sequence: flat target, its sentence spans, reserved spans (local rows).
  struct Doc {
    std::vector<int> y;
    std::vector<nc::IndexRange> tgt_spans, reserved;
    bool feasible = true;
  };
  std::vector<Doc> docs_info(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    Doc& d = docs_info[s];
    d.y = batch[s]->tgt_tokens();
    const std::size_t base = lay.tgt.sequence(s).begin;
    if (gtrans) {
      d.tgt_spans = batch[s]->tgt_spans();
      for (const auto& b : lay.blocks[s]) d.reserved.push_back({b.begin - base, b.end - base});
    } else {
      d.tgt_spans = {{0, d.y.size()}};
      d.reserved = {{0, lay.tgt.sequence(s).size()}};
    }
    for (std::size_t j = 0; j < d.tgt_spans.size(); ++j) {
      std::span<const int> yj(d.y.data() + d.tgt_spans[j].begin, d.tgt_spans[j].size());
      if (ctc_min_frames(yj) > d.reserved[j].size()) d.feasible = false;
    }
  }
  LossMetrics metrics;
  if (is_glancing(cfg.variant) && opt.glance_ratio > 0.0) {
    const nc::Array logits = first_pass_logits(f.model(), enc, lay);
    nc::Graph g(false);
    const nc::Array lp = nc::log_softmax(g.constant(logits)).value();
    const std::vector<int> pred = argmax_rows(logits);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const Doc& d = docs_info[s];
      if (!d.feasible) continue;
      const std::size_t base = lay.tgt.sequence(s).begin;
      std::vector<int> align;
      for (std::size_t j = 0; j < d.reserved.size(); ++j) {
        std::span<const int> yj(d.y.data() + d.tgt_spans[j].begin, d.tgt_spans[j].size());
        auto a = ctc_viterbi(lp, yj, kBlank, {base + d.reserved[j].begin, base + d.reserved[j].end});
        align.insert(align.end(), a.begin(), a.end());
      }
      std::vector<int> p(pred.begin() + static_cast<long>(base),
                         pred.begin() + static_cast<long>(base + align.size()));
      for (std::size_t k : glancing_reveal(p, align, opt.glance_ratio, rng)) {
        lay.tgt.tokens[base + k] = align[k];
        lay.copy_rows[base + k] = -1;
        ++metrics.revealed;
      }
    }
  }
  nc::Var x = f.decoder_inputs(lay.tgt, enc, lay.copy_rows);
  nc::Var lp = nc::log_softmax(f.token_logits(f.decode(x, lay.tgt, enc, false)));
  DocSum docs;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    Doc& d = docs_info[s];
    if (!d.feasible) {
      ++metrics.skipped;
      continue;
    }
    const nc::IndexRange r = lay.tgt.sequence(s);
    std::vector<std::size_t> idx(r.size());
    std::iota(idx.begin(), idx.end(), r.begin);
    nc::Var sub = nc::gather_rows(lp, std::move(idx));
    const double norm = static_cast<double>(std::max<std::size_t>(1, d.y.size()));
    nc::Var ll = ctc_sentence_log_prob(sub, d.y, d.tgt_spans, d.reserved, kBlank);
    if (ll.value().item() == kNegInf) {
      ++metrics.skipped;
      continue;
    }
    docs.add(nc::scale(ll, -1.0 / norm));
  }
  return finish(docs, metrics, std::nullopt);
}

LossResult dag_loss(Forward& f, std::span<const Segment* const> batch) {
  const ModelConfig& cfg = f.config();
  const bool gtrans = is_gtrans(cfg.variant);
  SeqBatch src = source_batch(cfg, batch);
  EncoderStates enc = f.encode(src);
  std::vector<std::vector<std::size_t>> rows(batch.size());
  std::vector<DagStructure> structs;
  std::vector<std::vector<int>> targets;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Segment& seg = *batch[s];
    if (seg.tgt.size() != seg.src.size()) throw DataError("segment '" + seg.doc_id + "': sentence counts differ");
    std::vector<int> y;
    if (gtrans) {
      std::size_t total = 0;
      for (const auto& x : seg.src) {
        rows[s].push_back(cfg.dag_lambda * x.size());
        total += rows[s].back();
      }
      if (total > cfg.dag_max_vertices)
        throw ContractError("segment '" + seg.doc_id + "' needs more DAG vertices than dag_max_vertices");
      structs.push_back(DagStructure::sentences(rows[s]));
      for (const auto& t : seg.tgt) {
        y.push_back(kBos);
        y.insert(y.end(), t.begin(), t.end());
        y.push_back(kEos);
      }
    } else {
      rows[s].push_back(std::min(cfg.dag_lambda * seg.src_len(), cfg.dag_max_vertices));
      structs.push_back(DagStructure::plain(rows[s][0]));
      y.push_back(kBos);
      const auto flat = seg.tgt_tokens();
      y.insert(y.end(), flat.begin(), flat.end());
      y.push_back(kEos);
    }
    const std::size_t m = structs.back().vertices;
    if (y.size() > m)
      throw ContractError("segment '" + seg.doc_id + "': " + std::to_string(m) + " DAG vertices for a target of " +
                          std::to_string(y.size()) + " tokens");
    targets.push_back(std::move(y));
  }
  DecoderLayout lay = build_decoder_layout(cfg, src, rows, true);
  nc::Var hidden = f.decode(f.decoder_inputs(lay.tgt, enc, lay.copy_rows), lay.tgt, enc, false);
  nc::BoolArray emission = nc::BoolArray::matrix(lay.tgt.rows(), cfg.vocab_size, false);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const nc::BoolArray em = dag_emission_mask(structs[s], cfg.vocab_size);
    const std::size_t base = lay.tgt.sequence(s).begin;
    std::copy_n(em.data(), em.size(), emission.data() + base * cfg.vocab_size);
  }
  nc::Var lp = nc::log_softmax(f.token_logits(hidden), &emission);
  LossMetrics metrics;
  DocSum docs;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const nc::IndexRange r = lay.tgt.sequence(s);
    std::vector<std::size_t> idx(r.size());
    std::iota(idx.begin(), idx.end(), r.begin);
    nc::Var tok = nc::gather_rows(lp, idx);
    nc::Var h = nc::gather_rows(hidden, idx);
    const nc::BoolArray tm = gtrans ? dag_sentence_mask(structs[s]) : dag_forward_mask(r.size());
    nc::Var trans = nc::log_softmax(f.transition_logits(h), &tm);
    const double norm = static_cast<double>(targets[s].size());
    nc::Var ll = dag_log_prob(tok, trans, targets[s]);
    if (ll.value().item() == kNegInf) {
      ++metrics.skipped;
      continue;
    }
    docs.add(nc::scale(ll, -1.0 / norm));
  }
  return finish(docs, metrics, std::nullopt);
}

}  // namespace

LossResult composite_loss(Forward& f, std::span<const Segment* const> batch, const LossOptions& opt,
                          std::mt19937_64& rng) {
  if (batch.empty()) throw ContractError("composite_loss: empty batch");
  const Variant v = f.config().variant;
  if (v == Variant::at_teacher) return teacher_loss(f, batch);
  if (is_ctc(v)) return ctc_loss(f, batch, opt, rng);
  if (is_dag(v)) return dag_loss(f, batch);
  return xe_loss(f, batch, opt, rng);
}

}  // namespace natdoc::loss
