// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

// Brute-force reference computations shared by the unit tests and the
// acceptance binary.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "natdoc/array.hpp"
#include "natdoc/kernels.hpp"

namespace natdoc::oracle {

inline std::vector<int> collapse(std::span<const int> a, int blank) {
  std::vector<int> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i > 0 && a[i] == a[i - 1]) continue;
    if (a[i] != blank) out.push_back(a[i]);
  }
  return out;
}

// Calls f for every string in V^m.
inline void for_each_string(std::size_t m, std::size_t v, const std::function<void(const std::vector<int>&)>& f) {
  std::vector<int> s(m, 0);
  while (true) {
    f(s);
    std::size_t i = 0;
    while (i < m && ++s[i] == static_cast<int>(v)) s[i++] = 0;
    if (i == m) return;
  }
}

inline double log_sum(const std::vector<double>& terms) {
  if (terms.empty()) return -INFINITY;
  return kernels::logsumexp(terms);
}

// log sum over label strings of rows [0, M) whose collapse equals y.
inline double ctc_enumerate(const nc::Array& lp, const std::vector<int>& y, int blank) {
  std::vector<double> terms;
  for_each_string(lp.rows(), lp.cols(), [&](const std::vector<int>& a) {
    if (collapse(a, blank) != y) return;
    double s = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) s += lp(t, a[t]);
    terms.push_back(s);
  });
  return log_sum(terms);
}

// Global enumeration restricted to alignments whose reserved spans collapse
// to their own sentence.
inline double ctc_enumerate_sentences(const nc::Array& lp, const std::vector<std::vector<int>>& ys,
                                      const std::vector<nc::IndexRange>& reserved, int blank) {
  std::vector<double> terms;
  for_each_string(lp.rows(), lp.cols(), [&](const std::vector<int>& a) {
    for (std::size_t j = 0; j < ys.size(); ++j) {
      std::span<const int> part(a.data() + reserved[j].begin, reserved[j].size());
      if (collapse(part, blank) != ys[j]) return;
    }
    double s = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) s += lp(t, a[t]);
    terms.push_back(s);
  });
  return log_sum(terms);
}

// Every strictly increasing vertex path of length n from 0 to m - 1.
inline void for_each_path(std::size_t m, std::size_t n, const std::function<void(const std::vector<std::size_t>&)>& f) {
  if (n == 0 || n > m) return;
  if (n == 1) {
    if (m == 1) f({0});
    return;
  }
  std::vector<std::size_t> path(n);
  path[0] = 0;
  path[n - 1] = m - 1;
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t pos, std::size_t min_v) {
    if (pos == n - 1) {
      if (path[pos - 1] < m - 1) f(path);
      return;
    }
    for (std::size_t v = min_v; v + (n - 1 - pos) < m; ++v) {
      path[pos] = v;
      rec(pos + 1, v + 1);
    }
  };
  rec(1, 1);
}

inline double dag_path_score(const nc::Array& tok, const nc::Array& trans, const std::vector<int>& y,
                             const std::vector<std::size_t>& path) {
  double s = 0.0;
  for (std::size_t i = 0; i < path.size(); ++i) {
    s += tok(path[i], y[i]);
    if (i > 0) s += trans(path[i - 1], path[i]);
  }
  return s;
}

inline double dag_enumerate(const nc::Array& tok, const nc::Array& trans, const std::vector<int>& y) {
  std::vector<double> terms;
  for_each_path(tok.rows(), y.size(), [&](const std::vector<std::size_t>& p) {
    terms.push_back(dag_path_score(tok, trans, y, p));
  });
  return log_sum(terms);
}

// Row-wise log-softmax of random logits, optionally under a mask.
inline nc::Array random_log_probs(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double spread = 2.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  nc::Array a = nc::Array::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) a(r, c) = u(rng);
    const double z = kernels::logsumexp(a.row(r));
    for (std::size_t c = 0; c < cols; ++c) a(r, c) -= z;
  }
  return a;
}

inline nc::Array random_transitions(std::mt19937_64& rng, std::size_t m, double spread = 2.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  nc::Array a = nc::Array::matrix(m, m, -INFINITY);
  for (std::size_t i = 0; i + 1 < m; ++i) {
    std::vector<double> row(m - i - 1);
    for (double& x : row) x = u(rng);
    const double z = kernels::logsumexp(row);
    for (std::size_t j = i + 1; j < m; ++j) a(i, j) = row[j - i - 1] - z;
  }
  return a;
}

// Corpus BLEU by direct counting: for every hypothesis n-gram position, its
// clipped share is min(count in hyp, count in ref) / count in hyp.
inline double bleu_by_counting(const std::vector<std::vector<std::string>>& hyps,
                               const std::vector<std::vector<std::string>>& refs, std::size_t max_n = 4) {
  auto count = [](const std::vector<std::string>& s, std::size_t at, std::size_t n) {
    std::size_t c = 0;
    for (std::size_t i = 0; i + n <= s.size(); ++i)
      if (std::equal(s.begin() + i, s.begin() + i + n, s.begin() + at)) ++c;
    return c;
  };
  auto count_in = [](const std::vector<std::string>& s, const std::vector<std::string>& src, std::size_t at,
                     std::size_t n) {
    std::size_t c = 0;
    for (std::size_t i = 0; i + n <= s.size(); ++i)
      if (std::equal(s.begin() + i, s.begin() + i + n, src.begin() + at)) ++c;
    return c;
  };
  double log_p = 0.0, c = 0.0, r = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    double match = 0.0, total = 0.0;
    for (std::size_t k = 0; k < hyps.size(); ++k)
      for (std::size_t i = 0; i + n <= hyps[k].size(); ++i) {
        const double h = static_cast<double>(count(hyps[k], i, n));
        const double g = static_cast<double>(count_in(refs[k], hyps[k], i, n));
        match += std::min(h, g) / h;
        total += 1.0;
      }
    match = std::round(match);
    double p = total > 0 ? match / total : 0.0;
    if (p == 0.0 && n > 1) p = (match + 1.0) / (total + 1.0);
    if (p == 0.0) return 0.0;
    log_p += std::log(p) / static_cast<double>(max_n);
  }
  for (std::size_t k = 0; k < hyps.size(); ++k) {
    c += static_cast<double>(hyps[k].size());
    r += static_cast<double>(refs[k].size());
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_p);
}

inline std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s + " ") {
    if (ch == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  return out;
}

}  // namespace natdoc::oracle
