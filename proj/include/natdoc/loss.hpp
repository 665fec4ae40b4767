// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "natdoc/model.hpp"
#include "natdoc/ops.hpp"
#include "natdoc/segment.hpp"

namespace natdoc::loss {

// Mean over unmasked rows of -log softmax(logits)[t, target[t]].
// mask[t] = false excludes row t; an empty mask keeps every row.
nc::Var xe_nat_loss(nc::Var logits, const std::vector<int>& target, const std::vector<bool>& mask = {});

// Number of positions revealed for Hamming distance d out of n positions:
// ceil(ratio * d), capped at n - 1 so at least one position keeps a loss.
std::size_t glancing_count(std::size_t d, std::size_t n, double ratio);
// Positions (sorted) sampled uniformly without replacement from all n.
std::vector<std::size_t> glancing_reveal(std::span<const int> pred, std::span<const int> target,
                                         double ratio, std::mt19937_64& rng);

// ---- CTC ----------------------------------------------------------------

struct CtcLattice {
  std::vector<int> expanded;  // blank-interleaved target, 2|y|+1 labels
  nc::Array alpha;            // [M, 2|y|+1], log forward scores
  double log_prob = nc::kLogZero;
};

// Forward recursion over rows [begin, end) of token_logp.
CtcLattice ctc_forward(const nc::Array& token_logp, std::span<const int> y, int blank,
                       nc::IndexRange rows);
double ctc_log_prob(const nc::Array& token_logp, std::span<const int> y, int blank);
// Sum over sentences j of CTC(token_logp rows reserved[j], y[tgt_spans[j]]).
double ctc_sentence_log_prob(const nc::Array& token_logp, std::span<const int> y,
                             const std::vector<nc::IndexRange>& tgt_spans,
                             const std::vector<nc::IndexRange>& reserved, int blank);
// Differentiable versions; gradients are alignment posteriors. An infeasible
// target yields -inf and no gradient.
nc::Var ctc_log_prob(nc::Var token_logp, std::vector<int> y, int blank);
nc::Var ctc_sentence_log_prob(nc::Var token_logp, std::vector<int> y,
                              std::vector<nc::IndexRange> tgt_spans,
                              std::vector<nc::IndexRange> reserved, int blank);
// Most probable alignment (one label per row of `rows`, blanks included);
// empty when the target is infeasible.
std::vector<int> ctc_viterbi(const nc::Array& token_logp, std::span<const int> y, int blank,
                             nc::IndexRange rows);
// Minimum number of frames able to emit y.
std::size_t ctc_min_frames(std::span<const int> y);

// ---- DAG ----------------------------------------------------------------

// Vertex structure of a decoding graph. Plain graphs have one sentence with
// bos vertex 0 and eos vertex M-1.
struct DagStructure {
  std::size_t vertices = 0;
  std::vector<int> vertex_tags;
  std::vector<std::size_t> bos_vertices;
  std::vector<std::size_t> eos_vertices;

  static DagStructure plain(std::size_t m);
  // Consecutive vertex blocks of the given sizes, one per sentence; each
  // block starts with its bos vertex and ends with its eos vertex.
  static DagStructure sentences(const std::vector<std::size_t>& sizes);
};

struct DagGraph {
  nc::Array token_logp;  // [M, V], rows normalized
  nc::Array trans_logp;  // [M, M], rows normalized over allowed j > i
  DagStructure structure;
};

// allowed(i, j): j > i.
nc::BoolArray dag_forward_mask(std::size_t m);
// allowed(i, j): j > i within one sentence, or i = eos(s) and j = bos(s+1).
nc::BoolArray dag_sentence_mask(const DagStructure& s);
// Marker vertices emit only their marker; other vertices never emit bos,
// eos, pad or blank.
nc::BoolArray dag_emission_mask(const DagStructure& s, std::size_t vocab);

// Normalizes raw logits under the forward mask (and the sentence mask when
// the structure has more than one sentence).
DagGraph make_dag_graph(const nc::Array& token_logits, const nc::Array& trans_logits,
                        DagStructure structure, bool mask_emissions);
// Disables cross-sentence transitions other than eos(s) -> bos(s+1) and
// renormalizes each row.
DagGraph apply_sentence_mask(const DagGraph& g);

double dag_log_prob(const DagGraph& g, std::span<const int> y);
double dag_log_prob(const nc::Array& token_logp, const nc::Array& trans_logp, std::span<const int> y);
// Differentiable in both inputs.
nc::Var dag_log_prob(nc::Var token_logp, nc::Var trans_logp, std::vector<int> y);

// ---- length and composite ------------------------------------------------

// Mean cross-entropy of length classes (class c = length c + 1); lengths are
// clamped into [1, classes].
nc::Var length_loss(nc::Var length_logits, const std::vector<std::size_t>& lengths);
std::size_t clamp_length(std::size_t len, std::size_t classes, bool* clamped = nullptr);

struct LossOptions {
  double w_len = 0.1;
  double glance_ratio = 0.5;
};

struct LossMetrics {
  double token_loss = 0.0;   // mean per-token negative log-likelihood over used docs
  double length_loss = 0.0;
  std::size_t docs = 0;
  std::size_t skipped = 0;   // infeasible alignment targets
  std::size_t revealed = 0;
  std::size_t clamped_lengths = 0;
};

struct LossResult {
  nc::Var loss;  // invalid when every document was skipped
  LossMetrics metrics;
};

// Variant-specific training objective over a batch of segments with targets.
LossResult composite_loss(Forward& f, std::span<const Segment* const> batch, const LossOptions& opt,
                          std::mt19937_64& rng);

// Target sequence of the teacher: each sentence followed by eos.
std::vector<int> teacher_targets(const Segment& s);

}  // namespace natdoc::loss
