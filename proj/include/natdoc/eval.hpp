// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "natdoc/data.hpp"
#include "natdoc/decode.hpp"
#include "natdoc/model.hpp"

namespace natdoc {

// ---- BLEU -------------------------------------------------------------------

struct BleuReport {
  double score = 0.0;              // 0..100
  std::vector<double> precisions;  // n = 1..max_n, after smoothing
  std::vector<std::size_t> matches, totals;
  double brevity_penalty = 0.0;
  std::size_t hyp_len = 0, ref_len = 0;
};

// Corpus BLEU with clipped n-gram counts and the exponential brevity penalty.
// A zero precision for n >= 2 is smoothed to (m + 1) / (t + 1).
BleuReport bleu(const std::vector<std::vector<std::string>>& hyps,
                const std::vector<std::vector<std::string>>& refs, std::size_t max_n = 4);
BleuReport bleu(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs,
                std::size_t max_n = 4);

// Whole documents as translation units.
BleuReport d_bleu(const std::vector<DocumentPair>& hyps, const std::vector<DocumentPair>& refs,
                  std::size_t max_n = 4);
// Sentence k of each hypothesis paired with sentence k of its reference.
// MetricError naming the documents whose sentence counts differ.
BleuReport s_bleu(const std::vector<DocumentPair>& hyps, const std::vector<DocumentPair>& refs,
                  std::size_t max_n = 4);

// Per segment: n-gram occurrences after the first of each n-gram over all
// n-grams; averaged over segments holding at least one n-gram.
double repetition_ratio(const std::vector<std::vector<std::string>>& segments, std::size_t n);
double repetition_ratio(const std::vector<std::vector<int>>& segments, std::size_t n);
// Documents as segments.
double repetition_ratio(const std::vector<DocumentPair>& docs, std::size_t n);

// ---- speed ---------------------------------------------------------------

struct BenchModel {
  std::string name;
  const Model* model = nullptr;
  double init_seconds = 0.0;  // one-time setup, e.g. checkpoint loading
};

struct SpeedOptions {
  std::vector<std::string> buckets = {"sent", "64", "128", "256", "512"};
  std::vector<std::size_t> batch_sizes = {1, 2, 4, 8};
  std::size_t segments = 8;  // per bucket
  std::size_t reps = 5;
  std::size_t warmup = 1;
  int threads = 1;
  DecodeOptions decode;
};

struct SpeedRow {
  std::string model;
  std::string variant;
  std::string bucket;
  std::size_t batch = 0;
  std::size_t segments = 0;
  double mean_tokens = 0.0;  // source tokens per segment
  double seconds = 0.0;      // median decode seconds per segment
  double init_seconds = 0.0;
  double speedup = 0.0;     // teacher time over model time, setup amortized over the bucket
  double speedup_ex = 0.0;  // setup excluded
};

struct SpeedReport {
  std::vector<SpeedRow> rows;
  std::vector<std::string> notices;
};

// Buckets: "sent" translates single sentences; a number L packs documents into
// segments of at most L source tokens and keeps those longer than L/2. The
// speedup reference is the first teacher entry. ConfigError on models of
// different sizes, ContractError without a teacher.
SpeedReport bench_speed(const std::vector<BenchModel>& models, const Vocab& vocab,
                        const std::vector<DocumentPair>& docs, const SpeedOptions& opt = {});

// Segments of one bucket, as used by bench_speed.
std::vector<Segment> bucket_segments(const std::vector<DocumentPair>& docs, const Vocab& vocab,
                                     const std::string& bucket, std::size_t limit);

// Columns: model,variant,bucket,batch,segments,mean_tokens,seconds,init_seconds,speedup,speedup_ex
std::string speed_csv(const SpeedReport& r);
// Three panels (speedup against bucket at batch 1, against batch size with and
// without setup time), one polyline per model in each.
std::string speed_svg(const SpeedReport& r);

// ---- context ablation --------------------------------------------------------

struct AblationCondition {
  std::string name;  // full, no_target_context, no_source_context
  BleuReport s_bleu;
  AmbiguityScore ambiguous;   // non-first sentences; empty without a language
  double bleu_delta = 0.0;    // condition minus full; a drop is negative
  double ambiguous_delta = 0.0;
};

// Full context; target sentences decoded apart (decoder attention stays within
// each sentence) against the whole source segment; every sentence translated
// from its own source sentence only. ContractError unless gtrans.
std::vector<AblationCondition> context_ablation(const Model& model, const Vocab& vocab,
                                                const std::vector<DocumentPair>& docs,
                                                const SynthLanguage* lang = nullptr,
                                                const DocTranslateOptions& opt = {});

}  // namespace natdoc
