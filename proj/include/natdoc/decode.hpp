// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "natdoc/loss.hpp"
#include "natdoc/model.hpp"
#include "natdoc/segment.hpp"

namespace natdoc {

struct Translation {
  std::vector<std::vector<int>> sentences;
  std::vector<int> tokens;  // sentences concatenated
  double seconds = 0.0;
  std::string mode;
  bool truncated = false;
  std::size_t forward_passes = 0;  // decoder passes (teacher: one per generated token)
  std::vector<std::string> diagnostics;
};

enum class DagMode { lookahead, greedy };

struct DecodeOptions {
  DagMode dag_mode = DagMode::lookahead;
  std::size_t max_len = 0;  // teacher only; 0 means 2 * source length + 8
  bool target_context = true;  // false: decoder self-attention stays inside each sentence
};

// Row-wise argmax; ties go to the lowest id.
std::vector<int> nat_argmax(const nc::Array& logits);
// Merges adjacent duplicates, then drops blanks.
std::vector<int> ctc_collapse(std::span<const int> tokens, int blank);
// Token sequence of the chosen path, one token per visited vertex. Throws
// DecodeError when a non-final vertex has no outgoing transition.
std::vector<int> dag_lookahead(const loss::DagGraph& g);
std::vector<int> dag_greedy(const loss::DagGraph& g);
// Vertices of the chosen path.
std::vector<std::size_t> dag_path(const loss::DagGraph& g, DagMode mode);

// Greedy teacher decoding of a batch, stepped in lockstep. A sequence stops
// after emitting one eos per source sentence.
std::vector<Translation> at_greedy(const Model& model, std::span<const Segment* const> segs,
                                   std::size_t max_len = 0);

// Variant dispatch over a batch packed into one pass. Errors are reported
// per segment as diagnostics with empty sentences.
std::vector<Translation> translate_batch(const Model& model, std::span<const Segment* const> segs,
                                         const DecodeOptions& opt = {});
Translation translate_segment(const Model& model, const Segment& seg, const DecodeOptions& opt = {});

}  // namespace natdoc
