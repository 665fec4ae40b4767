// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "natdoc/model.hpp"

namespace natdoc {

// A run of consecutive sentences of one document; the unit of training and
// translation. Tokens are vocabulary ids; tgt may be empty at inference.
struct Segment {
  std::string doc_id;
  std::size_t first_sentence = 0;
  std::vector<std::vector<int>> src;
  std::vector<std::vector<int>> tgt;

  std::size_t sentences() const { return src.size(); }
  std::size_t src_len() const;
  std::size_t tgt_len() const;
  std::vector<int> src_tokens() const;
  std::vector<int> tgt_tokens() const;
  std::vector<int> src_tags() const;
  std::vector<int> tgt_tags() const;
  std::vector<nc::IndexRange> src_spans() const;
  std::vector<nc::IndexRange> tgt_spans() const;
};

std::vector<int> flatten(const std::vector<std::vector<int>>& sentences);
std::vector<nc::IndexRange> spans_of(const std::vector<std::vector<int>>& sentences);

// Packs segment sources for the encoder of `cfg`: sentence tags and
// sentence-relative positions for sentence-structured variants, a single
// group and absolute positions otherwise.
SeqBatch source_batch(const ModelConfig& cfg, std::span<const Segment* const> segs);

// Source spans (in packed rows) that feed the length predictor: one per
// sentence for gtrans variants, one per sequence otherwise.
std::vector<std::vector<nc::IndexRange>> length_spans(const ModelConfig& cfg, const SeqBatch& src);

// Rows of a non-autoregressive decoder: per sequence, one block of rows per
// source sentence (one block in total for plain variants).
struct DecoderLayout {
  SeqBatch tgt;
  std::vector<long> copy_rows;
  std::vector<std::vector<nc::IndexRange>> blocks;  // [sequence][sentence], packed rows
};

// rows[s][j] rows for block j of sequence s. With `markers`, the first and
// last row of each block carry bos/eos input tokens. Each block copies
// encoder rows uniformly from its source sentence (or the whole sequence).
DecoderLayout build_decoder_layout(const ModelConfig& cfg, const SeqBatch& src,
                                   const std::vector<std::vector<std::size_t>>& rows, bool markers);

}  // namespace natdoc
