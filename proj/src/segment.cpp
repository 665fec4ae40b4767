// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/segment.hpp"

#include "natdoc/errors.hpp"

namespace natdoc {

std::vector<int> flatten(const std::vector<std::vector<int>>& sentences) {
  std::vector<int> out;
  for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
  return out;
}

std::vector<nc::IndexRange> spans_of(const std::vector<std::vector<int>>& sentences) {
  std::vector<nc::IndexRange> out;
  std::size_t at = 0;
  for (const auto& s : sentences) {
    out.push_back({at, at + s.size()});
    at += s.size();
  }
  return out;
}

namespace {

std::vector<int> tags_of(const std::vector<std::vector<int>>& sentences) {
  std::vector<int> out;
  for (std::size_t j = 0; j < sentences.size(); ++j) out.insert(out.end(), sentences[j].size(), int(j));
  return out;
}

}  // namespace

std::size_t Segment::src_len() const { return flatten(src).size(); }
std::size_t Segment::tgt_len() const { return flatten(tgt).size(); }
std::vector<int> Segment::src_tokens() const { return flatten(src); }
std::vector<int> Segment::tgt_tokens() const { return flatten(tgt); }
std::vector<int> Segment::src_tags() const { return tags_of(src); }
std::vector<int> Segment::tgt_tags() const { return tags_of(tgt); }
std::vector<nc::IndexRange> Segment::src_spans() const { return spans_of(src); }
std::vector<nc::IndexRange> Segment::tgt_spans() const { return spans_of(tgt); }

SeqBatch source_batch(const ModelConfig& cfg, std::span<const Segment* const> segs) {
  SeqBatch b;
  const bool structured = is_sentence_structured(cfg.variant);
  for (const Segment* s : segs) {
    std::vector<int> tokens = s->src_tokens();
    if (tokens.empty()) throw ContractError("segment '" + s->doc_id + "' has an empty source");
    for (const auto& sent : s->src)
      if (sent.empty()) throw DataError("segment '" + s->doc_id + "' has an empty source sentence");
    std::vector<int> tags = structured ? s->src_tags() : std::vector<int>(tokens.size(), 0);
    b.append(tokens, tags, structured);
  }
  return b;
}

std::vector<std::vector<nc::IndexRange>> length_spans(const ModelConfig& cfg, const SeqBatch& src) {
  std::vector<std::vector<nc::IndexRange>> out(src.sequences());
  for (std::size_t s = 0; s < src.sequences(); ++s) {
    const nc::IndexRange r = src.sequence(s);
    if (!is_gtrans(cfg.variant)) {
      out[s].push_back(r);
      continue;
    }
    for (std::size_t i = r.begin; i < r.end; ++i) {
      if (i == r.begin || src.tags.tags[i] != src.tags.tags[i - 1])
        out[s].push_back({i, i + 1});
      else
        out[s].back().end = i + 1;
    }
  }
  return out;
}

DecoderLayout build_decoder_layout(const ModelConfig& cfg, const SeqBatch& src,
                                   const std::vector<std::vector<std::size_t>>& rows, bool markers) {
  if (rows.size() != src.sequences()) throw DimensionError("decoder layout: one row list per sequence");
  const bool sentences = is_gtrans(cfg.variant);
  const auto spans = length_spans(cfg, src);
  DecoderLayout out;
  out.blocks.resize(rows.size());
  for (std::size_t s = 0; s < rows.size(); ++s) {
    if (rows[s].size() != spans[s].size())
      throw DataError("decoder layout: block count differs from source sentence count");
    std::vector<int> tokens, tags;
    for (std::size_t j = 0; j < rows[s].size(); ++j) {
      const std::size_t n = rows[s][j];
      const std::size_t begin = out.tgt.rows() + tokens.size();
      out.blocks[s].push_back({begin, begin + n});
      const auto copy = uniform_copy_index(spans[s][j].size(), n);
      for (std::size_t t = 0; t < n; ++t) {
        int tok = kUnk;
        if (markers && t == 0) tok = kBos;
        else if (markers && t + 1 == n) tok = kEos;
        tokens.push_back(tok);
        tags.push_back(sentences ? static_cast<int>(j) : 0);
        out.copy_rows.push_back(static_cast<long>(spans[s][j].begin + copy[t]));
      }
    }
    out.tgt.append(tokens, tags, sentences);
  }
  return out;
}

}  // namespace natdoc
