// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "natdoc/attmask.hpp"
#include "natdoc/decode.hpp"
#include "natdoc/model.hpp"
#include "natdoc/segment.hpp"

namespace natdoc {

struct DocumentPair;

// Token/id bijection. Ids 0..4 are always pad, bos, eos, blank, unk.
class Vocab {
 public:
  Vocab();
  explicit Vocab(const std::vector<std::string>& tokens);  // DataError unless specials lead

  // Specials followed by every corpus token, sorted.
  static Vocab build(const std::vector<DocumentPair>& docs);

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;  // unk when absent
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::string& sentence) const;
  std::string decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

std::vector<std::string> split_tokens(const std::string& sentence);
std::string join_tokens(const std::vector<std::string>& tokens);

struct DocumentPair {
  std::string id;
  std::vector<std::string> src;  // sentences of whitespace-separated tokens
  std::vector<std::string> tgt;  // same count as src, or empty when absent
  bool operator==(const DocumentPair&) const = default;
};

// ---- synthetic corpora ---------------------------------------------------

struct SynthConfig {
  std::size_t vocab_size = 64;  // source word types
  std::size_t sentences = 4;
  std::size_t min_len = 5;
  std::size_t max_len = 12;
  double ambiguity = 0.5;       // fraction of source types with two translations
  double variation = 0.5;       // train split: chance a target sentence carries a filler token
  std::uint64_t seed = 1;
  std::size_t train_docs = 2000;
  std::size_t dev_docs = 200;
  std::size_t test_docs = 200;

  void validate() const;  // ConfigError
};

// The language behind a synthetic corpus: a word-for-word cipher in which
// ambiguous source types translate according to the document's selector.
class SynthLanguage {
 public:
  explicit SynthLanguage(const SynthConfig& cfg);

  const SynthConfig& config() const { return cfg_; }
  static const std::string& filler();
  static const std::string& selector(int s);  // source selector tokens
  bool ambiguous(const std::string& src_token) const;
  std::size_t ambiguous_types() const;
  // Translation of one source token under selector s.
  const std::string& translate(const std::string& src_token, int s) const;
  // Selector of a document: its first source token. DataError otherwise.
  int selector_of(const std::vector<std::string>& src_sentences) const;
  // The unique correct target of a document.
  std::vector<std::string> oracle(const std::vector<std::string>& src_sentences) const;
  const std::vector<std::string>& source_types() const { return src_types_; }
  // Every token the language can produce, specials first.
  Vocab vocab() const;

 private:
  SynthConfig cfg_;
  std::vector<std::string> src_types_;
  std::map<std::string, std::size_t> src_index_;
  std::vector<bool> ambiguous_;
  std::vector<std::array<std::string, 2>> tgt_;  // per source type and selector
  std::array<std::string, 2> tgt_selector_;
};

struct GenOptions {
  std::string prefix = "doc";
  std::uint64_t stream = 0;   // independent document streams of one language
  std::size_t sentences = 0;  // 0: SynthConfig::sentences
  bool variation = false;     // apply filler variation to targets
};

std::vector<DocumentPair> gen_corpus(const SynthConfig& cfg, std::size_t n_docs, const GenOptions& opt = {});

struct CorpusSplits {
  std::vector<DocumentPair> train, dev, test;
};
// Train targets carry the filler variation; dev and test targets are oracle.
CorpusSplits gen_splits(const SynthConfig& cfg);

// Oracle accuracy on ambiguous tokens: per sentence, clipped matches of the
// oracle translations of ambiguous source tokens.
struct AmbiguityScore {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};
AmbiguityScore ambiguous_accuracy(const SynthLanguage& lang, const std::vector<DocumentPair>& src_docs,
                                  const std::vector<DocumentPair>& hyps, bool skip_first_sentence = false);

// ---- segmentation ----------------------------------------------------------

// Greedy packing of whole consecutive sentences into segments of at most
// max_len source tokens.
std::vector<Segment> segment_documents(const std::vector<DocumentPair>& docs, const Vocab& vocab,
                                       std::size_t max_len = 512);

struct SegmentTags {
  attn::GroupTags src, tgt;
};
SegmentTags assign_group_tags(const Segment& seg);

// Reassembles per-document sentences from translated segments, in input order.
// A segment output with one string per source sentence keeps that alignment;
// any other output is joined into a single target string for the segment.
std::vector<DocumentPair> assemble_documents(const std::vector<DocumentPair>& docs,
                                             const std::vector<Segment>& segs,
                                             const std::vector<std::vector<std::vector<int>>>& seg_sentences,
                                             const Vocab& vocab);

// ---- document translation ----------------------------------------------------

struct DocTranslateOptions {
  std::size_t batch = 8;
  std::size_t max_len = 512;       // segment limit in source tokens
  bool sentence_segments = false;  // every sentence in its own segment
  bool parallel = true;            // spread batches over OpenMP threads
  DecodeOptions decode;
};

struct DocTranslation {
  std::vector<DocumentPair> docs;  // ids and sources of the input, translated targets
  std::vector<Segment> segments;
  std::vector<Translation> outputs;  // one per segment
};

DocTranslation translate_documents(const Model& model, const Vocab& vocab, const std::vector<DocumentPair>& docs,
                                   const DocTranslateOptions& opt = {});

// ---- distillation ----------------------------------------------------------

struct DistillResult {
  std::vector<DocumentPair> docs;
  std::size_t truncated = 0;
  std::vector<std::string> flagged;  // ids of documents with a truncated segment
};

// Replaces every target by the teacher's greedy translation, split at its
// sentence markers.
DistillResult distill_corpus(const Model& teacher, const Vocab& vocab, const std::vector<DocumentPair>& docs,
                             std::size_t batch = 16, std::size_t max_len = 512);

// ---- corpus files ------------------------------------------------------------

// One JSON object per line: {"id": ..., "src": [...], "tgt": [...]}.
// With `aligned`, target and source sentence counts must agree.
std::vector<DocumentPair> read_corpus(const std::string& path, bool require_tgt = true, bool aligned = true);
void write_corpus(const std::string& path, const std::vector<DocumentPair>& docs);
std::vector<DocumentPair> parse_corpus(const std::string& text, const std::string& name, bool require_tgt = true,
                                       bool aligned = true);
std::string format_corpus(const std::vector<DocumentPair>& docs);

}  // namespace natdoc
