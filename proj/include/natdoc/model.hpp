// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "natdoc/attmask.hpp"
#include "natdoc/autodiff.hpp"
#include "natdoc/ops.hpp"

namespace natdoc {

// Reserved token ids shared by every vocabulary.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kBlank = 3;
inline constexpr int kUnk = 4;
inline constexpr int kNumSpecials = 5;

enum class Variant {
  at_teacher,
  nat_vanilla,
  glat,
  glat_ctc,
  dag,
  gtrans_glat,
  gtrans_glat_ctc,
  gtrans_dag,
};

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);  // ConfigError on unknown names
const std::vector<Variant>& all_variants();

// Sentence-aligned variants: group attention, per-sentence lengths/frames.
bool is_gtrans(Variant v);
bool is_ctc(Variant v);
bool is_dag(Variant v);
bool is_glancing(Variant v);
inline bool is_nat(Variant v) { return v != Variant::at_teacher; }
// Uses group tags and sentence-relative positions (gtrans variants and the teacher).
inline bool is_sentence_structured(Variant v) { return is_gtrans(v) || v == Variant::at_teacher; }

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  std::size_t global_layers = 1;
  std::size_t vocab_size = 0;
  std::size_t max_sentence_len = 64;
  std::size_t max_target_len = 512;
  std::size_t ctc_upsample = 2;
  std::size_t dag_lambda = 4;
  std::size_t dag_max_vertices = 4096;
  Variant variant = Variant::glat;

  void validate() const;  // ConfigError on violated invariants
  // Number of length classes; class c stands for length c + 1.
  std::size_t length_classes() const;
  bool global_layer(std::size_t layer) const;
  bool same_size(const ModelConfig& other) const;
};

// Packed sequences: rows of several sequences back to back.
struct SeqBatch {
  std::vector<int> tokens;
  attn::PackedTags tags;
  std::vector<int> positions;  // sinusoid index per row

  std::size_t rows() const { return tokens.size(); }
  std::size_t sequences() const { return tags.sequences(); }
  nc::IndexRange sequence(std::size_t s) const { return {tags.offsets[s], tags.offsets[s + 1]}; }
  // Appends one sequence; positions restart at each tag change when
  // `sentence_positions` is set, otherwise they count from the sequence start.
  void append(const std::vector<int>& seq_tokens, const std::vector<int>& seq_tags,
              bool sentence_positions);
};

// Token frame of a sentence-aligned decoder: per sentence [bos, slots, eos].
struct SentenceFrame {
  std::vector<int> tokens;
  std::vector<int> tags;
};

SentenceFrame init_sentence_frame(const std::vector<std::size_t>& lengths);

// Source index copied into decoder input t: round(t (S-1) / (T-1)), 0 when T = 1.
std::vector<std::size_t> uniform_copy_index(std::size_t source_len, std::size_t target_len);

struct LengthPrediction {
  std::vector<std::vector<double>> per_sentence;  // probabilities, class c = length c + 1
  std::vector<std::size_t> chosen;
  std::size_t total = 0;
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);
  Model(ModelConfig cfg, std::vector<std::string> names, std::vector<nc::Array> arrays);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<nc::Array>& arrays() { return arrays_; }
  const std::vector<nc::Array>& arrays() const { return arrays_; }
  std::size_t index(const std::string& name) const;
  bool has(const std::string& name) const;
  std::size_t parameter_count() const;

  // Expected parameter names and shapes for a config.
  static std::vector<std::pair<std::string, std::vector<std::size_t>>> layout(const ModelConfig& cfg);

 private:
  ModelConfig cfg_;
  std::vector<std::string> names_;
  std::vector<nc::Array> arrays_;
};

struct EncoderStates {
  nc::Var h;  // [rows, d_model]
  const SeqBatch* src = nullptr;
};

struct DagHeads {
  nc::Var token_logits;  // [M, V]
  nc::Var trans_logits;  // [M, M], unmasked
};

// Binds a model into one graph; parameter handles are created on first use.
class Forward {
 public:
  Forward(const Model& model, nc::Graph& graph);

  nc::Graph& graph() { return g_; }
  const Model& model() const { return m_; }
  const ModelConfig& config() const { return m_.config(); }
  nc::Var param(const std::string& name);
  // Uses existing handles (one per model array, in order) instead of
  // creating parameter leaves.
  void bind(std::span<const nc::Var> vars);

  EncoderStates encode(const SeqBatch& src);
  // One row of logits per span (spans in packed encoder rows).
  nc::Var length_logits(const EncoderStates& enc, const std::vector<nc::IndexRange>& spans);
  // Decoder inputs: emb(token) + position signal, plus the copied encoder row
  // for rows with copy_rows[r] >= 0.
  nc::Var decoder_inputs(const SeqBatch& tgt, const EncoderStates& enc,
                         const std::vector<long>& copy_rows);
  // Restricts decoder self-attention to each target sentence in every layer,
  // as if each sentence frame were decoded on its own.
  void isolate_target_sentences(bool on) { isolate_target_ = on; }
  // Decoder stack over packed target rows; returns final hidden states.
  nc::Var decode(nc::Var inputs, const SeqBatch& tgt, const EncoderStates& enc, bool causal);
  nc::Var token_logits(nc::Var hidden);
  // Transition logits of one sequence's vertex rows.
  nc::Var transition_logits(nc::Var vertex_hidden);

 private:
  nc::Var embed(const std::vector<int>& tokens, const std::vector<int>& positions);
  nc::Var ln(nc::Var x, const std::string& prefix);
  nc::Var attend(nc::Var xq, nc::Var xkv, const std::string& prefix, nc::AttnLayout layout);
  nc::Var ffn(nc::Var x, const std::string& prefix);

  const Model& m_;
  nc::Graph& g_;
  std::vector<nc::Var> bound_;
  bool isolate_target_ = false;
};

// Sinusoidal position encoding of one position.
void position_encoding(int pos, std::span<double> out);

// Value-level entry points (inference graphs).
LengthPrediction predict_lengths(const Model& model, const SeqBatch& src_single,
                                 const std::vector<nc::IndexRange>& spans);
nc::Array encode_values(const Model& model, const SeqBatch& src);

// Teacher-forced logits of the teacher for a packed batch of decoder inputs.
nc::Var teacher_logits(Forward& f, const SeqBatch& src, const SeqBatch& tgt_in);
// Logits for position |prefix| (prefix starts with bos), recomputed over the
// full prefix.
std::vector<double> decode_at_step(const Model& model, const std::vector<int>& src,
                                   const std::vector<int>& src_tags, const std::vector<int>& prefix);
// Tags of teacher decoder inputs: input t carries the number of eos tokens
// among inputs 1..t.
std::vector<int> teacher_input_tags(const std::vector<int>& inputs);

// Incremental teacher decoding with per-layer key/value caches for a batch of
// sequences stepped in lockstep.
class TeacherStepper {
 public:
  TeacherStepper(const Model& model, const SeqBatch& src);
  std::size_t sequences() const { return seqs_.size(); }
  // Feeds one token to each listed sequence and returns their next-token
  // logits, one row per listed sequence.
  nc::Array step(const std::vector<std::size_t>& which, const std::vector<int>& tokens);
  int tag(std::size_t s) const { return seqs_[s].cur_tag; }

 private:
  struct Seq {
    std::size_t len = 0;
    int cur_tag = 0;
    std::size_t run_start = 0;
    std::vector<std::vector<double>> k, v;  // per layer, len x d
  };
  const Model& m_;
  const SeqBatch& src_;
  nc::Array enc_;
  std::vector<nc::Array> cross_k_, cross_v_;  // per layer, over packed source rows
  std::vector<Seq> seqs_;
};

}  // namespace natdoc
