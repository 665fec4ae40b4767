// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "natdoc/errors.hpp"
#include "natdoc/kernels.hpp"

namespace natdoc {

namespace {

const std::vector<std::pair<Variant, std::string>>& variant_names() {
  static const std::vector<std::pair<Variant, std::string>> names = {
      {Variant::at_teacher, "at_teacher"},
      {Variant::nat_vanilla, "nat_vanilla"},
      {Variant::glat, "glat"},
      {Variant::glat_ctc, "glat_ctc"},
      {Variant::dag, "dag"},
      {Variant::gtrans_glat, "gtrans_glat"},
      {Variant::gtrans_glat_ctc, "gtrans_glat_ctc"},
      {Variant::gtrans_dag, "gtrans_dag"},
  };
  return names;
}

std::string layer_name(const char* stack, std::size_t l, const char* rest) {
  return std::string(stack) + "." + std::to_string(l) + "." + rest;
}

}  // namespace

std::string to_string(Variant v) {
  for (const auto& [k, name] : variant_names())
    if (k == v) return name;
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (const auto& [k, n] : variant_names())
    if (n == name) return k;
  throw ConfigError("unknown variant '" + name + "'");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> all = [] {
    std::vector<Variant> v;
    for (const auto& [k, n] : variant_names()) v.push_back(k);
    return v;
  }();
  return all;
}

bool is_gtrans(Variant v) {
  return v == Variant::gtrans_glat || v == Variant::gtrans_glat_ctc || v == Variant::gtrans_dag;
}
bool is_ctc(Variant v) { return v == Variant::glat_ctc || v == Variant::gtrans_glat_ctc; }
bool is_dag(Variant v) { return v == Variant::dag || v == Variant::gtrans_dag; }
bool is_glancing(Variant v) {
  return v == Variant::glat || v == Variant::glat_ctc || v == Variant::gtrans_glat ||
         v == Variant::gtrans_glat_ctc;
}

void ModelConfig::validate() const {
  if (layers == 0) throw ConfigError("layers must be >= 1");
  if (heads == 0 || d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
  if (d_model % 2 != 0) throw ConfigError("d_model must be even");
  if (d_ff == 0) throw ConfigError("d_ff must be >= 1");
  if (global_layers > layers) throw ConfigError("global_layers must not exceed layers");
  if (vocab_size <= static_cast<std::size_t>(kNumSpecials))
    throw ConfigError("vocab_size must exceed the reserved tokens");
  if (ctc_upsample < 1) throw ConfigError("ctc_upsample must be >= 1");
  if (dag_lambda < 2) throw ConfigError("dag_lambda must be >= 2");
  if (max_sentence_len == 0 || max_target_len == 0) throw ConfigError("length limits must be >= 1");
}

std::size_t ModelConfig::length_classes() const {
  return is_gtrans(variant) ? max_sentence_len : max_target_len;
}

bool ModelConfig::global_layer(std::size_t layer) const {
  if (!is_sentence_structured(variant)) return true;
  return layer + global_layers >= layers;
}

bool ModelConfig::same_size(const ModelConfig& o) const {
  return layers == o.layers && heads == o.heads && d_model == o.d_model && d_ff == o.d_ff &&
         vocab_size == o.vocab_size;
}

void SeqBatch::append(const std::vector<int>& seq_tokens, const std::vector<int>& seq_tags,
                      bool sentence_positions) {
  if (seq_tokens.size() != seq_tags.size()) throw DimensionError("SeqBatch: tokens/tags differ");
  tokens.insert(tokens.end(), seq_tokens.begin(), seq_tokens.end());
  tags.append(seq_tags);
  int pos = 0;
  for (std::size_t i = 0; i < seq_tags.size(); ++i) {
    if (sentence_positions && i > 0 && seq_tags[i] != seq_tags[i - 1]) pos = 0;
    positions.push_back(pos++);
  }
}

SentenceFrame init_sentence_frame(const std::vector<std::size_t>& lengths) {
  SentenceFrame f;
  for (std::size_t j = 0; j < lengths.size(); ++j) {
    const int tag = static_cast<int>(j);
    f.tokens.push_back(kBos);
    f.tokens.insert(f.tokens.end(), lengths[j], kUnk);
    f.tokens.push_back(kEos);
    f.tags.insert(f.tags.end(), lengths[j] + 2, tag);
  }
  return f;
}

std::vector<std::size_t> uniform_copy_index(std::size_t source_len, std::size_t target_len) {
  if (target_len == 0) return {};
  if (source_len == 0) throw ContractError("uniform copy from an empty source");
  std::vector<std::size_t> idx(target_len, 0);
  if (target_len == 1) return idx;
  for (std::size_t t = 0; t < target_len; ++t)
    idx[t] = static_cast<std::size_t>(std::llround(static_cast<double>(t * (source_len - 1)) /
                                                   static_cast<double>(target_len - 1)));
  return idx;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> Model::layout(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    out.emplace_back(std::move(name), std::move(shape));
  };
  auto norm = [&](const std::string& p) {
    add(p + ".g", {d});
    add(p + ".b", {d});
  };
  auto attn = [&](const std::string& p) {
    for (const char* w : {".wq", ".wk", ".wv", ".wo"}) add(p + w, {d, d});
  };
  auto ff = [&](const std::string& p) {
    add(p + ".w1", {d, f});
    add(p + ".b1", {f});
    add(p + ".w2", {f, d});
    add(p + ".b2", {d});
  };
  add("emb", {v, d});
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    norm(layer_name("enc", l, "ln1"));
    attn(layer_name("enc", l, "self"));
    norm(layer_name("enc", l, "ln2"));
    ff(layer_name("enc", l, "ff"));
  }
  norm("enc.ln");
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    norm(layer_name("dec", l, "ln1"));
    attn(layer_name("dec", l, "self"));
    norm(layer_name("dec", l, "lnc"));
    attn(layer_name("dec", l, "cross"));
    norm(layer_name("dec", l, "ln2"));
    ff(layer_name("dec", l, "ff"));
  }
  norm("dec.ln");
  add("out.w", {d, v});
  add("out.b", {v});
  if (is_nat(cfg.variant) && !is_ctc(cfg.variant) && !is_dag(cfg.variant)) {
    add("len.w", {d, cfg.length_classes()});
    add("len.b", {cfg.length_classes()});
  }
  if (is_dag(cfg.variant)) {
    add("dag.wq", {d, d});
    add("dag.wk", {d, d});
  }
  return out;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  for (auto& [name, shape] : layout(cfg_)) {
    nc::Array a(shape, 0.0);
    const bool gain = name.size() > 2 && name.ends_with(".g");
    if (gain) {
      a.fill(1.0);
    } else if (shape.size() == 2) {
      // Scaled uniform; embeddings use the model width alone.
      const double fan = name == "emb" ? static_cast<double>(shape[1])
                                       : static_cast<double>(shape[0] + shape[1]) / 2.0;
      const double bound = std::sqrt(3.0 / fan);
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& x : a.values()) x = u(rng);
    }
    names_.push_back(name);
    arrays_.push_back(std::move(a));
  }
}

Model::Model(ModelConfig cfg, std::vector<std::string> names, std::vector<nc::Array> arrays)
    : cfg_(cfg), names_(std::move(names)), arrays_(std::move(arrays)) {
  cfg_.validate();
  const auto want = layout(cfg_);
  if (want.size() != names_.size() || names_.size() != arrays_.size())
    throw DataError("model arrays do not match the configuration");
  for (std::size_t i = 0; i < want.size(); ++i)
    if (want[i].first != names_[i] || want[i].second != arrays_[i].shape())
      throw DataError("model array '" + names_[i] + "' does not match the configuration");
}

std::size_t Model::index(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw ContractError("no parameter named '" + name + "'");
}

bool Model::has(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& a : arrays_) n += a.size();
  return n;
}

void position_encoding(int pos, std::span<double> out) {
  const std::size_t d = out.size();
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double rate = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    out[2 * i] = std::sin(pos * rate);
    out[2 * i + 1] = std::cos(pos * rate);
  }
}

Forward::Forward(const Model& model, nc::Graph& graph)
    : m_(model), g_(graph), bound_(model.arrays().size()) {}

nc::Var Forward::param(const std::string& name) {
  const std::size_t i = m_.index(name);
  if (!bound_[i].valid()) bound_[i] = g_.parameter(m_.arrays()[i]);
  return bound_[i];
}

nc::Var Forward::embed(const std::vector<int>& tokens, const std::vector<int>& positions) {
  const std::size_t d = config().d_model;
  std::vector<std::size_t> rows(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= config().vocab_size)
      throw DimensionError("token id " + std::to_string(tokens[i]) + " outside the vocabulary");
    rows[i] = static_cast<std::size_t>(tokens[i]);
  }
  nc::Var e = nc::scale(nc::gather_rows(param("emb"), std::move(rows)), std::sqrt(double(d)));
  nc::Array pe = nc::Array::matrix(tokens.size(), d);
  for (std::size_t i = 0; i < tokens.size(); ++i) position_encoding(positions[i], pe.row(i));
  return nc::add(e, g_.constant(std::move(pe)));
}

nc::Var Forward::ln(nc::Var x, const std::string& prefix) {
  return nc::layer_norm(x, param(prefix + ".g"), param(prefix + ".b"));
}

nc::Var Forward::attend(nc::Var xq, nc::Var xkv, const std::string& prefix, nc::AttnLayout layout) {
  nc::Var q = nc::matmul(xq, param(prefix + ".wq"));
  nc::Var k = nc::matmul(xkv, param(prefix + ".wk"));
  nc::Var v = nc::matmul(xkv, param(prefix + ".wv"));
  nc::Var a = nc::attention(q, k, v, std::move(layout), config().heads);
  return nc::matmul(a, param(prefix + ".wo"));
}

nc::Var Forward::ffn(nc::Var x, const std::string& prefix) {
  nc::Var h = nc::relu(nc::add_row(nc::matmul(x, param(prefix + ".w1")), param(prefix + ".b1")));
  return nc::add_row(nc::matmul(h, param(prefix + ".w2")), param(prefix + ".b2"));
}

void Forward::bind(std::span<const nc::Var> vars) {
  if (vars.size() != bound_.size()) throw ContractError("Forward::bind: one handle per model array");
  std::copy(vars.begin(), vars.end(), bound_.begin());
}

EncoderStates Forward::encode(const SeqBatch& src) {
  if (src.rows() == 0) throw ContractError("encode: empty source batch");
  nc::Var x = embed(src.tokens, src.positions);
  for (std::size_t l = 0; l < config().layers; ++l) {
    auto layout = config().global_layer(l) ? attn::global_layout(src.tags, src.tags, false)
                                           : attn::group_layout(src.tags, src.tags, false);
    nc::Var h = ln(x, layer_name("enc", l, "ln1"));
    x = nc::add(x, attend(h, h, layer_name("enc", l, "self"), std::move(layout)));
    x = nc::add(x, ffn(ln(x, layer_name("enc", l, "ln2")), layer_name("enc", l, "ff")));
  }
  return EncoderStates{ln(x, "enc.ln"), &src};
}

nc::Var Forward::length_logits(const EncoderStates& enc, const std::vector<nc::IndexRange>& spans) {
  nc::Var pooled = nc::segment_mean(enc.h, spans);
  return nc::add_row(nc::matmul(pooled, param("len.w")), param("len.b"));
}

nc::Var Forward::decoder_inputs(const SeqBatch& tgt, const EncoderStates& enc,
                                const std::vector<long>& copy_rows) {
  nc::Var x = embed(tgt.tokens, tgt.positions);
  if (copy_rows.empty()) return x;
  if (copy_rows.size() != tgt.rows()) throw DimensionError("decoder_inputs: one copy row per target row");
  std::vector<std::size_t> idx(copy_rows.size());
  nc::Array keep = nc::Array::matrix(copy_rows.size(), config().d_model, 1.0);
  bool any_dropped = false;
  for (std::size_t r = 0; r < copy_rows.size(); ++r) {
    if (copy_rows[r] < 0) {
      idx[r] = 0;
      std::fill(keep.row(r).begin(), keep.row(r).end(), 0.0);
      any_dropped = true;
    } else {
      idx[r] = static_cast<std::size_t>(copy_rows[r]);
    }
  }
  nc::Var copy = nc::gather_rows(enc.h, std::move(idx));
  if (any_dropped) copy = nc::mul(copy, g_.constant(std::move(keep)));
  return nc::add(x, copy);
}

nc::Var Forward::decode(nc::Var x, const SeqBatch& tgt, const EncoderStates& enc, bool causal) {
  if (tgt.sequences() != enc.src->sequences())
    throw DimensionError("decode: source and target sequence counts differ");
  for (std::size_t l = 0; l < config().layers; ++l) {
    const bool global = config().global_layer(l);
    auto self = global && !isolate_target_ ? attn::global_layout(tgt.tags, tgt.tags, causal)
                       : attn::group_layout(tgt.tags, tgt.tags, causal);
    auto cross = global ? attn::global_layout(tgt.tags, enc.src->tags, false)
                        : attn::group_layout(tgt.tags, enc.src->tags, false);
    nc::Var h = ln(x, layer_name("dec", l, "ln1"));
    x = nc::add(x, attend(h, h, layer_name("dec", l, "self"), std::move(self)));
    nc::Var c = ln(x, layer_name("dec", l, "lnc"));
    x = nc::add(x, attend(c, enc.h, layer_name("dec", l, "cross"), std::move(cross)));
    x = nc::add(x, ffn(ln(x, layer_name("dec", l, "ln2")), layer_name("dec", l, "ff")));
  }
  return ln(x, "dec.ln");
}

nc::Var Forward::token_logits(nc::Var hidden) {
  return nc::add_row(nc::matmul(hidden, param("out.w")), param("out.b"));
}

nc::Var Forward::transition_logits(nc::Var vertex_hidden) {
  nc::Var q = nc::matmul(vertex_hidden, param("dag.wq"));
  nc::Var k = nc::matmul(vertex_hidden, param("dag.wk"));
  return nc::scale(nc::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(config().d_model)));
}

LengthPrediction predict_lengths(const Model& model, const SeqBatch& src,
                                 const std::vector<nc::IndexRange>& spans) {
  nc::Graph g(false);
  Forward f(model, g);
  EncoderStates enc = f.encode(src);
  const nc::Array logits = f.length_logits(enc, spans).value();
  LengthPrediction out;
  const std::size_t c = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::vector<double> p(logits.row(r).begin(), logits.row(r).end());
    kernels::softmax_row(p, nullptr);
    const std::size_t len = kernels::argmax(p) + 1;
    out.per_sentence.push_back(std::move(p));
    out.chosen.push_back(len);
    out.total += len;
  }
  (void)c;
  return out;
}

nc::Array encode_values(const Model& model, const SeqBatch& src) {
  nc::Graph g(false);
  Forward f(model, g);
  return f.encode(src).h.value();
}

std::vector<int> teacher_input_tags(const std::vector<int>& inputs) {
  std::vector<int> tags(inputs.size(), 0);
  int tag = 0;
  for (std::size_t t = 1; t < inputs.size(); ++t) {
    if (inputs[t] == kEos) ++tag;
    tags[t] = tag;
  }
  return tags;
}

nc::Var teacher_logits(Forward& f, const SeqBatch& src, const SeqBatch& tgt_in) {
  if (f.config().variant != Variant::at_teacher)
    throw ConfigError("teacher decoding requires the at_teacher variant");
  EncoderStates enc = f.encode(src);
  nc::Var x = f.decoder_inputs(tgt_in, enc, {});
  return f.token_logits(f.decode(x, tgt_in, enc, true));
}

std::vector<double> decode_at_step(const Model& model, const std::vector<int>& src,
                                   const std::vector<int>& src_tags, const std::vector<int>& prefix) {
  if (model.config().variant != Variant::at_teacher)
    throw ConfigError("decode_at_step requires the at_teacher variant");
  if (prefix.empty() || prefix[0] != kBos) throw ContractError("decode_at_step: prefix must start with bos");
  SeqBatch s, t;
  s.append(src, src_tags, true);
  t.append(prefix, teacher_input_tags(prefix), true);
  nc::Graph g(false);
  Forward f(model, g);
  const nc::Array logits = teacher_logits(f, s, t).value();
  const auto last = logits.row(logits.rows() - 1);
  return {last.begin(), last.end()};
}

namespace {

const nc::Array& arr(const Model& m, const std::string& name) { return m.arrays()[m.index(name)]; }

nc::Array linear(const nc::Array& x, const Model& m, const std::string& w) {
  return nc::linear_forward(x, arr(m, w), nullptr);
}

nc::Array layer_norm_values(const Model& m, const nc::Array& x, const std::string& prefix) {
  nc::Graph g(false);
  return nc::layer_norm(g.constant(x), g.constant(arr(m, prefix + ".g")),
                        g.constant(arr(m, prefix + ".b")))
      .value();
}

nc::Array ffn_values(const Model& m, const nc::Array& x, const std::string& prefix) {
  nc::Array h = nc::linear_forward(x, arr(m, prefix + ".w1"), &arr(m, prefix + ".b1"));
  for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
  return nc::linear_forward(h, arr(m, prefix + ".w2"), &arr(m, prefix + ".b2"));
}

void add_into(nc::Array& x, const nc::Array& y) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

}  // namespace

TeacherStepper::TeacherStepper(const Model& model, const SeqBatch& src) : m_(model), src_(src) {
  if (model.config().variant != Variant::at_teacher)
    throw ConfigError("TeacherStepper requires the at_teacher variant");
  enc_ = encode_values(model, src);
  for (std::size_t l = 0; l < model.config().layers; ++l) {
    cross_k_.push_back(linear(enc_, model, layer_name("dec", l, "cross.wk")));
    cross_v_.push_back(linear(enc_, model, layer_name("dec", l, "cross.wv")));
  }
  seqs_.resize(src.sequences());
  for (Seq& s : seqs_) {
    s.k.resize(model.config().layers);
    s.v.resize(model.config().layers);
  }
}

nc::Array TeacherStepper::step(const std::vector<std::size_t>& which, const std::vector<int>& tokens) {
  const ModelConfig& cfg = m_.config();
  const std::size_t d = cfg.d_model, b = which.size();
  if (tokens.size() != b) throw DimensionError("TeacherStepper: one token per sequence");
  // Bookkeeping for the new input rows.
  std::vector<int> positions(b);
  for (std::size_t i = 0; i < b; ++i) {
    Seq& s = seqs_[which[i]];
    if (s.len > 0 && tokens[i] == kEos) {
      ++s.cur_tag;
      s.run_start = s.len;
    }
    positions[i] = static_cast<int>(s.len - s.run_start);
  }
  nc::Array x = nc::Array::matrix(b, d);
  {
    const nc::Array& emb = arr(m_, "emb");
    const double sc = std::sqrt(static_cast<double>(d));
    std::vector<double> pe(d);
    for (std::size_t i = 0; i < b; ++i) {
      position_encoding(positions[i], pe);
      for (std::size_t c = 0; c < d; ++c) x(i, c) = emb(static_cast<std::size_t>(tokens[i]), c) * sc + pe[c];
    }
  }
  const kernels::AttnShape one{.n_q = 1, .n_k = 0, .dim = d, .heads = cfg.heads};
  nc::Array att = nc::Array::matrix(b, d);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const bool global = cfg.global_layer(l);
    nc::Array h = layer_norm_values(m_, x, layer_name("dec", l, "ln1"));
    nc::Array q = linear(h, m_, layer_name("dec", l, "self.wq"));
    nc::Array k = linear(h, m_, layer_name("dec", l, "self.wk"));
    nc::Array v = linear(h, m_, layer_name("dec", l, "self.wv"));
    for (std::size_t i = 0; i < b; ++i) {
      Seq& s = seqs_[which[i]];
      s.k[l].insert(s.k[l].end(), k.row(i).begin(), k.row(i).end());
      s.v[l].insert(s.v[l].end(), v.row(i).begin(), v.row(i).end());
      const std::size_t n = s.len + 1;
      const std::size_t k0 = global ? 0 : s.run_start;
      kernels::AttnShape shape = one;
      shape.n_k = n;
      const kernels::AttnBlock block{.q0 = 0, .nq = 1, .k0 = k0, .nk = n - k0};
      kernels::parallel::attention_forward(q.data() + i * d, s.k[l].data(), s.v[l].data(), shape,
                                           std::span(&block, 1), att.data() + i * d, nullptr);
    }
    add_into(x, linear(att, m_, layer_name("dec", l, "self.wo")));

    nc::Array c = layer_norm_values(m_, x, layer_name("dec", l, "lnc"));
    nc::Array cq = linear(c, m_, layer_name("dec", l, "cross.wq"));
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t sidx = which[i];
      const Seq& s = seqs_[sidx];
      const nc::IndexRange r = src_.sequence(sidx);
      std::size_t k0 = r.begin, k1 = r.end;
      if (!global) {
        while (k0 < r.end && src_.tags.tags[k0] != s.cur_tag) ++k0;
        k1 = k0;
        while (k1 < r.end && src_.tags.tags[k1] == s.cur_tag) ++k1;
      }
      std::fill(att.row(i).begin(), att.row(i).end(), 0.0);
      if (k1 == k0) continue;
      kernels::AttnShape shape = one;
      shape.n_k = enc_.rows();
      const kernels::AttnBlock block{.q0 = 0, .nq = 1, .k0 = k0, .nk = k1 - k0};
      kernels::parallel::attention_forward(cq.data() + i * d, cross_k_[l].data(),
                                           cross_v_[l].data(), shape, std::span(&block, 1),
                                           att.data() + i * d, nullptr);
    }
    add_into(x, linear(att, m_, layer_name("dec", l, "cross.wo")));
    add_into(x, ffn_values(m_, layer_norm_values(m_, x, layer_name("dec", l, "ln2")),
                           layer_name("dec", l, "ff")));
  }
  for (std::size_t i = 0; i < b; ++i) ++seqs_[which[i]].len;
  nc::Array hid = layer_norm_values(m_, x, "dec.ln");
  return nc::linear_forward(hid, arr(m_, "out.w"), &arr(m_, "out.b"));
}

}  // namespace natdoc
