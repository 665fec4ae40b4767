// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/data.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "natdoc/decode.hpp"
#include "natdoc/errors.hpp"

namespace natdoc {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> s = {"<pad>", "<s>", "</s>", "<blank>", "<unk>"};
  return s;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ULL ^ (b + 0x632BE59BD9B4E019ULL + (a << 6) + (a >> 2));
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  return x;
}

// Uniform integer in [0, n) without relying on distribution implementations,
// so corpora are identical across standard libraries.
std::size_t uniform(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

}  // namespace

// ---- Vocab -----------------------------------------------------------------

Vocab::Vocab() : Vocab(special_tokens()) {}

Vocab::Vocab(const std::vector<std::string>& tokens) : tokens_(tokens) {
  const auto& sp = special_tokens();
  if (tokens.size() < sp.size() || !std::equal(sp.begin(), sp.end(), tokens.begin()))
    throw DataError("vocabulary must start with " + join_tokens(sp));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty() || tokens_[i].find_first_of(" \t\r\n") != std::string::npos)
      throw DataError("vocabulary token " + std::to_string(i) + " is empty or contains whitespace");
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw DataError("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

Vocab Vocab::build(const std::vector<DocumentPair>& docs) {
  std::set<std::string> seen;
  for (const auto& d : docs)
    for (const auto* side : {&d.src, &d.tgt})
      for (const auto& s : *side)
        for (auto& t : split_tokens(s)) seen.insert(std::move(t));
  std::vector<std::string> tokens = special_tokens();
  for (const auto& t : seen)
    if (std::find(tokens.begin(), tokens.end(), t) == tokens.end()) tokens.push_back(t);
  return Vocab(tokens);
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw DataError("token id " + std::to_string(id) + " outside the vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& sentence) const {
  std::vector<int> out;
  for (const auto& t : split_tokens(sentence)) out.push_back(id(t));
  return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> t;
  for (int i : ids) t.push_back(token(i));
  return join_tokens(t);
}

std::vector<std::string> split_tokens(const std::string& sentence) {
  std::vector<std::string> out;
  std::istringstream in(sentence);
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---- synthetic language ---------------------------------------------------

void SynthConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("synth: vocab_size must be >= 2");
  if (sentences < 1) throw ConfigError("synth: sentences must be >= 1");
  if (min_len < 1 || max_len < min_len) throw ConfigError("synth: need 1 <= min_len <= max_len");
  if (!(ambiguity >= 0.0 && ambiguity <= 1.0)) throw ConfigError("synth: ambiguity must lie in [0, 1]");
  if (!(variation >= 0.0 && variation <= 1.0)) throw ConfigError("synth: variation must lie in [0, 1]");
  const double a = ambiguity * static_cast<double>(vocab_size);
  if (ambiguity > 0.0 && a < 1.0)
    throw ConfigError("synth: vocab_size " + std::to_string(vocab_size) + " is too small for ambiguity " +
                      std::to_string(ambiguity) + " (no ambiguous type)");
}

SynthLanguage::SynthLanguage(const SynthConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  const std::size_t v = cfg.vocab_size;
  const auto n_amb = static_cast<std::size_t>(std::llround(cfg.ambiguity * static_cast<double>(v)));
  std::mt19937_64 rng(mix(cfg.seed, 0x1A2B));
  for (std::size_t i = 0; i < v; ++i) {
    src_types_.push_back("x" + std::to_string(i));
    src_index_[src_types_.back()] = i;
  }
  std::vector<std::size_t> order(v);
  for (std::size_t i = 0; i < v; ++i) order[i] = i;
  for (std::size_t i = v; i > 1; --i) std::swap(order[i - 1], order[uniform(rng, i)]);
  ambiguous_.assign(v, false);
  for (std::size_t i = 0; i < n_amb; ++i) ambiguous_[order[i]] = true;
  // Target types y0.. are dealt out in a random order.
  std::vector<std::size_t> tgt_ids(v + n_amb);
  for (std::size_t i = 0; i < tgt_ids.size(); ++i) tgt_ids[i] = i;
  for (std::size_t i = tgt_ids.size(); i > 1; --i) std::swap(tgt_ids[i - 1], tgt_ids[uniform(rng, i)]);
  std::size_t next = 0;
  tgt_.resize(v);
  for (std::size_t i = 0; i < v; ++i) {
    const std::string a = "y" + std::to_string(tgt_ids[next++]);
    tgt_[i] = {a, ambiguous_[i] ? "y" + std::to_string(tgt_ids[next++]) : a};
  }
  tgt_selector_ = {"Y:0", "Y:1"};
}

const std::string& SynthLanguage::filler() {
  static const std::string f = "uh";
  return f;
}

const std::string& SynthLanguage::selector(int s) {
  static const std::array<std::string, 2> sel = {"X:0", "X:1"};
  return sel.at(static_cast<std::size_t>(s));
}

bool SynthLanguage::ambiguous(const std::string& tok) const {
  auto it = src_index_.find(tok);
  return it != src_index_.end() && ambiguous_[it->second];
}

std::size_t SynthLanguage::ambiguous_types() const {
  return static_cast<std::size_t>(std::count(ambiguous_.begin(), ambiguous_.end(), true));
}

const std::string& SynthLanguage::translate(const std::string& tok, int s) const {
  if (tok == selector(0) || tok == selector(1)) return tgt_selector_[tok == selector(1) ? 1 : 0];
  auto it = src_index_.find(tok);
  if (it == src_index_.end()) throw DataError("synth: unknown source token '" + tok + "'");
  return tgt_[it->second][static_cast<std::size_t>(s)];
}

int SynthLanguage::selector_of(const std::vector<std::string>& src) const {
  if (!src.empty()) {
    const auto toks = split_tokens(src[0]);
    if (!toks.empty() && toks[0] == selector(0)) return 0;
    if (!toks.empty() && toks[0] == selector(1)) return 1;
  }
  throw DataError("synth: document does not start with a selector token");
}

std::vector<std::string> SynthLanguage::oracle(const std::vector<std::string>& src) const {
  const int s = selector_of(src);
  std::vector<std::string> out;
  for (const auto& sent : src) {
    std::vector<std::string> t;
    for (const auto& tok : split_tokens(sent)) t.push_back(translate(tok, s));
    out.push_back(join_tokens(t));
  }
  return out;
}

Vocab SynthLanguage::vocab() const {
  std::set<std::string> all = {selector(0), selector(1), tgt_selector_[0], tgt_selector_[1], filler()};
  for (std::size_t i = 0; i < src_types_.size(); ++i) {
    all.insert(src_types_[i]);
    all.insert(tgt_[i][0]);
    all.insert(tgt_[i][1]);
  }
  std::vector<std::string> tokens = special_tokens();
  tokens.insert(tokens.end(), all.begin(), all.end());
  return Vocab(tokens);
}

std::vector<DocumentPair> gen_corpus(const SynthConfig& cfg, std::size_t n_docs, const GenOptions& opt) {
  const SynthLanguage lang(cfg);
  const std::size_t k = opt.sentences ? opt.sentences : cfg.sentences;
  std::mt19937_64 rng(mix(cfg.seed, 0x5EED0000ULL + opt.stream));
  std::vector<DocumentPair> out;
  out.reserve(n_docs);
  for (std::size_t d = 0; d < n_docs; ++d) {
    DocumentPair doc;
    char id[32];
    std::snprintf(id, sizeof id, "%06zu", d);
    doc.id = opt.prefix + "-" + id;
    const int sel = static_cast<int>(uniform(rng, 2));
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t len = cfg.min_len + uniform(rng, cfg.max_len - cfg.min_len + 1);
      std::vector<std::string> toks;
      if (j == 0) toks.push_back(SynthLanguage::selector(sel));
      while (toks.size() < len) toks.push_back(lang.source_types()[uniform(rng, cfg.vocab_size)]);
      doc.src.push_back(join_tokens(toks));
    }
    doc.tgt = lang.oracle(doc.src);
    if (opt.variation) {
      for (auto& sent : doc.tgt) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        if (u >= cfg.variation) continue;
        auto toks = split_tokens(sent);
        toks.insert(toks.begin() + static_cast<long>(uniform(rng, toks.size() + 1)), SynthLanguage::filler());
        sent = join_tokens(toks);
      }
    }
    out.push_back(std::move(doc));
  }
  return out;
}

CorpusSplits gen_splits(const SynthConfig& cfg) {
  CorpusSplits s;
  s.train = gen_corpus(cfg, cfg.train_docs, {.prefix = "train", .stream = 1, .sentences = 0, .variation = true});
  s.dev = gen_corpus(cfg, cfg.dev_docs, {.prefix = "dev", .stream = 2});
  s.test = gen_corpus(cfg, cfg.test_docs, {.prefix = "test", .stream = 3});
  return s;
}

AmbiguityScore ambiguous_accuracy(const SynthLanguage& lang, const std::vector<DocumentPair>& src_docs,
                                  const std::vector<DocumentPair>& hyps, bool skip_first_sentence) {
  if (src_docs.size() != hyps.size()) throw DataError("ambiguous_accuracy: document counts differ");
  AmbiguityScore score;
  auto tally = [&](const std::vector<std::string>& src_sents, const std::vector<std::string>& hyp_sents, int sel) {
    std::map<std::string, std::size_t> want, got;
    std::size_t n = 0;
    for (const auto& s : src_sents)
      for (const auto& t : split_tokens(s))
        if (lang.ambiguous(t)) {
          ++want[lang.translate(t, sel)];
          ++n;
        }
    for (const auto& s : hyp_sents)
      for (const auto& t : split_tokens(s)) ++got[t];
    for (const auto& [tok, c] : want) score.correct += std::min(c, got[tok]);
    score.total += n;
  };
  for (std::size_t d = 0; d < src_docs.size(); ++d) {
    const auto& src = src_docs[d].src;
    const auto& hyp = hyps[d].tgt;
    const int sel = lang.selector_of(src);
    if (hyp.size() == src.size()) {
      for (std::size_t j = skip_first_sentence ? 1 : 0; j < src.size(); ++j) tally({src[j]}, {hyp[j]}, sel);
    } else {
      tally(src, hyp, sel);
    }
  }
  return score;
}

// ---- segmentation -----------------------------------------------------------

std::vector<Segment> segment_documents(const std::vector<DocumentPair>& docs, const Vocab& vocab,
                                       std::size_t max_len) {
  std::vector<Segment> out;
  for (const auto& d : docs) {
    if (!d.tgt.empty() && d.tgt.size() != d.src.size())
      throw DataError("document '" + d.id + "': " + std::to_string(d.src.size()) + " source sentences but " +
                      std::to_string(d.tgt.size()) + " target sentences");
    Segment cur;
    std::size_t len = 0;
    for (std::size_t j = 0; j < d.src.size(); ++j) {
      std::vector<int> x = vocab.encode(d.src[j]);
      if (x.size() > max_len)
        throw DataError("document '" + d.id + "': sentence " + std::to_string(j) + " has " +
                        std::to_string(x.size()) + " tokens, above the segment limit " + std::to_string(max_len));
      if (!cur.src.empty() && len + x.size() > max_len) {
        out.push_back(std::move(cur));
        cur = Segment{};
        len = 0;
      }
      if (cur.src.empty()) {
        cur.doc_id = d.id;
        cur.first_sentence = j;
      }
      len += x.size();
      cur.src.push_back(std::move(x));
      if (!d.tgt.empty()) cur.tgt.push_back(vocab.encode(d.tgt[j]));
    }
    if (!cur.src.empty()) out.push_back(std::move(cur));
  }
  return out;
}

SegmentTags assign_group_tags(const Segment& seg) {
  auto lengths = [](const std::vector<std::vector<int>>& sents) {
    std::vector<std::size_t> l;
    for (const auto& s : sents) {
      if (s.empty()) throw DataError("assign_group_tags: empty sentence has no tag");
      l.push_back(s.size());
    }
    return l;
  };
  const auto ls = lengths(seg.src);
  const auto lt = lengths(seg.tgt);
  return {attn::GroupTags::from_lengths(ls), attn::GroupTags::from_lengths(lt)};
}

std::vector<DocumentPair> assemble_documents(const std::vector<DocumentPair>& docs, const std::vector<Segment>& segs,
                                             const std::vector<std::vector<std::vector<int>>>& seg_sentences,
                                             const Vocab& vocab) {
  if (segs.size() != seg_sentences.size()) throw DataError("assemble_documents: one output per segment");
  std::vector<DocumentPair> out;
  std::size_t k = 0;
  for (const auto& d : docs) {
    DocumentPair o{d.id, d.src, {}};
    std::size_t covered = 0;
    while (covered < d.src.size()) {
      if (k >= segs.size() || segs[k].doc_id != d.id || segs[k].first_sentence != covered)
        throw DataError("assemble_documents: segments do not cover document '" + d.id + "'");
      if (seg_sentences[k].size() == segs[k].sentences()) {
        for (const auto& sent : seg_sentences[k]) o.tgt.push_back(vocab.decode(sent));
      } else {
        o.tgt.push_back(vocab.decode(flatten(seg_sentences[k])));
      }
      covered += segs[k].sentences();
      ++k;
    }
    out.push_back(std::move(o));
  }
  return out;
}

// ---- distillation ------------------------------------------------------------

DocTranslation translate_documents(const Model& model, const Vocab& vocab, const std::vector<DocumentPair>& docs,
                                   const DocTranslateOptions& opt) {
  DocTranslation r;
  r.segments = segment_documents(docs, vocab, opt.max_len);
  if (opt.sentence_segments) {
    std::vector<Segment> single;
    for (const auto& s : r.segments)
      for (std::size_t j = 0; j < s.sentences(); ++j) {
        Segment one;
        one.doc_id = s.doc_id;
        one.first_sentence = s.first_sentence + j;
        one.src = {s.src[j]};
        if (!s.tgt.empty()) one.tgt = {s.tgt[j]};
        single.push_back(std::move(one));
      }
    r.segments = std::move(single);
  }
  const auto& segs = r.segments;
  r.outputs.resize(segs.size());
  const std::size_t b = std::max<std::size_t>(1, opt.batch);
  const long n_batches = static_cast<long>((segs.size() + b - 1) / b);
#pragma omp parallel for schedule(dynamic) if (opt.parallel)
  for (long i = 0; i < n_batches; ++i) {
    const std::size_t lo = static_cast<std::size_t>(i) * b, hi = std::min(segs.size(), lo + b);
    std::vector<const Segment*> ptrs;
    for (std::size_t k = lo; k < hi; ++k) ptrs.push_back(&segs[k]);
    auto tr = translate_batch(model, ptrs, opt.decode);
    for (std::size_t k = lo; k < hi; ++k) r.outputs[k] = std::move(tr[k - lo]);
  }
  std::vector<std::vector<std::vector<int>>> sentences;
  for (const auto& t : r.outputs) sentences.push_back(t.sentences);
  r.docs = assemble_documents(docs, segs, sentences, vocab);
  return r;
}

DistillResult distill_corpus(const Model& teacher, const Vocab& vocab, const std::vector<DocumentPair>& docs,
                             std::size_t batch, std::size_t max_len) {
  if (teacher.config().variant != Variant::at_teacher) throw ConfigError("distill: checkpoint is not a teacher");
  DocTranslateOptions opt;
  opt.batch = batch;
  opt.max_len = max_len;
  const DocTranslation t = translate_documents(teacher, vocab, docs, opt);
  DistillResult r;
  r.docs = t.docs;
  for (std::size_t k = 0; k < t.segments.size(); ++k)
    if (t.outputs[k].truncated) {
      ++r.truncated;
      const std::string& id = t.segments[k].doc_id;
      if (r.flagged.empty() || r.flagged.back() != id) r.flagged.push_back(id);
    }
  return r;
}

// ---- corpus files ---------------------------------------------------------------

namespace {

std::vector<std::string> string_list(const nlohmann::json& j, const char* field, const std::string& where) {
  if (!j.is_array()) throw DataError(where + ": field '" + field + "' must be a list of strings");
  std::vector<std::string> out;
  for (const auto& s : j) {
    if (!s.is_string()) throw DataError(where + ": field '" + field + "' must be a list of strings");
    out.push_back(s.get<std::string>());
  }
  return out;
}

}  // namespace

std::vector<DocumentPair> parse_corpus(const std::string& text, const std::string& name, bool require_tgt,
                                       bool aligned) {
  std::vector<DocumentPair> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = name + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": malformed record (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError(where + ": record must be an object");
    for (const char* f : {"id", "src"})
      if (!j.contains(f)) throw DataError(where + ": missing field '" + f + "'");
    if (!j["id"].is_string()) throw DataError(where + ": field 'id' must be a string");
    DocumentPair d;
    d.id = j["id"].get<std::string>();
    d.src = string_list(j["src"], "src", where);
    if (j.contains("tgt")) {
      d.tgt = string_list(j["tgt"], "tgt", where);
      if (aligned && d.tgt.size() != d.src.size() && (require_tgt || !d.tgt.empty()))
        throw DataError(where + ": " + std::to_string(d.src.size()) + " src sentences but " +
                        std::to_string(d.tgt.size()) + " tgt sentences");
    } else if (require_tgt) {
      throw DataError(where + ": missing field 'tgt'");
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::string format_corpus(const std::vector<DocumentPair>& docs) {
  std::string out;
  for (const auto& d : docs) {
    nlohmann::ordered_json j;
    j["id"] = d.id;
    j["src"] = d.src;
    j["tgt"] = d.tgt;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<DocumentPair> read_corpus(const std::string& path, bool require_tgt, bool aligned) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_corpus(ss.str(), path, require_tgt, aligned);
}

void write_corpus(const std::string& path, const std::vector<DocumentPair>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus '" + path + "'");
  out << format_corpus(docs);
  if (!out) throw DataError("failed writing corpus '" + path + "'");
}

}  // namespace natdoc
