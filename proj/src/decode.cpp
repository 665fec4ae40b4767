// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/decode.hpp"

#include <chrono>
#include <numeric>

#include "natdoc/errors.hpp"
#include "natdoc/kernels.hpp"

namespace natdoc {

namespace {

constexpr double kNegInf = nc::kLogZero;

bool is_marker(int t) { return t == kPad || t == kBos || t == kEos || t == kBlank; }

std::vector<int> strip_markers(std::span<const int> t) {
  std::vector<int> out;
  for (int x : t)
    if (!is_marker(x)) out.push_back(x);
  return out;
}

void finalize(Translation& tr) {
  tr.tokens.clear();
  for (const auto& s : tr.sentences) tr.tokens.insert(tr.tokens.end(), s.begin(), s.end());
}

Translation failed(const Segment& seg, const std::string& mode, const std::string& why) {
  Translation tr;
  tr.mode = mode;
  tr.sentences.assign(seg.sentences(), {});
  tr.diagnostics.push_back("segment '" + seg.doc_id + "': " + why);
  return tr;
}

std::string mode_name(Variant v, DagMode dm) {
  if (v == Variant::at_teacher) return "at_greedy";
  if (is_ctc(v)) return "ctc_collapse";
  if (is_dag(v)) return dm == DagMode::lookahead ? "dag_lookahead" : "dag_greedy";
  return "nat_argmax";
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

nc::Array take_rows(const nc::Array& a, nc::IndexRange r) {
  nc::Array out = nc::Array::matrix(r.size(), a.cols());
  std::copy(a.data() + r.begin * a.cols(), a.data() + r.end * a.cols(), out.data());
  return out;
}

}  // namespace

std::vector<int> nat_argmax(const nc::Array& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) out[r] = static_cast<int>(kernels::argmax(logits.row(r)));
  return out;
}

std::vector<int> ctc_collapse(std::span<const int> tokens, int blank) {
  std::vector<int> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0 && tokens[i] == tokens[i - 1]) continue;
    if (tokens[i] != blank) out.push_back(tokens[i]);
  }
  return out;
}

std::vector<std::size_t> dag_path(const loss::DagGraph& g, DagMode mode) {
  const std::size_t m = g.structure.vertices;
  if (m == 0) throw DecodeError("dag: empty graph");
  const nc::Array& tok = g.token_logp;
  const nc::Array& tr = g.trans_logp;
  std::vector<double> best(m);
  for (std::size_t j = 0; j < m; ++j) best[j] = tok(j, kernels::argmax(tok.row(j)));
  std::vector<std::size_t> path = {0};
  std::size_t i = 0;
  while (i + 1 < m) {
    std::size_t next = m;
    double score = kNegInf;
    for (std::size_t j = i + 1; j < m; ++j) {
      const double s = mode == DagMode::lookahead ? tr(i, j) + best[j] : tr(i, j);
      if (s > score) {
        score = s;
        next = j;
      }
    }
    if (next == m)
      throw DecodeError("dag: dead end at vertex " + std::to_string(i) + " of " + std::to_string(m) +
                        " (no finite outgoing transition)");
    path.push_back(next);
    i = next;
  }
  return path;
}

namespace {

std::vector<int> path_tokens(const loss::DagGraph& g, const std::vector<std::size_t>& path) {
  std::vector<int> out;
  for (std::size_t v : path) out.push_back(static_cast<int>(kernels::argmax(g.token_logp.row(v))));
  return out;
}

}  // namespace

std::vector<int> dag_lookahead(const loss::DagGraph& g) { return path_tokens(g, dag_path(g, DagMode::lookahead)); }
std::vector<int> dag_greedy(const loss::DagGraph& g) { return path_tokens(g, dag_path(g, DagMode::greedy)); }

std::vector<Translation> at_greedy(const Model& model, std::span<const Segment* const> segs, std::size_t max_len) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig& cfg = model.config();
  if (cfg.variant != Variant::at_teacher) throw ConfigError("at_greedy requires the at_teacher variant");
  std::vector<Translation> out(segs.size());
  std::vector<const Segment*> live;
  std::vector<std::size_t> slot;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    out[i].mode = "at_greedy";
    if (segs[i]->sentences() == 0) continue;
    live.push_back(segs[i]);
    slot.push_back(i);
  }
  if (!live.empty()) {
    const SeqBatch src = source_batch(cfg, live);
    TeacherStepper st(model, src);
    struct State {
      std::vector<int> generated;
      std::size_t eos = 0, limit = 0;
      bool done = false;
    };
    std::vector<State> states(live.size());
    std::vector<std::size_t> which(live.size());
    std::vector<int> feed(live.size(), kBos);
    std::iota(which.begin(), which.end(), 0);
    for (std::size_t s = 0; s < live.size(); ++s)
      states[s].limit = max_len > 0 ? max_len : 2 * live[s]->src_len() + 8;
    while (!which.empty()) {
      const nc::Array logits = st.step(which, feed);
      std::vector<std::size_t> next_which;
      std::vector<int> next_feed;
      for (std::size_t i = 0; i < which.size(); ++i) {
        State& s = states[which[i]];
        Translation& tr = out[slot[which[i]]];
        const int tok = static_cast<int>(kernels::argmax(logits.row(i)));
        s.generated.push_back(tok);
        ++tr.forward_passes;
        if (tok == kEos && ++s.eos == live[which[i]]->sentences()) continue;
        if (s.generated.size() >= s.limit) {
          tr.truncated = true;
          continue;
        }
        next_which.push_back(which[i]);
        next_feed.push_back(tok);
      }
      which = std::move(next_which);
      feed = std::move(next_feed);
    }
    for (std::size_t s = 0; s < live.size(); ++s) {
      Translation& tr = out[slot[s]];
      const std::size_t k = live[s]->sentences();
      std::vector<int> cur;
      for (int tok : states[s].generated) {
        if (tok == kEos) {
          tr.sentences.push_back(strip_markers(cur));
          cur.clear();
        } else {
          cur.push_back(tok);
        }
      }
      if (tr.sentences.size() < k && !cur.empty()) tr.sentences.push_back(strip_markers(cur));
      if (tr.truncated)
        tr.diagnostics.push_back("segment '" + live[s]->doc_id + "': truncated at " +
                                 std::to_string(states[s].generated.size()) + " tokens");
      tr.sentences.resize(k);
      finalize(tr);
    }
  }
  const double per = seconds_since(t0) / static_cast<double>(std::max<std::size_t>(1, segs.size()));
  for (Translation& tr : out) tr.seconds = per;
  return out;
}

namespace {

// Non-autoregressive decoding of segments that passed validation.
std::vector<Translation> nat_batch(const Model& model, const std::vector<const Segment*>& segs,
                                   const DecodeOptions& opt) {
  const ModelConfig& cfg = model.config();
  const Variant v = cfg.variant;
  const bool gtrans = is_gtrans(v);
  const std::string mode = mode_name(v, opt.dag_mode);
  const SeqBatch src = source_batch(cfg, segs);
  nc::Graph g(false);
  Forward f(model, g);
  f.isolate_target_sentences(!opt.target_context);
  EncoderStates enc = f.encode(src);

  std::vector<std::vector<std::size_t>> rows(segs.size());
  bool markers = false;
  if (is_ctc(v)) {
    for (std::size_t s = 0; s < segs.size(); ++s) {
      if (gtrans)
        for (const auto& x : segs[s]->src) rows[s].push_back(cfg.ctc_upsample * x.size());
      else
        rows[s].push_back(cfg.ctc_upsample * segs[s]->src_len());
    }
  } else if (is_dag(v)) {
    markers = true;
    for (std::size_t s = 0; s < segs.size(); ++s) {
      if (gtrans)
        for (const auto& x : segs[s]->src) rows[s].push_back(cfg.dag_lambda * x.size());
      else
        rows[s].push_back(std::min(cfg.dag_lambda * segs[s]->src_len(), cfg.dag_max_vertices));
    }
  } else {
    markers = gtrans;
    const auto spans = length_spans(cfg, src);
    std::vector<nc::IndexRange> flat;
    for (const auto& sp : spans) flat.insert(flat.end(), sp.begin(), sp.end());
    const nc::Array len_logits = f.length_logits(enc, flat).value();
    std::size_t r = 0;
    for (std::size_t s = 0; s < segs.size(); ++s)
      for (std::size_t j = 0; j < spans[s].size(); ++j, ++r) {
        const std::size_t t = kernels::argmax(len_logits.row(r)) + 1;
        rows[s].push_back(gtrans ? t + 2 : t);
      }
  }

  DecoderLayout lay = build_decoder_layout(cfg, src, rows, markers);
  nc::Var hidden = f.decode(f.decoder_inputs(lay.tgt, enc, lay.copy_rows), lay.tgt, enc, false);
  const nc::Array logits = f.token_logits(hidden).value();

  std::vector<Translation> out(segs.size());
  for (std::size_t s = 0; s < segs.size(); ++s) {
    Translation& tr = out[s];
    tr.mode = mode;
    tr.forward_passes = 1;
    const nc::IndexRange seq = lay.tgt.sequence(s);
    if (is_dag(v)) {
      const loss::DagStructure st =
          gtrans ? loss::DagStructure::sentences(rows[s]) : loss::DagStructure::plain(rows[s][0]);
      const nc::Array h = take_rows(hidden.value(), seq);
      const nc::Array trans = f.transition_logits(g.constant(h)).value();
      const loss::DagGraph dg = loss::make_dag_graph(take_rows(logits, seq), trans, st, true);
      try {
        const std::vector<std::size_t> path = dag_path(dg, opt.dag_mode);
        tr.sentences.assign(st.bos_vertices.size(), {});
        for (std::size_t vtx : path) {
          const int tok = static_cast<int>(kernels::argmax(dg.token_logp.row(vtx)));
          if (!is_marker(tok)) tr.sentences[static_cast<std::size_t>(st.vertex_tags[vtx])].push_back(tok);
        }
      } catch (const DecodeError& e) {
        tr.sentences.assign(gtrans ? segs[s]->sentences() : 1, {});
        tr.diagnostics.push_back("segment '" + segs[s]->doc_id + "': " + e.what());
      }
    } else {
      const std::vector<int> pred = nat_argmax(take_rows(logits, seq));
      for (const nc::IndexRange b : lay.blocks[s]) {
        std::span<const int> block(pred.data() + (b.begin - seq.begin), b.size());
        if (is_ctc(v)) tr.sentences.push_back(strip_markers(ctc_collapse(block, kBlank)));
        else if (markers) tr.sentences.push_back(strip_markers(block.subspan(1, block.size() - 2)));
        else tr.sentences.push_back(strip_markers(block));
      }
    }
    finalize(tr);
  }
  return out;
}

std::string validate(const ModelConfig& cfg, const Segment& seg) {
  for (const auto& x : seg.src)
    if (x.empty()) return "empty source sentence";
  if (cfg.variant == Variant::gtrans_dag && cfg.dag_lambda * seg.src_len() > cfg.dag_max_vertices)
    return "needs more than dag_max_vertices vertices";
  return {};
}

}  // namespace

std::vector<Translation> translate_batch(const Model& model, std::span<const Segment* const> segs,
                                         const DecodeOptions& opt) {
  const ModelConfig& cfg = model.config();
  if (cfg.variant == Variant::at_teacher) {
    std::vector<Translation> out(segs.size());
    std::vector<const Segment*> ok;
    std::vector<std::size_t> slot;
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const std::string why = validate(cfg, *segs[i]);
      if (why.empty()) {
        ok.push_back(segs[i]);
        slot.push_back(i);
      } else {
        out[i] = failed(*segs[i], "at_greedy", why);
      }
    }
    std::vector<Translation> res = at_greedy(model, ok, opt.max_len);
    for (std::size_t i = 0; i < ok.size(); ++i) out[slot[i]] = std::move(res[i]);
    return out;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const std::string mode = mode_name(cfg.variant, opt.dag_mode);
  std::vector<Translation> out(segs.size());
  std::vector<const Segment*> ok;
  std::vector<std::size_t> slot;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    out[i].mode = mode;
    if (segs[i]->sentences() == 0) continue;
    const std::string why = validate(cfg, *segs[i]);
    if (!why.empty()) {
      out[i] = failed(*segs[i], mode, why);
      continue;
    }
    ok.push_back(segs[i]);
    slot.push_back(i);
  }
  if (!ok.empty()) {
    std::vector<Translation> res;
    try {
      res = nat_batch(model, ok, opt);
    } catch (const std::exception&) {
      if (ok.size() == 1) throw;
      for (const Segment* s : ok) {
        try {
          res.push_back(nat_batch(model, {s}, opt)[0]);
        } catch (const std::exception& e) {
          res.push_back(failed(*s, mode, e.what()));
        }
      }
    }
    for (std::size_t i = 0; i < ok.size(); ++i) out[slot[i]] = std::move(res[i]);
  }
  const double per = seconds_since(t0) / static_cast<double>(std::max<std::size_t>(1, segs.size()));
  for (Translation& tr : out) tr.seconds = per;
  return out;
}

Translation translate_segment(const Model& model, const Segment& seg, const DecodeOptions& opt) {
  const Segment* p = &seg;
  try {
    return translate_batch(model, std::span(&p, 1), opt)[0];
  } catch (const std::exception& e) {
    return failed(seg, mode_name(model.config().variant, opt.dag_mode), e.what());
  }
}

}  // namespace natdoc
