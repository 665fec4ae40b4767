// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "natdoc/errors.hpp"
#include "natdoc/eval.hpp"

namespace natdoc {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train: " + m); };
  if (steps == 0) fail("steps must be positive");
  if (batch_tokens == 0) fail("batch_tokens must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (warmup == 0) fail("warmup must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(eps > 0.0)) fail("eps must be positive");
  if (!(clip_norm >= 0.0)) fail("clip_norm must be non-negative");
  if (!(w_len >= 0.0)) fail("w_len must be non-negative");
  for (double g : {glance_start, glance_end})
    if (!(g >= 0.0 && g <= 1.0)) fail("glancing ratios must lie in [0, 1]");
  if (eval_every == 0 || log_every == 0) fail("eval_every and log_every must be positive");
  if (max_segment_len == 0) fail("max_segment_len must be positive");
}

double TrainConfig::learning_rate(std::size_t step) const {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(warmup);
  return lr * std::min(s / w, std::sqrt(w / s));
}

double TrainConfig::glance_ratio(std::size_t step) const {
  const double f = steps > 1 ? static_cast<double>(std::min(step, steps - 1)) / static_cast<double>(steps - 1) : 0.0;
  return glance_start + (glance_end - glance_start) * f;
}

Adam::Adam(const std::vector<nc::Array>& params, double beta1, double beta2, double eps)
    : b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& p : params) {
    m_.emplace_back(p.shape(), 0.0);
    v_.emplace_back(p.shape(), 0.0);
  }
}

void Adam::step(std::vector<nc::Array>& params, const std::vector<nc::Array>& grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw ContractError("Adam: parameter count changed");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].data();
    const double* g = grads[i].data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      m[k] = b1_ * m[k] + (1.0 - b1_) * g[k];
      v[k] = b2_ * v[k] + (1.0 - b2_) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

std::vector<std::vector<std::size_t>> token_batches(const std::vector<Segment>& segs, std::size_t batch_tokens,
                                                    std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(segs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + epoch);
  // Fisher-Yates with explicit draws so the order does not depend on the
  // standard library's shuffle.
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur;
  std::size_t tokens = 0;
  for (std::size_t k : order) {
    const std::size_t n = segs[k].src_len() + segs[k].tgt_len();
    if (!cur.empty() && tokens + n > batch_tokens) {
      out.push_back(std::move(cur));
      cur.clear();
      tokens = 0;
    }
    cur.push_back(k);
    tokens += n;
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

StepResult loss_and_gradients(const Model& model, std::span<const Segment* const> batch,
                              const loss::LossOptions& opt, std::mt19937_64& rng) {
  nc::Graph g;
  std::vector<nc::Var> vars;
  for (const auto& a : model.arrays()) vars.push_back(g.parameter(a));
  Forward f(model, g);
  f.bind(vars);
  const loss::LossResult r = loss::composite_loss(f, batch, opt, rng);
  StepResult out;
  if (!r.loss.valid()) return out;
  out.valid = true;
  out.loss = r.loss.value()[0];
  if (std::isfinite(out.loss)) out.grads = nc::gradients(r.loss, vars);
  return out;
}

namespace {

std::string log_line(std::size_t step, double loss, double dev) {
  char buf[128];
  if (dev < 0.0)
    std::snprintf(buf, sizeof buf, "step=%zu loss=%.6f dev_bleu=NA", step, loss);
  else
    std::snprintf(buf, sizeof buf, "step=%zu loss=%.6f dev_bleu=%.2f", step, loss, dev);
  return buf;
}

double dev_bleu(const Model& m, const Vocab& vocab, const std::vector<DocumentPair>& dev, std::size_t max_len) {
  DocTranslateOptions opt;
  opt.batch = 16;
  opt.max_len = max_len;
  return d_bleu(translate_documents(m, vocab, dev, opt).docs, dev).score;
}

}  // namespace

TrainResult train_model(const ModelConfig& cfg, const Vocab& vocab, const std::vector<DocumentPair>& train,
                        const std::vector<DocumentPair>& dev, const TrainConfig& tc, std::ostream* log) {
  cfg.validate();
  tc.validate();
  if (cfg.vocab_size != vocab.size())
    throw ConfigError("train: model vocab_size " + std::to_string(cfg.vocab_size) + " but vocabulary has " +
                      std::to_string(vocab.size()) + " tokens");
  std::vector<Segment> segs;
  std::size_t unusable = 0;
  for (auto& s : segment_documents(train, vocab, tc.max_segment_len)) {
    if (s.tgt.empty()) throw DataError("train: document '" + s.doc_id + "' has no target");
    // Distilled targets can miss sentences or come out empty.
    if (s.tgt.size() != s.src.size() || s.tgt_len() == 0) {
      ++unusable;
      continue;
    }
    segs.push_back(std::move(s));
  }
  if (segs.empty()) throw DataError("train: empty training corpus");

  Model model(cfg, tc.seed);
  Adam adam(model.arrays(), tc.beta1, tc.beta2, tc.eps);
  std::mt19937_64 rng(tc.seed ^ 0xC0FFEEULL);
  TrainResult res{model};
  auto emit = [&](const std::string& line) {
    res.log.push_back(line);
    if (log) *log << line << '\n' << std::flush;
  };

  res.skipped_segments = unusable;
  if (unusable)
    emit("skipped " + std::to_string(unusable) + " segments with an empty target or a sentence count mismatch");

  std::size_t epoch = 0, cursor = 0;
  auto batches = token_batches(segs, tc.batch_tokens, tc.seed, epoch);
  double acc = 0.0;
  std::size_t acc_n = 0;
  for (std::size_t u = 0; u < tc.steps; ++u) {
    if (cursor == batches.size()) {
      batches = token_batches(segs, tc.batch_tokens, tc.seed, ++epoch);
      cursor = 0;
    }
    const std::size_t batch_id = epoch * 1000000 + cursor;
    std::vector<const Segment*> ptrs;
    for (std::size_t k : batches[cursor]) ptrs.push_back(&segs[k]);
    ++cursor;

    loss::LossOptions lo;
    lo.w_len = tc.w_len;
    lo.glance_ratio = tc.glance_ratio(u);
    StepResult st = loss_and_gradients(model, ptrs, lo, rng);
    auto abort = [&](const std::string& what) {
      const std::string msg = what + " at step " + std::to_string(u) + ", batch " + std::to_string(batch_id) +
                              " (epoch " + std::to_string(epoch) + ", first document '" + ptrs.front()->doc_id + "')";
      emit("abort " + msg);
      throw NumericError(msg);
    };
    if (!st.valid) {
      ++res.skipped_batches;
    } else {
      if (!std::isfinite(st.loss)) abort("non-finite loss");
      double norm2 = 0.0;
      for (const auto& g : st.grads)
        for (double x : g.values()) norm2 += x * x;
      if (!std::isfinite(norm2)) abort("non-finite gradient");
      if (tc.clip_norm > 0.0 && std::sqrt(norm2) > tc.clip_norm) {
        const double s = tc.clip_norm / std::sqrt(norm2);
        for (auto& g : st.grads)
          for (double& x : g.values()) x *= s;
      }
      acc += st.loss;
      ++acc_n;
      if (u == 0) {
        emit(log_line(0, st.loss, -1.0));
        acc = 0.0;
        acc_n = 0;
      }
      adam.step(model.arrays(), st.grads, tc.learning_rate(u + 1));
    }

    const std::size_t done = u + 1;
    const bool eval = done % tc.eval_every == 0 || done == tc.steps;
    double dev_score = -1.0;
    if (eval && !dev.empty()) {
      dev_score = dev_bleu(model, vocab, dev, tc.max_segment_len);
      if (dev_score > res.best_dev_bleu) {
        res.best_dev_bleu = dev_score;
        res.best_step = done;
        res.best.arrays() = model.arrays();
      }
    }
    if (eval || done % tc.log_every == 0) {
      emit(log_line(done, acc_n ? acc / static_cast<double>(acc_n) : 0.0, dev_score));
      acc = 0.0;
      acc_n = 0;
    }
  }
  if (dev.empty()) {
    res.best.arrays() = model.arrays();
    res.best_step = tc.steps;
  }
  res.steps = tc.steps;
  return res;
}

}  // namespace natdoc
