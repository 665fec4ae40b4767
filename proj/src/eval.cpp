// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/eval.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "natdoc/errors.hpp"

namespace natdoc {

namespace {

template <typename T>
using Ngram = std::vector<T>;

template <typename T>
std::map<Ngram<T>, std::size_t> ngram_counts(const std::vector<T>& s, std::size_t n) {
  std::map<Ngram<T>, std::size_t> c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[Ngram<T>(s.begin() + i, s.begin() + i + n)];
  return c;
}

template <typename T>
BleuReport bleu_impl(const std::vector<std::vector<T>>& hyps, const std::vector<std::vector<T>>& refs,
                     std::size_t max_n) {
  if (refs.empty()) throw ContractError("bleu: empty reference set");
  if (hyps.size() != refs.size())
    throw ContractError("bleu: " + std::to_string(hyps.size()) + " hypotheses for " +
                        std::to_string(refs.size()) + " references");
  if (max_n == 0) throw ContractError("bleu: max_n must be positive");
  BleuReport r;
  r.matches.assign(max_n, 0);
  r.totals.assign(max_n, 0);
  for (std::size_t k = 0; k < hyps.size(); ++k) {
    r.hyp_len += hyps[k].size();
    r.ref_len += refs[k].size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto h = ngram_counts(hyps[k], n);
      const auto g = ngram_counts(refs[k], n);
      for (const auto& [ng, c] : h) {
        r.totals[n - 1] += c;
        const auto it = g.find(ng);
        if (it != g.end()) r.matches[n - 1] += std::min(c, it->second);
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < max_n; ++n) {
    double p = r.totals[n] ? static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]) : 0.0;
    if (p == 0.0 && n >= 1) p = (r.matches[n] + 1.0) / (r.totals[n] + 1.0);
    r.precisions.push_back(p);
    if (p == 0.0)
      zero = true;
    else
      log_sum += std::log(p);
  }
  if (r.hyp_len == 0) {
    r.brevity_penalty = 0.0;
  } else if (r.hyp_len > r.ref_len) {
    r.brevity_penalty = 1.0;
  } else {
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.ref_len) / static_cast<double>(r.hyp_len));
  }
  r.score = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / static_cast<double>(max_n));
  return r;
}

template <typename T>
double repetition_impl(const std::vector<std::vector<T>>& segments, std::size_t n) {
  if (n == 0) throw ContractError("repetition_ratio: n must be positive");
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& s : segments) {
    if (s.size() < n) continue;
    const std::size_t total = s.size() - n + 1;
    const std::size_t distinct = ngram_counts(s, n).size();
    sum += static_cast<double>(total - distinct) / static_cast<double>(total);
    ++used;
  }
  return used ? sum / static_cast<double>(used) : 0.0;
}

std::vector<std::string> doc_tokens(const DocumentPair& d) {
  std::vector<std::string> out;
  for (const auto& s : d.tgt)
    for (auto& t : split_tokens(s)) out.push_back(std::move(t));
  return out;
}

void check_documents(const std::vector<DocumentPair>& hyps, const std::vector<DocumentPair>& refs) {
  if (hyps.size() != refs.size())
    throw MetricError(std::to_string(hyps.size()) + " hypothesis documents for " + std::to_string(refs.size()) +
                      " reference documents");
  for (std::size_t i = 0; i < hyps.size(); ++i)
    if (hyps[i].id != refs[i].id)
      throw MetricError("document " + std::to_string(i) + ": hypothesis '" + hyps[i].id + "' against reference '" +
                        refs[i].id + "'");
}

}  // namespace

BleuReport bleu(const std::vector<std::vector<std::string>>& hyps, const std::vector<std::vector<std::string>>& refs,
                std::size_t max_n) {
  return bleu_impl(hyps, refs, max_n);
}

BleuReport bleu(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs,
                std::size_t max_n) {
  return bleu_impl(hyps, refs, max_n);
}

BleuReport d_bleu(const std::vector<DocumentPair>& hyps, const std::vector<DocumentPair>& refs, std::size_t max_n) {
  check_documents(hyps, refs);
  std::vector<std::vector<std::string>> h, r;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    h.push_back(doc_tokens(hyps[i]));
    r.push_back(doc_tokens(refs[i]));
  }
  return bleu(h, r, max_n);
}

BleuReport s_bleu(const std::vector<DocumentPair>& hyps, const std::vector<DocumentPair>& refs, std::size_t max_n) {
  check_documents(hyps, refs);
  std::vector<std::string> bad;
  std::vector<std::vector<std::string>> h, r;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (hyps[i].tgt.size() != refs[i].tgt.size()) {
      bad.push_back(hyps[i].id + " (" + std::to_string(hyps[i].tgt.size()) + " vs " +
                    std::to_string(refs[i].tgt.size()) + ")");
      continue;
    }
    for (std::size_t j = 0; j < hyps[i].tgt.size(); ++j) {
      h.push_back(split_tokens(hyps[i].tgt[j]));
      r.push_back(split_tokens(refs[i].tgt[j]));
    }
  }
  if (!bad.empty()) {
    std::string msg = "s-BLEU needs sentence-aligned output; sentence counts differ in";
    const std::size_t shown = std::min<std::size_t>(bad.size(), 5);
    for (std::size_t i = 0; i < shown; ++i) msg += (i ? ", " : " ") + bad[i];
    if (bad.size() > shown) msg += " and " + std::to_string(bad.size() - shown) + " more documents";
    throw MetricError(msg);
  }
  return bleu(h, r, max_n);
}

double repetition_ratio(const std::vector<std::vector<std::string>>& segments, std::size_t n) {
  return repetition_impl(segments, n);
}

double repetition_ratio(const std::vector<std::vector<int>>& segments, std::size_t n) {
  return repetition_impl(segments, n);
}

double repetition_ratio(const std::vector<DocumentPair>& docs, std::size_t n) {
  std::vector<std::vector<std::string>> segs;
  for (const auto& d : docs) segs.push_back(doc_tokens(d));
  return repetition_impl(segs, n);
}

// ---- speed -------------------------------------------------------------------

std::vector<Segment> bucket_segments(const std::vector<DocumentPair>& docs, const Vocab& vocab,
                                     const std::string& bucket, std::size_t limit) {
  std::vector<Segment> out;
  if (bucket == "sent") {
    for (const auto& s : segment_documents(docs, vocab, 512)) {
      for (std::size_t j = 0; j < s.sentences() && out.size() < limit; ++j) {
        Segment one;
        one.doc_id = s.doc_id;
        one.first_sentence = s.first_sentence + j;
        one.src = {s.src[j]};
        out.push_back(std::move(one));
      }
      if (out.size() >= limit) break;
    }
    return out;
  }
  std::size_t len = 0;
  try {
    std::size_t used = 0;
    len = std::stoul(bucket, &used);
    if (used != bucket.size() || len == 0) throw std::invalid_argument(bucket);
  } catch (const std::exception&) {
    throw ConfigError("unknown length bucket '" + bucket + "'");
  }
  for (auto& s : segment_documents(docs, vocab, len)) {
    if (2 * s.src_len() <= len) continue;
    s.tgt.clear();
    out.push_back(std::move(s));
    if (out.size() >= limit) break;
  }
  return out;
}

namespace {

double time_bucket(const Model& m, const std::vector<Segment>& segs, std::size_t batch, const DecodeOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t lo = 0; lo < segs.size(); lo += batch) {
    std::vector<const Segment*> ptrs;
    for (std::size_t k = lo; k < std::min(segs.size(), lo + batch); ++k) ptrs.push_back(&segs[k]);
    translate_batch(m, ptrs, opt);
  }
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

SpeedReport bench_speed(const std::vector<BenchModel>& models, const Vocab& vocab,
                        const std::vector<DocumentPair>& docs, const SpeedOptions& opt) {
  if (models.empty()) throw ContractError("bench: no models");
  for (const auto& b : models)
    if (!b.model) throw ContractError("bench: model '" + b.name + "' is missing");
  const auto teacher = std::find_if(models.begin(), models.end(),
                                    [](const BenchModel& b) { return b.model->config().variant == Variant::at_teacher; });
  if (teacher == models.end()) throw ContractError("bench: speedups need a teacher checkpoint");
  for (const auto& b : models)
    if (!b.model->config().same_size(models.front().model->config()))
      throw ConfigError("bench: model '" + b.name + "' differs in size from '" + models.front().name +
                        "'; speedups would not be comparable");
  if (opt.reps == 0) throw ConfigError("bench: reps must be positive");

  const int saved_threads = omp_get_max_threads();
  omp_set_num_threads(std::max(1, opt.threads));
  SpeedReport r;
  for (const auto& bucket : opt.buckets) {
    const std::vector<Segment> segs = bucket_segments(docs, vocab, bucket, opt.segments);
    if (segs.empty()) {
      r.notices.push_back("bucket " + bucket + ": no segments, skipped");
      continue;
    }
    if (segs.size() < opt.segments)
      r.notices.push_back("bucket " + bucket + ": only " + std::to_string(segs.size()) + " segments");
    double tokens = 0.0;
    for (const auto& s : segs) tokens += static_cast<double>(s.src_len());
    tokens /= static_cast<double>(segs.size());
    for (std::size_t batch : opt.batch_sizes) {
      if (batch == 0) throw ConfigError("bench: batch sizes must be positive");
      // Repetitions interleave the models so drift in machine speed hits all alike.
      for (std::size_t w = 0; w < opt.warmup; ++w)
        for (const auto& b : models) time_bucket(*b.model, segs, batch, opt.decode);
      std::vector<std::vector<double>> t(models.size());
      for (std::size_t rep = 0; rep < opt.reps; ++rep)
        for (std::size_t k = 0; k < models.size(); ++k)
          t[k].push_back(time_bucket(*models[k].model, segs, batch, opt.decode));
      const std::size_t first = r.rows.size();
      for (std::size_t k = 0; k < models.size(); ++k) {
        const auto& b = models[k];
        SpeedRow row;
        row.model = b.name;
        row.variant = to_string(b.model->config().variant);
        row.bucket = bucket;
        row.batch = batch;
        row.segments = segs.size();
        row.mean_tokens = tokens;
        row.seconds = median(t[k]) / static_cast<double>(segs.size());
        row.init_seconds = b.init_seconds;
        r.rows.push_back(row);
      }
      const SpeedRow& ref = r.rows[first + static_cast<std::size_t>(teacher - models.begin())];
      const double n = static_cast<double>(segs.size());
      for (std::size_t k = first; k < r.rows.size(); ++k) {
        SpeedRow& row = r.rows[k];
        row.speedup_ex = ref.seconds / row.seconds;
        row.speedup = (ref.seconds + ref.init_seconds / n) / (row.seconds + row.init_seconds / n);
      }
    }
  }
  omp_set_num_threads(saved_threads);
  std::stable_sort(r.rows.begin(), r.rows.end(), [&](const SpeedRow& a, const SpeedRow& b) {
    auto rank = [&](const std::string& name) {
      for (std::size_t i = 0; i < models.size(); ++i)
        if (models[i].name == name) return i;
      return models.size();
    };
    return rank(a.model) < rank(b.model);
  });
  return r;
}

std::string speed_csv(const SpeedReport& r) {
  std::ostringstream out;
  out << "model,variant,bucket,batch,segments,mean_tokens,seconds,init_seconds,speedup,speedup_ex\n";
  char buf[256];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%zu,%zu,%.1f,%.6e,%.6e,%.4f,%.4f\n", row.model.c_str(),
                  row.variant.c_str(), row.bucket.c_str(), row.batch, row.segments, row.mean_tokens, row.seconds,
                  row.init_seconds, row.speedup, row.speedup_ex);
    out << buf;
  }
  return out.str();
}

namespace {

struct Series {
  std::string model;
  std::vector<std::pair<std::string, double>> points;
};

const char* kColors[] = {"#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6a4c93", "#00798c", "#8d6a9f", "#555555"};

void panel(std::ostringstream& out, double x0, const std::string& id, const std::string& title,
           const std::vector<std::string>& xs, const std::vector<Series>& series) {
  const double w = 300, h = 220, left = 40, top = 30, right = 10, bottom = 30;
  double ymax = 1.0;
  for (const auto& s : series)
    for (const auto& p : s.points) ymax = std::max(ymax, p.second);
  ymax *= 1.1;
  auto px = [&](std::size_t i) {
    return x0 + left + (xs.size() > 1 ? (w - left - right) * static_cast<double>(i) / static_cast<double>(xs.size() - 1)
                                      : (w - left - right) / 2);
  };
  auto py = [&](double y) { return top + (h - top - bottom) * (1.0 - y / ymax); };
  char buf[256];
  out << "<g id=\"" << id << "\">\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"18\" font-size=\"12\">%s</text>\n", x0 + left, title.c_str());
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n"
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                x0 + left, py(0), x0 + w - right, py(0), x0 + left, py(0), x0 + left, py(ymax));
  out << buf;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"10\" text-anchor=\"middle\">%s</text>\n",
                  px(i), h - 12, xs[i].c_str());
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"10\" text-anchor=\"end\">%.1fx</text>\n",
                x0 + left - 4, py(ymax / 1.1) + 4, ymax / 1.1);
  out << buf;
  for (std::size_t k = 0; k < series.size(); ++k) {
    out << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << kColors[k % 8] << "\" data-model=\""
        << series[k].model << "\" points=\"";
    for (const auto& [x, y] : series[k].points) {
      const std::size_t i = static_cast<std::size_t>(std::find(xs.begin(), xs.end(), x) - xs.begin());
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", px(i), py(y));
      out << buf;
    }
    out << "\"/>\n";
  }
  out << "</g>\n";
}

}  // namespace

std::string speed_svg(const SpeedReport& r) {
  std::vector<std::string> models, buckets, batches;
  auto add = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& row : r.rows) {
    add(models, row.model);
    add(buckets, row.bucket);
  }
  std::vector<std::size_t> batch_values;
  for (const auto& row : r.rows)
    if (std::find(batch_values.begin(), batch_values.end(), row.batch) == batch_values.end())
      batch_values.push_back(row.batch);
  std::sort(batch_values.begin(), batch_values.end());
  for (auto b : batch_values) batches.push_back(std::to_string(b));
  const std::size_t first_batch = batch_values.empty() ? 1 : batch_values.front();
  std::string sweep_bucket = buckets.empty() ? "" : buckets.back();
  if (std::find(buckets.begin(), buckets.end(), "256") != buckets.end()) sweep_bucket = "256";

  std::vector<Series> by_len, by_batch_ex, by_batch;
  for (const auto& m : models) {
    Series a{m, {}}, b{m, {}}, c{m, {}};
    for (const auto& row : r.rows) {
      if (row.model != m) continue;
      if (row.batch == first_batch) a.points.push_back({row.bucket, row.speedup_ex});
      if (row.bucket == sweep_bucket) {
        b.points.push_back({std::to_string(row.batch), row.speedup_ex});
        c.points.push_back({std::to_string(row.batch), row.speedup});
      }
    }
    by_len.push_back(a);
    by_batch_ex.push_back(b);
    by_batch.push_back(c);
  }
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"920\" height=\"" << 240 + 16 * models.size()
      << "\" font-family=\"sans-serif\">\n";
  panel(out, 0, "speedup-by-length", "speedup vs length, batch " + std::to_string(first_batch), buckets, by_len);
  panel(out, 305, "speedup-by-batch-ex", "speedup vs batch, bucket " + sweep_bucket + ", /ex", batches, by_batch_ex);
  panel(out, 610, "speedup-by-batch", "speedup vs batch, bucket " + sweep_bucket + ", with init", batches, by_batch);
  for (std::size_t k = 0; k < models.size(); ++k)
    out << "<text x=\"40\" y=\"" << 240 + 16 * k << "\" font-size=\"11\" fill=\"" << kColors[k % 8] << "\">"
        << models[k] << "</text>\n";
  out << "</svg>\n";
  return out.str();
}

// ---- context ablation ------------------------------------------------------------

std::vector<AblationCondition> context_ablation(const Model& model, const Vocab& vocab,
                                                const std::vector<DocumentPair>& docs, const SynthLanguage* lang,
                                                const DocTranslateOptions& opt) {
  if (!is_gtrans(model.config().variant))
    throw ContractError("context ablation needs a sentence-aligned model, got " + to_string(model.config().variant));
  std::vector<AblationCondition> out;
  auto run = [&](const std::string& name, DocTranslateOptions o) {
    const DocTranslation t = translate_documents(model, vocab, docs, o);
    AblationCondition c;
    c.name = name;
    c.s_bleu = s_bleu(t.docs, docs);
    if (lang) c.ambiguous = ambiguous_accuracy(*lang, docs, t.docs, true);
    out.push_back(c);
  };
  DocTranslateOptions full = opt;
  full.sentence_segments = false;
  full.decode.target_context = true;
  run("full", full);
  DocTranslateOptions no_tgt = full;
  no_tgt.decode.target_context = false;
  run("no_target_context", no_tgt);
  DocTranslateOptions no_src = full;
  no_src.sentence_segments = true;
  run("no_source_context", no_src);
  for (auto& c : out) {
    c.bleu_delta = c.s_bleu.score - out.front().s_bleu.score;
    c.ambiguous_delta = c.ambiguous.accuracy() - out.front().ambiguous.accuracy();
  }
  return out;
}

}  // namespace natdoc
