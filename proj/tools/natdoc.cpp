// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

// natdoc: synthetic corpora, training, distillation, translation, metrics,
// speed benchmarks and reports.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "natdoc/checkpoint.hpp"
#include "natdoc/config.hpp"
#include "natdoc/data.hpp"
#include "natdoc/decode.hpp"
#include "natdoc/errors.hpp"
#include "natdoc/eval.hpp"
#include "natdoc/train.hpp"

namespace fs = std::filesystem;
using namespace natdoc;
using nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::size_t threads = 0;
};

void add_common(CLI::App* cmd, Common& c, bool with_config) {
  if (with_config) {
    cmd->add_option("--config", c.config_file, "config file (key = value lines under [sections])");
    cmd->add_option("--set", c.sets, "override one key, as section.key=value (repeatable)");
  }
  cmd->add_option("--threads", c.threads, "OpenMP threads (0: default)");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (!c.config_file.empty()) apply_config_file(cfg, c.config_file);
  for (const auto& s : c.sets) apply_setting(cfg, s);
  if (c.threads) cfg.threads = c.threads;
  if (cfg.threads) omp_set_num_threads(static_cast<int>(cfg.threads));
  return cfg;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write '" + path + "'");
}

// Resolved settings of a run, next to its outputs: the command and its flags
// as comments, then the full config.
void write_resolved(const std::string& path, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& flags, const RunConfig* cfg) {
  std::string text = "# natdoc " + command + "\n";
  for (const auto& [k, v] : flags) text += "# " + k + " = " + v + "\n";
  if (cfg) text += format_config(*cfg);
  write_text(path, text);
}

Vocab read_vocab(const std::string& path) {
  std::vector<std::string> tokens;
  std::istringstream in(read_text(path));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return Vocab(tokens);
}

std::string vocab_text(const Vocab& v) {
  std::string out;
  for (const auto& t : v.tokens()) out += t + "\n";
  return out;
}

void refuse_existing(const std::string& path, bool force) {
  if (!force && fs::exists(path)) throw DataError("output '" + path + "' exists; pass --force to overwrite");
}

std::string fmt(double x, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

// ---- gen-data -----------------------------------------------------------------

struct GenArgs {
  Common common;
  std::string out;
  bool force = false;
};

int run_gen_data(const GenArgs& a) {
  const RunConfig cfg = resolve(a.common);
  cfg.data.validate();
  const std::vector<std::string> files = {"train.jsonl", "dev.jsonl", "test.jsonl", "vocab.txt", "manifest.json"};
  if (fs::exists(a.out) && !a.force)
    for (const auto& f : files)
      if (fs::exists(fs::path(a.out) / f))
        throw DataError("output directory '" + a.out + "' already holds a corpus; pass --force to overwrite");
  fs::create_directories(a.out);
  const SynthLanguage lang(cfg.data);
  const CorpusSplits s = gen_splits(cfg.data);
  const Vocab vocab = lang.vocab();
  std::size_t segments = 0;
  for (const auto* split : {&s.train, &s.dev, &s.test}) segments += segment_documents(*split, vocab).size();
  write_corpus((fs::path(a.out) / "train.jsonl").string(), s.train);
  write_corpus((fs::path(a.out) / "dev.jsonl").string(), s.dev);
  write_corpus((fs::path(a.out) / "test.jsonl").string(), s.test);
  write_text((fs::path(a.out) / "vocab.txt").string(), vocab_text(vocab));
  ordered_json m;
  m["generator"] = "synthetic selector cipher";
  m["seed"] = cfg.data.seed;
  m["ambiguity"] = cfg.data.ambiguity;
  m["sentences"] = cfg.data.sentences;
  m["vocab_size"] = cfg.data.vocab_size;
  m["min_len"] = cfg.data.min_len;
  m["max_len"] = cfg.data.max_len;
  m["variation"] = cfg.data.variation;
  m["ambiguous_types"] = lang.ambiguous_types();
  m["vocab_tokens"] = vocab.size();
  m["documents"] = {{"train", s.train.size()}, {"dev", s.dev.size()}, {"test", s.test.size()}};
  m["segments"] = segments;
  write_text((fs::path(a.out) / "manifest.json").string(), m.dump(2) + "\n");
  write_resolved((fs::path(a.out) / "config.ini").string(), "gen-data", {{"out", a.out}}, &cfg);
  std::cout << "wrote " << s.train.size() << "/" << s.dev.size() << "/" << s.test.size()
            << " train/dev/test documents to " << a.out << "\n";
  return 0;
}

// ---- train ----------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data, train_file, out, variant;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = resolve(a.common);
  if (!a.variant.empty()) cfg.model.variant = parse_variant(a.variant);
  const Vocab vocab = read_vocab((fs::path(a.data) / "vocab.txt").string());
  cfg.model.vocab_size = vocab.size();
  cfg.model.validate();
  const std::string train_path = a.train_file.empty() ? (fs::path(a.data) / "train.jsonl").string() : a.train_file;
  const auto train = read_corpus(train_path);
  const auto dev = read_corpus((fs::path(a.data) / "dev.jsonl").string());
  write_resolved(a.out + ".config.ini", "train",
                 {{"data", a.data}, {"train_file", train_path}, {"out", a.out}}, &cfg);
  std::ofstream log(a.out + ".log");
  const TrainResult r = train_model(cfg.model, vocab, train, dev, cfg.train, &log);
  save_checkpoint(a.out, r.best, vocab.tokens(),
                  {{"best_dev_bleu", fmt(r.best_dev_bleu)},
                   {"best_step", std::to_string(r.best_step)},
                   {"train_file", train_path},
                   {"steps", std::to_string(r.steps)}});
  std::cout << "trained " << to_string(cfg.model.variant) << " for " << r.steps << " steps; best dev d-BLEU "
            << fmt(r.best_dev_bleu) << " at step " << r.best_step << "\n";
  return 0;
}

// ---- distill -------------------------------------------------------------------

struct DistillArgs {
  Common common;
  std::string teacher, input, out;
  std::size_t batch = 16;
  bool force = false;
};

int run_distill(const DistillArgs& a) {
  const RunConfig cfg = resolve(a.common);
  refuse_existing(a.out, a.force);
  const Checkpoint ck = load_checkpoint(a.teacher);
  const Vocab vocab(ck.vocab);
  const auto docs = read_corpus(a.input);
  const DistillResult r = distill_corpus(ck.model, vocab, docs, a.batch);
  write_corpus(a.out, r.docs);
  write_resolved(a.out + ".config.ini", "distill", {{"teacher", a.teacher}, {"input", a.input}, {"out", a.out}},
                 nullptr);
  std::cout << "distilled " << r.docs.size() << " documents; " << r.truncated << " truncated segments\n";
  for (const auto& id : r.flagged) std::cerr << "flagged: " << id << " (teacher output truncated)\n";
  return 0;
}

// ---- translate -----------------------------------------------------------------

struct TranslateArgs {
  Common common;
  std::string model, input, out, dag_mode = "lookahead";
  std::size_t batch = 8, max_len = 512;
  bool timed = false, no_target_context = false, sentence_segments = false;
};

int run_translate(const TranslateArgs& a) {
  resolve(a.common);
  const Checkpoint ck = load_checkpoint(a.model);
  const Vocab vocab(ck.vocab);
  const auto docs = read_corpus(a.input, false);
  DocTranslateOptions opt;
  opt.batch = a.batch;
  opt.max_len = a.max_len;
  opt.sentence_segments = a.sentence_segments;
  opt.decode.target_context = !a.no_target_context;
  if (a.dag_mode == "greedy")
    opt.decode.dag_mode = DagMode::greedy;
  else if (a.dag_mode != "lookahead")
    throw ConfigError("unknown --dag-mode '" + a.dag_mode + "'");
  const DocTranslation t = translate_documents(ck.model, vocab, docs, opt);
  std::map<std::string, double> seconds;
  std::size_t failures = 0;
  for (std::size_t k = 0; k < t.segments.size(); ++k) {
    seconds[t.segments[k].doc_id] += t.outputs[k].seconds;
    for (const auto& d : t.outputs[k].diagnostics) {
      std::cerr << t.segments[k].doc_id << " sentence " << t.segments[k].first_sentence << ": " << d << "\n";
      ++failures;
    }
  }
  std::string text;
  for (const auto& d : t.docs) {
    ordered_json j;
    j["id"] = d.id;
    j["src"] = d.src;
    j["tgt"] = d.tgt;
    if (a.timed) j["seconds"] = seconds[d.id];
    text += j.dump() + "\n";
  }
  write_text(a.out, text);
  write_resolved(a.out + ".config.ini", "translate",
                 {{"model", a.model}, {"input", a.input}, {"out", a.out}, {"batch", std::to_string(a.batch)},
                  {"dag_mode", a.dag_mode}, {"target_context", a.no_target_context ? "false" : "true"},
                  {"sentence_segments", a.sentence_segments ? "true" : "false"}},
                 nullptr);
  std::cout << "translated " << t.docs.size() << " documents (" << t.segments.size() << " segments, " << failures
            << " diagnostics)\n";
  return 0;
}

// ---- evaluate --------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string hyp, ref, granularity = "doc", json_out, name, corpus_kind;
};

int run_evaluate(const EvalArgs& a) {
  resolve(a.common);
  const auto hyps = read_corpus(a.hyp, true, false);
  const auto refs = read_corpus(a.ref);
  BleuReport r;
  if (a.granularity == "doc")
    r = d_bleu(hyps, refs);
  else if (a.granularity == "sent")
    r = s_bleu(hyps, refs);
  else
    throw ConfigError("--granularity must be sent or doc");
  const double rep1 = repetition_ratio(hyps, 1), rep2 = repetition_ratio(hyps, 2);
  std::cout << (a.granularity == "doc" ? "d-BLEU " : "s-BLEU ") << fmt(r.score) << "\n";
  for (std::size_t n = 0; n < r.precisions.size(); ++n)
    std::cout << "BLEU-" << n + 1 << " " << fmt(100.0 * r.precisions[n]) << " (" << r.matches[n] << "/"
              << r.totals[n] << ")\n";
  std::cout << "brevity_penalty " << fmt(r.brevity_penalty, 4) << "\n"
            << "hyp_len " << r.hyp_len << "\nref_len " << r.ref_len << "\n"
            << "repetition_1 " << fmt(rep1, 4) << "\nrepetition_2 " << fmt(rep2, 4) << "\n";
  if (!a.json_out.empty()) {
    ordered_json j;
    j["name"] = a.name;
    j["corpus"] = a.corpus_kind;
    j["granularity"] = a.granularity;
    j["bleu"] = r.score;
    j["precisions"] = r.precisions;
    j["brevity_penalty"] = r.brevity_penalty;
    j["hyp_len"] = r.hyp_len;
    j["ref_len"] = r.ref_len;
    j["repetition_1"] = rep1;
    j["repetition_2"] = rep2;
    write_text(a.json_out, j.dump(2) + "\n");
  }
  return 0;
}

// ---- bench -------------------------------------------------------------------------

struct BenchArgs {
  Common common;
  std::vector<std::string> models;
  std::string corpus, out = "bench";
  std::vector<std::string> buckets = {"sent", "64", "128", "256", "512"};
  std::vector<std::size_t> batch_sizes = {1, 2, 4, 8};
  std::size_t reps = 5, segments = 8;
};

int run_bench(const BenchArgs& a) {
  resolve(a.common);
  std::vector<Checkpoint> cks;
  std::vector<double> init;
  for (const auto& path : a.models) {
    std::vector<double> t;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      Checkpoint ck = load_checkpoint(path);
      t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      if (rep == 0) cks.push_back(std::move(ck));
    }
    std::sort(t.begin(), t.end());
    init.push_back(t[1]);
  }
  for (std::size_t i = 1; i < cks.size(); ++i)
    if (cks[i].vocab != cks[0].vocab)
      throw ConfigError("bench: '" + a.models[i] + "' uses a different vocabulary from '" + a.models[0] + "'");
  std::vector<BenchModel> entries;
  for (std::size_t i = 0; i < cks.size(); ++i)
    entries.push_back({fs::path(a.models[i]).stem().string(), &cks[i].model, init[i]});
  SpeedOptions opt;
  opt.buckets = a.buckets;
  opt.batch_sizes = a.batch_sizes;
  opt.reps = a.reps;
  opt.segments = a.segments;
  opt.threads = a.common.threads ? static_cast<int>(a.common.threads) : 1;
  const SpeedReport r = bench_speed(entries, Vocab(cks.front().vocab), read_corpus(a.corpus, false), opt);
  for (const auto& n : r.notices) std::cerr << "notice: " << n << "\n";
  write_text(a.out + ".csv", speed_csv(r));
  write_text(a.out + ".svg", speed_svg(r));
  std::vector<std::pair<std::string, std::string>> flags = {{"corpus", a.corpus}, {"out", a.out},
                                                            {"threads", std::to_string(opt.threads)}};
  for (const auto& m : a.models) flags.push_back({"model", m});
  write_resolved(a.out + ".config.ini", "bench", flags, nullptr);
  std::cout << speed_csv(r);
  return 0;
}

// ---- report -------------------------------------------------------------------------

int run_report(const std::string& dir) {
  // name -> corpus kind -> granularity -> bleu
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> scores;
  std::map<std::string, double> speedup;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string speed_bucket;
  for (const auto& p : files) {
    const std::string name = p.filename().string();
    if (name.size() > 13 && name.substr(name.size() - 13) == ".metrics.json") {
      const auto j = nlohmann::json::parse(read_text(p.string()));
      scores[j.value("name", "")][j.value("corpus", "")][j.value("granularity", "")] = j.value("bleu", 0.0);
    } else if (p.extension() == ".csv") {
      std::istringstream in(read_text(p.string()));
      std::string line;
      std::getline(in, line);
      if (line.rfind("model,variant,bucket,batch", 0) != 0) continue;
      // Speedup at batch 1 on the longest bucket present.
      std::map<std::string, std::pair<std::size_t, double>> best;
      while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
        if (f.size() < 10 || f[3] != "1") continue;
        const std::size_t len = f[2] == "sent" ? 0 : std::stoul(f[2]);
        auto& b = best[f[0]];
        if (b.first <= len) b = {len, std::stod(f[9])};
        speed_bucket = std::to_string(std::max<std::size_t>(len, speed_bucket.empty() ? 0 : std::stoul(speed_bucket)));
      }
      for (const auto& [m, v] : best) speedup[m] = v.second;
    }
  }
  std::set<std::string> names;
  for (const auto& [n, _] : scores) names.insert(n);
  for (const auto& [n, _] : speedup) names.insert(n);
  auto cell = [&](const std::string& n, const std::string& kind, const std::string& gran) {
    const auto a = scores.find(n);
    if (a == scores.end()) return std::string("absent");
    const auto b = a->second.find(kind);
    if (b == a->second.end()) return std::string("absent");
    const auto c = b->second.find(gran);
    return c == b->second.end() ? std::string("absent") : fmt(c->second);
  };
  std::string md = "| model | raw s-BLEU | raw d-BLEU | KD s-BLEU | KD d-BLEU | speedup |\n";
  md += "|---|---|---|---|---|---|\n";
  for (const auto& n : names) {
    const auto s = speedup.find(n);
    md += "| " + n + " | " + cell(n, "raw", "sent") + " | " + cell(n, "raw", "doc") + " | " + cell(n, "kd", "sent") +
          " | " + cell(n, "kd", "doc") + " | " + (s == speedup.end() ? "absent" : fmt(s->second) + "x") + " |\n";
  }
  if (!speed_bucket.empty()) md += "\nSpeedup: batch 1, " + speed_bucket + "-token bucket, setup excluded.\n";
  write_text((fs::path(dir) / "report.md").string(), md);
  std::cout << md;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"natdoc: sentence-aligned non-autoregressive document translation"};
  app.require_subcommand(1);
  app.footer(config_help());

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate a synthetic train/dev/test corpus");
  add_common(c_gen, gen.common, true);
  c_gen->add_option("--out", gen.out, "output directory")->required();
  c_gen->add_flag("--force", gen.force, "overwrite an existing corpus");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train one model variant");
  add_common(c_train, tr.common, true);
  c_train->add_option("--data", tr.data, "corpus directory (vocab.txt, dev.jsonl, train.jsonl)")->required();
  c_train->add_option("--train-file", tr.train_file, "training corpus replacing train.jsonl, e.g. a KD corpus");
  c_train->add_option("--variant", tr.variant, "model variant (overrides model.variant)");
  c_train->add_option("--out", tr.out, "checkpoint path; the log goes to <out>.log")->required();

  DistillArgs di;
  auto* c_distill = app.add_subcommand("distill", "replace training targets by teacher translations");
  add_common(c_distill, di.common, false);
  c_distill->add_option("--teacher", di.teacher, "teacher checkpoint")->required();
  c_distill->add_option("--input", di.input, "corpus to distill")->required();
  c_distill->add_option("--out", di.out, "KD corpus path")->required();
  c_distill->add_option("--batch", di.batch, "segments per decoding batch");
  c_distill->add_flag("--force", di.force, "overwrite an existing output");

  TranslateArgs ta;
  auto* c_tr = app.add_subcommand("translate", "translate a corpus file");
  add_common(c_tr, ta.common, false);
  c_tr->add_option("--model", ta.model, "checkpoint")->required();
  c_tr->add_option("--input", ta.input, "corpus file (tgt optional)")->required();
  c_tr->add_option("--out", ta.out, "output corpus file")->required();
  c_tr->add_option("--batch", ta.batch, "segments per batch");
  c_tr->add_option("--max-len", ta.max_len, "segment limit in source tokens");
  c_tr->add_option("--dag-mode", ta.dag_mode, "lookahead or greedy");
  c_tr->add_flag("--timed", ta.timed, "add per-document decoding seconds");
  c_tr->add_flag("--no-target-context", ta.no_target_context, "decode each target sentence on its own");
  c_tr->add_flag("--sentence-segments", ta.sentence_segments, "translate every sentence as its own segment");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "BLEU, BLEU-n breakdown and repetition ratios");
  add_common(c_eval, ev.common, false);
  c_eval->add_option("--hyp", ev.hyp, "translations")->required();
  c_eval->add_option("--ref", ev.ref, "references")->required();
  c_eval->add_option("--granularity", ev.granularity, "sent (s-BLEU) or doc (d-BLEU)");
  c_eval->add_option("--json", ev.json_out, "also write the report as <name>.metrics.json for `report`");
  c_eval->add_option("--name", ev.name, "model name recorded in the JSON report");
  c_eval->add_option("--corpus-kind", ev.corpus_kind, "raw or kd, recorded in the JSON report");

  BenchArgs be;
  auto* c_bench = app.add_subcommand("bench", "decoding speed against the teacher");
  add_common(c_bench, be.common, false);
  c_bench->add_option("--model", be.models, "checkpoint (repeatable; one must be a teacher)")->required();
  c_bench->add_option("--corpus", be.corpus, "documents to cut into length buckets")->required();
  c_bench->add_option("--out", be.out, "output prefix for .csv and .svg");
  c_bench->add_option("--buckets", be.buckets, "length buckets")->delimiter(',');
  c_bench->add_option("--batch-sizes", be.batch_sizes, "batch sizes")->delimiter(',');
  c_bench->add_option("--reps", be.reps, "timed repetitions (median)");
  c_bench->add_option("--segments", be.segments, "segments per bucket");

  std::string report_dir;
  auto* c_report = app.add_subcommand("report", "markdown table over a run directory");
  c_report->add_option("--dir", report_dir, "directory with *.metrics.json and bench CSV files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*c_gen) return run_gen_data(gen);
    if (*c_train) return run_train(tr);
    if (*c_distill) return run_distill(di);
    if (*c_tr) return run_translate(ta);
    if (*c_eval) return run_evaluate(ev);
    if (*c_bench) return run_bench(be);
    if (*c_report) return run_report(report_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const MetricError& e) {
    std::cerr << "metric error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
