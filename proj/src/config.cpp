// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "natdoc/errors.hpp"

namespace natdoc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& v) {
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return x;
}

double parse_real(const std::string& v) {
  double x = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(x))
    throw ConfigError("expected a finite number, got '" + v + "'");
  return x;
}

std::string show(double x) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

struct Entry {
  ConfigKey doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Entry size_entry(std::string section, std::string key, std::string help, T RunConfig::*part,
                 std::size_t T::*field) {
  return {{std::move(section), std::move(key), std::move(help)},
          [=](const RunConfig& c) { return std::to_string(c.*part.*field); },
          [=](RunConfig& c, const std::string& v) { c.*part.*field = static_cast<std::size_t>(parse_uint(v)); }};
}

template <typename T>
Entry real_entry(std::string section, std::string key, std::string help, T RunConfig::*part, double T::*field) {
  return {{std::move(section), std::move(key), std::move(help)},
          [=](const RunConfig& c) { return show(c.*part.*field); },
          [=](RunConfig& c, const std::string& v) { c.*part.*field = parse_real(v); }};
}

template <typename T>
Entry seed_entry(std::string section, std::string help, T RunConfig::*part, std::uint64_t T::*field) {
  return {{std::move(section), "seed", std::move(help)},
          [=](const RunConfig& c) { return std::to_string(c.*part.*field); },
          [=](RunConfig& c, const std::string& v) { c.*part.*field = parse_uint(v); }};
}

const std::vector<Entry>& entries() {
  using R = RunConfig;
  static const std::vector<Entry> e = {
      {{"model", "variant", "at_teacher, nat_vanilla, glat, glat_ctc, dag, gtrans_glat, gtrans_glat_ctc, gtrans_dag"},
       [](const R& c) { return to_string(c.model.variant); },
       [](R& c, const std::string& v) { c.model.variant = parse_variant(v); }},
      size_entry("model", "layers", "encoder and decoder layers", &R::model, &ModelConfig::layers),
      size_entry("model", "heads", "attention heads", &R::model, &ModelConfig::heads),
      size_entry("model", "d_model", "model width", &R::model, &ModelConfig::d_model),
      size_entry("model", "d_ff", "feed-forward width", &R::model, &ModelConfig::d_ff),
      size_entry("model", "global_layers", "top layers with document-wide attention", &R::model,
                 &ModelConfig::global_layers),
      size_entry("model", "max_sentence_len", "largest per-sentence length class", &R::model,
                 &ModelConfig::max_sentence_len),
      size_entry("model", "max_target_len", "largest whole-target length class", &R::model,
                 &ModelConfig::max_target_len),
      size_entry("model", "ctc_upsample", "CTC rows per source token", &R::model, &ModelConfig::ctc_upsample),
      size_entry("model", "dag_lambda", "DAG vertices per source token", &R::model, &ModelConfig::dag_lambda),
      size_entry("model", "dag_max_vertices", "DAG vertex cap", &R::model, &ModelConfig::dag_max_vertices),
      size_entry("data", "vocab_size", "source word types", &R::data, &SynthConfig::vocab_size),
      size_entry("data", "sentences", "sentences per document", &R::data, &SynthConfig::sentences),
      size_entry("data", "min_len", "shortest sentence", &R::data, &SynthConfig::min_len),
      size_entry("data", "max_len", "longest sentence", &R::data, &SynthConfig::max_len),
      real_entry("data", "ambiguity", "fraction of source types with two translations", &R::data,
                 &SynthConfig::ambiguity),
      real_entry("data", "variation", "train targets: chance of a filler token per sentence", &R::data,
                 &SynthConfig::variation),
      seed_entry("data", "corpus seed", &R::data, &SynthConfig::seed),
      size_entry("data", "train_docs", "training documents", &R::data, &SynthConfig::train_docs),
      size_entry("data", "dev_docs", "development documents", &R::data, &SynthConfig::dev_docs),
      size_entry("data", "test_docs", "test documents", &R::data, &SynthConfig::test_docs),
      size_entry("train", "steps", "optimizer steps", &R::train, &TrainConfig::steps),
      size_entry("train", "batch_tokens", "source plus target tokens per batch", &R::train, &TrainConfig::batch_tokens),
      real_entry("train", "lr", "peak learning rate", &R::train, &TrainConfig::lr),
      size_entry("train", "warmup", "inverse-sqrt warmup steps", &R::train, &TrainConfig::warmup),
      real_entry("train", "beta1", "Adam first-moment decay", &R::train, &TrainConfig::beta1),
      real_entry("train", "beta2", "Adam second-moment decay", &R::train, &TrainConfig::beta2),
      real_entry("train", "eps", "Adam epsilon", &R::train, &TrainConfig::eps),
      real_entry("train", "clip_norm", "gradient norm clip, 0 disables", &R::train, &TrainConfig::clip_norm),
      real_entry("train", "w_len", "length loss weight", &R::train, &TrainConfig::w_len),
      real_entry("train", "glance_start", "glancing ratio at the first step", &R::train, &TrainConfig::glance_start),
      real_entry("train", "glance_end", "glancing ratio at the last step", &R::train, &TrainConfig::glance_end),
      size_entry("train", "eval_every", "steps between dev evaluations", &R::train, &TrainConfig::eval_every),
      size_entry("train", "log_every", "steps between log lines", &R::train, &TrainConfig::log_every),
      size_entry("train", "max_segment_len", "segment limit in source tokens", &R::train,
                 &TrainConfig::max_segment_len),
      seed_entry("train", "initialization and batching seed", &R::train, &TrainConfig::seed),
      {{"run", "threads", "OpenMP threads, 0 for the default"},
       [](const R& c) { return std::to_string(c.threads); },
       [](R& c, const std::string& v) { c.threads = static_cast<std::size_t>(parse_uint(v)); }},
  };
  return e;
}

const Entry* find(const std::string& section, const std::string& key) {
  for (const auto& e : entries())
    if (e.doc.section == section && e.doc.key == key) return &e;
  return nullptr;
}

bool known_section(const std::string& s) {
  for (const auto& e : entries())
    if (e.doc.section == s) return true;
  return false;
}

void assign(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value,
            const std::string& where) {
  const Entry* e = find(section, key);
  if (!e) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
  try {
    e->set(cfg, value);
  } catch (const ConfigError& err) {
    throw ConfigError(where + section + "." + key + ": " + err.what());
  }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : entries()) k.push_back(e.doc);
    return k;
  }();
  return keys;
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& name) {
  std::istringstream in(text);
  std::string line, section;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const std::string where = name + ":" + std::to_string(no) + ": ";
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!known_section(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside a section");
    assign(cfg, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path);
}

void apply_setting(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("expected section.key=value, got '" + assignment + "'");
  const std::string section = trim(assignment.substr(0, dot));
  if (!known_section(section)) throw ConfigError("unknown section [" + section + "] in '" + assignment + "'");
  assign(cfg, section, trim(assignment.substr(dot + 1, eq - dot - 1)), trim(assignment.substr(eq + 1)), "");
}

std::string format_config(const RunConfig& cfg) {
  std::string out, section;
  for (const auto& e : entries()) {
    if (e.doc.section != section) {
      section = e.doc.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += e.doc.key + " = " + e.get(cfg) + "\n";
  }
  return out;
}

std::string config_help() {
  const RunConfig defaults;
  std::string out = "Config keys (file sections or --set section.key=value):\n";
  for (const auto& e : entries())
    out += "  " + e.doc.section + "." + e.doc.key + " (default " + e.get(defaults) + "): " + e.doc.help + "\n";
  return out;
}

}  // namespace natdoc
