// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "natdoc/errors.hpp"

namespace natdoc {

namespace {

constexpr const char* kMagic = "natdoc-checkpoint 1";

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
}

void put_le(std::ostream& out, double x) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::map<std::string, std::string> config_to_map(const ModelConfig& c) {
  return {
      {"variant", to_string(c.variant)},
      {"layers", std::to_string(c.layers)},
      {"heads", std::to_string(c.heads)},
      {"d_model", std::to_string(c.d_model)},
      {"d_ff", std::to_string(c.d_ff)},
      {"global_layers", std::to_string(c.global_layers)},
      {"vocab_size", std::to_string(c.vocab_size)},
      {"max_sentence_len", std::to_string(c.max_sentence_len)},
      {"max_target_len", std::to_string(c.max_target_len)},
      {"ctc_upsample", std::to_string(c.ctc_upsample)},
      {"dag_lambda", std::to_string(c.dag_lambda)},
      {"dag_max_vertices", std::to_string(c.dag_max_vertices)},
  };
}

ModelConfig config_from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "variant") c.variant = parse_variant(v);
    else if (k == "layers") c.layers = to_size(k, v);
    else if (k == "heads") c.heads = to_size(k, v);
    else if (k == "d_model") c.d_model = to_size(k, v);
    else if (k == "d_ff") c.d_ff = to_size(k, v);
    else if (k == "global_layers") c.global_layers = to_size(k, v);
    else if (k == "vocab_size") c.vocab_size = to_size(k, v);
    else if (k == "max_sentence_len") c.max_sentence_len = to_size(k, v);
    else if (k == "max_target_len") c.max_target_len = to_size(k, v);
    else if (k == "ctc_upsample") c.ctc_upsample = to_size(k, v);
    else if (k == "dag_lambda") c.dag_lambda = to_size(k, v);
    else if (k == "dag_max_vertices") c.dag_max_vertices = to_size(k, v);
    else throw ConfigError("unknown model config key '" + k + "'");
  }
  c.validate();
  return c;
}

void save_checkpoint(const std::string& path, const Model& model,
                     const std::vector<std::string>& vocab,
                     const std::map<std::string, std::string>& meta) {
  std::ostringstream header;
  header << kMagic << "\n";
  for (const auto& [k, v] : config_to_map(model.config())) header << "config " << k << "=" << v << "\n";
  header << "vocab " << vocab.size() << "\n";
  for (const auto& t : vocab) {
    if (t.find_first_of(" \n\r\t") != std::string::npos)
      throw DataError("vocabulary token contains whitespace: '" + t + "'");
    header << t << "\n";
  }
  for (const auto& [k, v] : meta) {
    if (v.find('\n') != std::string::npos || k.find('=') != std::string::npos)
      throw DataError("checkpoint metadata must be single-line key=value");
    header << "meta " << k << "=" << v << "\n";
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < model.names().size(); ++i) {
    const nc::Array& a = model.arrays()[i];
    header << "array " << model.names()[i] << " ";
    for (std::size_t s = 0; s < a.shape().size(); ++s) header << (s ? "x" : "") << a.shape()[s];
    header << " " << offset << "\n";
    offset += a.size() * 8;
  }
  header << "end\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& a : model.arrays())
    for (double x : a.values()) put_le(out, x);
  if (!out) throw DataError("write failed for checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw DataError("'" + path + "' is not a natdoc checkpoint");
  std::map<std::string, std::string> cfg, meta;
  std::vector<std::string> vocab, names;
  std::vector<std::vector<std::size_t>> shapes;
  std::vector<std::size_t> offsets;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const auto sp = line.find(' ');
    const std::string kind = line.substr(0, sp);
    const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (kind == "config" || kind == "meta") {
      const auto eq = rest.find('=');
      if (eq == std::string::npos) throw DataError("malformed checkpoint header line: " + line);
      (kind == "config" ? cfg : meta)[rest.substr(0, eq)] = rest.substr(eq + 1);
    } else if (kind == "vocab") {
      const std::size_t n = to_size("vocab", rest);
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line)) throw DataError("truncated vocabulary in checkpoint");
        vocab.push_back(line);
      }
    } else if (kind == "array") {
      std::istringstream ls(rest);
      std::string name, shape;
      std::size_t off = 0;
      if (!(ls >> name >> shape >> off)) throw DataError("malformed array manifest line: " + line);
      std::vector<std::size_t> dims;
      std::istringstream ss(shape);
      std::string part;
      while (std::getline(ss, part, 'x')) dims.push_back(to_size(name, part));
      names.push_back(name);
      shapes.push_back(dims);
      offsets.push_back(off);
    } else {
      throw DataError("unknown checkpoint header line: " + line);
    }
  }
  if (!ended) throw DataError("checkpoint header not terminated");
  std::vector<unsigned char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<nc::Array> arrays;
  for (std::size_t i = 0; i < names.size(); ++i) {
    nc::Array a(shapes[i], 0.0);
    if (offsets[i] + a.size() * 8 > payload.size()) throw DataError("checkpoint payload truncated at '" + names[i] + "'");
    for (std::size_t j = 0; j < a.size(); ++j) a[j] = get_le(payload.data() + offsets[i] + j * 8);
    arrays.push_back(std::move(a));
  }
  ModelConfig c = config_from_map(cfg);
  return Checkpoint{Model(c, std::move(names), std::move(arrays)), std::move(vocab), std::move(meta)};
}

}  // namespace natdoc
