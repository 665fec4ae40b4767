// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "natdoc/data.hpp"
#include "natdoc/model.hpp"
#include "natdoc/train.hpp"

namespace natdoc {

// Everything a command can be configured with. The model's vocab_size is
// taken from the corpus vocabulary, not from the config.
struct RunConfig {
  ModelConfig model;
  SynthConfig data;
  TrainConfig train;
  std::size_t threads = 0;  // 0: OpenMP default
};

struct ConfigKey {
  std::string section;
  std::string key;
  std::string help;
};

// Documented keys, in file order.
const std::vector<ConfigKey>& config_keys();

// Text format:
//   # comment
//   [section]
//   key = value
// ConfigError names the source and line for unknown sections or keys and
// malformed values.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& name);
void apply_config_file(RunConfig& cfg, const std::string& path);
// One "section.key=value" assignment.
void apply_setting(RunConfig& cfg, const std::string& assignment);

// Every key with its resolved value; parses back to the same config.
std::string format_config(const RunConfig& cfg);
std::string config_help();

}  // namespace natdoc
