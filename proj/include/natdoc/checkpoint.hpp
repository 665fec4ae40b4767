// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "natdoc/model.hpp"

namespace natdoc {

// Single-file checkpoint: a text header (magic line, model config as
// key=value lines, vocabulary, free-form metadata, array manifest with name,
// shape and byte offset) terminated by "end\n", followed by the arrays as
// little-endian 64-bit floats.
struct Checkpoint {
  Model model;
  std::vector<std::string> vocab;
  std::map<std::string, std::string> meta;
};

std::map<std::string, std::string> config_to_map(const ModelConfig& cfg);
ModelConfig config_from_map(const std::map<std::string, std::string>& kv);

void save_checkpoint(const std::string& path, const Model& model,
                     const std::vector<std::string>& vocab,
                     const std::map<std::string, std::string>& meta = {});
Checkpoint load_checkpoint(const std::string& path);

}  // namespace natdoc
