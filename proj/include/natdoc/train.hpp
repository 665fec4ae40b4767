// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "natdoc/data.hpp"
#include "natdoc/loss.hpp"
#include "natdoc/model.hpp"

namespace natdoc {

struct TrainConfig {
  std::size_t steps = 4000;
  std::size_t batch_tokens = 1024;  // source plus target tokens per batch
  double lr = 3e-4;
  std::size_t warmup = 400;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 0.0;  // 0 disables
  double w_len = 0.1;
  double glance_start = 0.5;  // glancing ratio, decayed linearly over the run
  double glance_end = 0.3;
  std::size_t eval_every = 500;
  std::size_t log_every = 100;
  std::size_t max_segment_len = 512;
  std::uint64_t seed = 1;

  void validate() const;  // ConfigError
  // Peak rate times min(s / warmup, sqrt(warmup / s)) for step s >= 1.
  double learning_rate(std::size_t step) const;
  double glance_ratio(std::size_t step) const;
};

// Adam with bias correction over a model's arrays.
class Adam {
 public:
  Adam(const std::vector<nc::Array>& params, double beta1, double beta2, double eps);
  void step(std::vector<nc::Array>& params, const std::vector<nc::Array>& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  double b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<nc::Array> m_, v_;
};

// Batches of whole segments, packed greedily up to batch_tokens after a
// seeded shuffle; a segment larger than the budget forms its own batch.
std::vector<std::vector<std::size_t>> token_batches(const std::vector<Segment>& segs, std::size_t batch_tokens,
                                                    std::uint64_t seed, std::size_t epoch);

struct TrainResult {
  Model best;
  double best_dev_bleu = -1.0;
  std::size_t best_step = 0;
  std::size_t steps = 0;
  std::size_t skipped_batches = 0;
  std::size_t skipped_segments = 0;  // empty targets or sentence count mismatches
  std::vector<std::string> log;  // as written to the log stream
};

// Fixed-seed training. Logs lines "step=<s> loss=<l> dev_bleu=<b|NA>" every
// log_every steps (and at step 0), evaluates dev d-BLEU every eval_every steps
// and at the end, and keeps the parameters of the best dev score. A
// non-finite loss or gradient raises NumericError naming the step and batch.
TrainResult train_model(const ModelConfig& cfg, const Vocab& vocab, const std::vector<DocumentPair>& train,
                        const std::vector<DocumentPair>& dev, const TrainConfig& tc, std::ostream* log = nullptr);

// One optimization step's loss and gradients for a batch; exposed for tests.
struct StepResult {
  double loss = 0.0;
  bool valid = false;
  std::vector<nc::Array> grads;
};
StepResult loss_and_gradients(const Model& model, std::span<const Segment* const> batch,
                              const loss::LossOptions& opt, std::mt19937_64& rng);

}  // namespace natdoc
