// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "natdoc/array.hpp"
#include "natdoc/autodiff.hpp"
#include "natdoc/ops.hpp"

namespace natdoc::attn {

// Sentence index per token position: non-decreasing, starts at 0, steps of
// at most 1.
class GroupTags {
 public:
  GroupTags() = default;
  explicit GroupTags(std::vector<int> tags);  // validates

  static bool valid(std::span<const int> tags);
  static GroupTags from_lengths(std::span<const std::size_t> sentence_lengths);

  const std::vector<int>& tags() const { return tags_; }
  std::size_t size() const { return tags_.size(); }
  int operator[](std::size_t i) const { return tags_[i]; }
  int sentence_count() const { return tags_.empty() ? 0 : tags_.back() + 1; }

 private:
  std::vector<int> tags_;
};

// allowed(i, j): query i may attend to key j.
struct AttnMask {
  nc::BoolArray allowed;

  std::size_t rows() const { return allowed.rows(); }
  std::size_t cols() const { return allowed.cols(); }
  bool operator()(std::size_t i, std::size_t j) const { return allowed(i, j); }
  bool operator==(const AttnMask&) const = default;
};

AttnMask build_group_mask(const GroupTags& q_tags, const GroupTags& k_tags);
AttnMask build_causal_mask(std::size_t n);
// All queries see the first k_valid keys; the remaining keys are padding.
AttnMask build_global_mask(std::size_t n_q, std::size_t n_k, std::size_t k_valid);
AttnMask conjunction(const AttnMask& a, const AttnMask& b);
AttnMask transpose(const AttnMask& m);

// Multi-head attention under a dense mask (q[nq,d], k/v[nk,d]).
nc::Array attention(const nc::Array& q, const nc::Array& k, const nc::Array& v,
                    const AttnMask& mask, std::size_t heads);
nc::Var attention(nc::Var q, nc::Var k, nc::Var v, const AttnMask& mask, std::size_t heads);

// Several sequences packed back to back. Tag -1 marks padding, which must
// trail the real rows of its sequence.
struct PackedTags {
  std::vector<int> tags;
  std::vector<std::size_t> offsets{0};  // sequence boundaries, size = count + 1

  std::size_t sequences() const { return offsets.size() - 1; }
  std::size_t rows() const { return tags.size(); }
  void append(std::span<const int> seq_tags);
};

// Block layouts equivalent to the dense masks above, applied per packed
// sequence: group attention pairs rows with equal tags, global attention
// pairs every non-pad row. `causal` is meaningful for self-attention only.
nc::AttnLayout group_layout(const PackedTags& q, const PackedTags& k, bool causal);
nc::AttnLayout global_layout(const PackedTags& q, const PackedTags& k, bool causal);
nc::AttnLayout dense_layout(const AttnMask& mask);

}  // namespace natdoc::attn
