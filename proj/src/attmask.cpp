// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/attmask.hpp"

#include <memory>

#include "natdoc/errors.hpp"

namespace natdoc::attn {

GroupTags::GroupTags(std::vector<int> tags) : tags_(std::move(tags)) {
  if (!valid(tags_)) throw ContractError("group tags must start at 0 and grow by at most 1");
}

bool GroupTags::valid(std::span<const int> tags) {
  if (tags.empty()) return true;
  if (tags[0] != 0) return false;
  for (std::size_t i = 1; i < tags.size(); ++i) {
    const int step = tags[i] - tags[i - 1];
    if (step < 0 || step > 1) return false;
  }
  return true;
}

GroupTags GroupTags::from_lengths(std::span<const std::size_t> sentence_lengths) {
  std::vector<int> tags;
  int j = 0;
  for (std::size_t len : sentence_lengths) {
    tags.insert(tags.end(), len, j);
    ++j;
  }
  return GroupTags(std::move(tags));
}

AttnMask build_group_mask(const GroupTags& q_tags, const GroupTags& k_tags) {
  AttnMask m{nc::BoolArray::matrix(q_tags.size(), k_tags.size(), false)};
  for (std::size_t i = 0; i < q_tags.size(); ++i)
    for (std::size_t j = 0; j < k_tags.size(); ++j) m.allowed.set(i, j, q_tags[i] == k_tags[j]);
  return m;
}

AttnMask build_causal_mask(std::size_t n) {
  if (n == 0) throw ContractError("causal mask needs n >= 1");
  AttnMask m{nc::BoolArray::matrix(n, n, false)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.allowed.set(i, j, true);
  return m;
}

AttnMask build_global_mask(std::size_t n_q, std::size_t n_k, std::size_t k_valid) {
  AttnMask m{nc::BoolArray::matrix(n_q, n_k, false)};
  for (std::size_t i = 0; i < n_q; ++i)
    for (std::size_t j = 0; j < std::min(k_valid, n_k); ++j) m.allowed.set(i, j, true);
  return m;
}

AttnMask conjunction(const AttnMask& a, const AttnMask& b) {
  if (a.allowed.shape() != b.allowed.shape()) throw DimensionError("mask conjunction: shape mismatch");
  AttnMask m{nc::BoolArray::matrix(a.rows(), a.cols(), false)};
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m.allowed.set(i, j, a(i, j) && b(i, j));
  return m;
}

AttnMask transpose(const AttnMask& m) {
  AttnMask t{nc::BoolArray::matrix(m.cols(), m.rows(), false)};
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t.allowed.set(j, i, m(i, j));
  return t;
}

nc::AttnLayout dense_layout(const AttnMask& mask) {
  nc::AttnLayout layout;
  auto owned = std::make_shared<const nc::BoolArray>(mask.allowed);
  layout.blocks.push_back(kernels::AttnBlock{
      .q0 = 0, .nq = mask.rows(), .k0 = 0, .nk = mask.cols(), .mask = owned.get()});
  layout.owned_masks.push_back(std::move(owned));
  return layout;
}

nc::Array attention(const nc::Array& q, const nc::Array& k, const nc::Array& v,
                    const AttnMask& mask, std::size_t heads) {
  nc::Graph g(false);
  return attention(g.constant(q), g.constant(k), g.constant(v), mask, heads).value();
}

nc::Var attention(nc::Var q, nc::Var k, nc::Var v, const AttnMask& mask, std::size_t heads) {
  if (mask.rows() != q.value().rows() || mask.cols() != k.value().rows())
    throw DimensionError("attention: mask does not match q/k rows");
  return nc::attention(q, k, v, dense_layout(mask), heads);
}

void PackedTags::append(std::span<const int> seq_tags) {
  tags.insert(tags.end(), seq_tags.begin(), seq_tags.end());
  offsets.push_back(tags.size());
}

namespace {

// Runs of equal non-negative tags inside [begin, end).
struct Run {
  int tag;
  std::size_t begin, end;
};

std::vector<Run> runs(const PackedTags& p, std::size_t s) {
  std::vector<Run> out;
  for (std::size_t i = p.offsets[s]; i < p.offsets[s + 1]; ++i) {
    const int t = p.tags[i];
    if (t < 0) continue;
    if (!out.empty() && out.back().tag == t && out.back().end == i)
      ++out.back().end;
    else
      out.push_back(Run{t, i, i + 1});
  }
  return out;
}

std::size_t valid_end(const PackedTags& p, std::size_t s) {
  std::size_t e = p.offsets[s];
  while (e < p.offsets[s + 1] && p.tags[e] >= 0) ++e;
  return e;
}

void require_same_count(const PackedTags& q, const PackedTags& k) {
  if (q.sequences() != k.sequences()) throw DimensionError("attention layout: sequence counts differ");
}

}  // namespace

nc::AttnLayout group_layout(const PackedTags& q, const PackedTags& k, bool causal) {
  require_same_count(q, k);
  nc::AttnLayout layout;
  for (std::size_t s = 0; s < q.sequences(); ++s) {
    const auto kr = runs(k, s);
    for (const Run& qr : runs(q, s)) {
      for (const Run& r : kr) {
        if (r.tag != qr.tag) continue;
        layout.blocks.push_back(kernels::AttnBlock{.q0 = qr.begin, .nq = qr.end - qr.begin,
                                                   .k0 = r.begin, .nk = r.end - r.begin,
                                                   .causal = causal});
      }
    }
  }
  return layout;
}

nc::AttnLayout global_layout(const PackedTags& q, const PackedTags& k, bool causal) {
  require_same_count(q, k);
  nc::AttnLayout layout;
  for (std::size_t s = 0; s < q.sequences(); ++s) {
    const std::size_t qe = valid_end(q, s);
    const std::size_t ke = valid_end(k, s);
    if (qe == q.offsets[s] || ke == k.offsets[s]) continue;
    layout.blocks.push_back(kernels::AttnBlock{.q0 = q.offsets[s], .nq = qe - q.offsets[s],
                                               .k0 = k.offsets[s], .nk = ke - k.offsets[s],
                                               .causal = causal});
  }
  return layout;
}

}  // namespace natdoc::attn
