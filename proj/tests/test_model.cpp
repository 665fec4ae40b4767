// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "catch_amalgamated.hpp"
#include "natdoc/checkpoint.hpp"
#include "natdoc/errors.hpp"
#include "natdoc/kernels.hpp"
#include "natdoc/loss.hpp"
#include "natdoc/model.hpp"
#include "natdoc/segment.hpp"
#include "tiny.hpp"

using namespace natdoc;
using natdoc::testing::random_segment;
using natdoc::testing::tiny_config;
using nc::Array;

namespace {

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Array rows_of(const Array& a, nc::IndexRange r) {
  Array out = Array::matrix(r.size(), a.cols());
  for (std::size_t i = r.begin; i < r.end; ++i)
    std::copy(a.row(i).begin(), a.row(i).end(), out.row(i - r.begin).begin());
  return out;
}

struct NatRun {
  DecoderLayout layout;
  Array hidden;
  Array logits;
};

NatRun nat_logits(const Model& m, const Segment& seg, const std::vector<std::size_t>& rows, bool markers) {
  const Segment* p = &seg;
  SeqBatch src = source_batch(m.config(), std::span(&p, 1));
  nc::Graph g(false);
  Forward f(m, g);
  EncoderStates enc = f.encode(src);
  NatRun r{build_decoder_layout(m.config(), src, {rows}, markers), {}, {}};
  nc::Var x = f.decoder_inputs(r.layout.tgt, enc, r.layout.copy_rows);
  nc::Var h = f.decode(x, r.layout.tgt, enc, false);
  r.hidden = h.value();
  r.logits = f.token_logits(h).value();
  return r;
}

std::vector<int> random_prefix(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<int> tok(kNumSpecials, static_cast<int>(vocab) - 1);
  std::bernoulli_distribution eos(0.25);
  std::vector<int> p = {kBos};
  while (p.size() < n) p.push_back(eos(rng) ? kEos : tok(rng));
  return p;
}

}  // namespace

TEST_CASE("config validation and layer roles") {
  ModelConfig c = tiny_config(Variant::gtrans_glat);
  CHECK_NOTHROW(c.validate());
  ModelConfig bad = c;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.global_layers = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.dag_lambda = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.ctc_upsample = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  c.layers = 4;
  c.global_layers = 2;
  CHECK_FALSE(c.global_layer(0));
  CHECK_FALSE(c.global_layer(1));
  CHECK(c.global_layer(2));
  CHECK(c.global_layer(3));
  c.variant = Variant::glat;
  CHECK(c.global_layer(0));
  CHECK(parse_variant("gtrans_dag") == Variant::gtrans_dag);
  CHECK_THROWS_AS(parse_variant("latent_glat"), ConfigError);
  for (Variant v : all_variants()) CHECK(parse_variant(to_string(v)) == v);
}

TEST_CASE("uniform copy index") {
  CHECK(uniform_copy_index(4, 2) == std::vector<std::size_t>{0, 3});
  CHECK(uniform_copy_index(5, 1) == std::vector<std::size_t>{0});
  CHECK(uniform_copy_index(6, 6) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  CHECK(uniform_copy_index(3, 5) == std::vector<std::size_t>{0, 1, 1, 2, 2});
  CHECK(uniform_copy_index(3, 0).empty());
  for (std::size_t s = 1; s < 12; ++s)
    for (std::size_t t = 1; t < 12; ++t) {
      const auto idx = uniform_copy_index(s, t);
      CHECK(idx.front() == 0);
      CHECK(idx.back() == (t == 1 ? 0 : s - 1));
      CHECK(std::is_sorted(idx.begin(), idx.end()));
    }
}

TEST_CASE("sentence frame") {
  SentenceFrame f = init_sentence_frame({0});
  CHECK(f.tokens == std::vector<int>{kBos, kEos});
  CHECK(f.tags == std::vector<int>{0, 0});
  f = init_sentence_frame({2, 1});
  CHECK(f.tokens == std::vector<int>{kBos, kUnk, kUnk, kEos, kBos, kUnk, kEos});
  CHECK(f.tags == std::vector<int>{0, 0, 0, 0, 1, 1, 1});
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    std::vector<std::size_t> lens(1 + rng() % 5);
    std::size_t want = 0;
    for (auto& l : lens) want += (l = rng() % 6) + 2;
    CHECK(init_sentence_frame(lens).tokens.size() == want);
  }
}

TEST_CASE("forward shapes for every variant") {
  std::mt19937_64 rng(5);
  for (Variant v : all_variants()) {
    CAPTURE(to_string(v));
    const ModelConfig cfg = tiny_config(v);
    Model m(cfg, 11);
    Segment seg = random_segment(rng, 3, cfg.vocab_size);
    const Segment* p = &seg;
    SeqBatch src = source_batch(cfg, std::span(&p, 1));
    CHECK(encode_values(m, src).shape() == std::vector<std::size_t>{seg.src_len(), cfg.d_model});
    CHECK(m.has("len.w") == (v == Variant::nat_vanilla || v == Variant::glat || v == Variant::gtrans_glat));
    CHECK(m.has("dag.wq") == is_dag(v));
    if (!is_nat(v)) continue;
    std::vector<std::size_t> rows;
    for (const auto& x : seg.src) rows.push_back(cfg.dag_lambda * x.size());
    if (!is_gtrans(v)) rows = {cfg.dag_lambda * seg.src_len()};
    NatRun r = nat_logits(m, seg, rows, true);
    CHECK(r.logits.shape() == std::vector<std::size_t>{r.layout.tgt.rows(), cfg.vocab_size});
    if (is_dag(v)) {
      nc::Graph g(false);
      Forward f(m, g);
      Array h = Array::matrix(r.layout.tgt.rows(), cfg.d_model, 0.1);
      Array t = f.transition_logits(g.constant(h)).value();
      CHECK(t.shape() == std::vector<std::size_t>{h.rows(), h.rows()});
    }
  }
}

TEST_CASE("packed sequences do not interact") {
  std::mt19937_64 rng(8);
  for (Variant v : {Variant::glat, Variant::gtrans_glat}) {
    const ModelConfig cfg = tiny_config(v);
    Model m(cfg, 2);
    Segment a = random_segment(rng, 2, cfg.vocab_size), b = random_segment(rng, 3, cfg.vocab_size);
    const Segment* both[] = {&a, &b};
    const Segment* only_b[] = {&b};
    const Array packed = encode_values(m, source_batch(cfg, both));
    const Array single = encode_values(m, source_batch(cfg, only_b));
    const Array tail = rows_of(packed, {a.src_len(), packed.rows()});
    for (std::size_t i = 0; i < single.size(); ++i) CHECK(tail[i] == Catch::Approx(single[i]).margin(1e-12));
  }
}

TEST_CASE("encoder group layers follow sentence permutation") {
  std::mt19937_64 rng(21);
  ModelConfig cfg = tiny_config(Variant::gtrans_glat_ctc);
  cfg.global_layers = 0;
  Model m(cfg, 4);
  for (int trial = 0; trial < 10; ++trial) {
    Segment s = random_segment(rng, 3, cfg.vocab_size, 1, 5);
    Segment p = s;
    p.src = {s.src[2], s.src[0], s.src[1]};
    p.tgt = {s.tgt[2], s.tgt[0], s.tgt[1]};
    const Segment* ps = &s;
    const Segment* pp = &p;
    const Array hs = encode_values(m, source_batch(cfg, std::span(&ps, 1)));
    const Array hp = encode_values(m, source_batch(cfg, std::span(&pp, 1)));
    const auto ss = s.src_spans(), sp = p.src_spans();
    const std::size_t map[] = {1, 2, 0};  // sentence j of s sits at map[j] in p
    for (std::size_t j = 0; j < 3; ++j) {
      const Array x = rows_of(hs, ss[j]), y = rows_of(hp, sp[map[j]]);
      CHECK(bit_equal(x.values(), y.values()));
    }
  }
}

TEST_CASE("gtrans decoder locality without global layers") {
  std::mt19937_64 rng(31);
  for (Variant v : {Variant::gtrans_glat, Variant::gtrans_glat_ctc, Variant::gtrans_dag}) {
    CAPTURE(to_string(v));
    ModelConfig cfg = tiny_config(v);
    cfg.global_layers = 0;
    Model m(cfg, 9);
    for (int trial = 0; trial < 5; ++trial) {
      Segment s = random_segment(rng, 3, cfg.vocab_size, 2, 4);
      Segment t = s;
      for (int& tok : t.src[1]) tok = kNumSpecials + (tok - kNumSpecials + 1) % (int(cfg.vocab_size) - kNumSpecials);
      std::vector<std::size_t> rows;
      for (const auto& x : s.src) rows.push_back(2 * x.size() + 1);
      const NatRun a = nat_logits(m, s, rows, !is_ctc(v));
      const NatRun b = nat_logits(m, t, rows, !is_ctc(v));
      const auto& blocks = a.layout.blocks[0];
      CHECK(bit_equal(rows_of(a.logits, blocks[0]).values(), rows_of(b.logits, blocks[0]).values()));
      CHECK(bit_equal(rows_of(a.logits, blocks[2]).values(), rows_of(b.logits, blocks[2]).values()));
      CHECK_FALSE(bit_equal(rows_of(a.logits, blocks[1]).values(), rows_of(b.logits, blocks[1]).values()));
    }
  }
  SECTION("a global layer spreads the edit") {
    ModelConfig cfg = tiny_config(Variant::gtrans_glat);
    Model m(cfg, 9);
    Segment s = random_segment(rng, 2, cfg.vocab_size, 2, 4);
    Segment t = s;
    t.src[1][0] = s.src[1][0] == kNumSpecials ? kNumSpecials + 1 : kNumSpecials;
    const NatRun a = nat_logits(m, s, {4, 4}, true), b = nat_logits(m, t, {4, 4}, true);
    CHECK_FALSE(bit_equal(rows_of(a.logits, a.layout.blocks[0][0]).values(),
                          rows_of(b.logits, b.layout.blocks[0][0]).values()));
  }
}

TEST_CASE("forward passes are deterministic") {
  std::mt19937_64 rng(41);
  const ModelConfig cfg = tiny_config(Variant::gtrans_dag);
  Model m(cfg, 1), m2(cfg, 1);
  Segment s = random_segment(rng, 2, cfg.vocab_size);
  const NatRun a = nat_logits(m, s, {8, 8}, true), b = nat_logits(m2, s, {8, 8}, true);
  CHECK(bit_equal(a.logits.values(), b.logits.values()));
  Model other(cfg, 2);
  CHECK_FALSE(bit_equal(a.logits.values(), nat_logits(other, s, {8, 8}, true).logits.values()));
}

TEST_CASE("length prediction") {
  std::mt19937_64 rng(51);
  for (Variant v : {Variant::gtrans_glat, Variant::glat, Variant::nat_vanilla}) {
    const ModelConfig cfg = tiny_config(v);
    Model m(cfg, 6);
    Segment s = random_segment(rng, 3, cfg.vocab_size);
    const Segment* p = &s;
    SeqBatch src = source_batch(cfg, std::span(&p, 1));
    const auto spans = length_spans(cfg, src)[0];
    CHECK(spans.size() == (is_gtrans(v) ? 3u : 1u));
    LengthPrediction lp = predict_lengths(m, src, spans);
    REQUIRE(lp.per_sentence.size() == spans.size());
    std::size_t total = 0;
    for (std::size_t j = 0; j < spans.size(); ++j) {
      double z = 0.0;
      for (double q : lp.per_sentence[j]) z += q;
      CHECK(std::abs(z - 1.0) < 1e-9);
      CHECK(lp.per_sentence[j].size() == cfg.length_classes());
      CHECK(lp.chosen[j] == kernels::argmax(lp.per_sentence[j]) + 1);
      total += lp.chosen[j];
    }
    CHECK(lp.total == total);
  }
}

TEST_CASE("dag transition normalization") {
  std::mt19937_64 rng(61);
  const ModelConfig cfg = tiny_config(Variant::dag);
  Model m(cfg, 3);
  Segment s = random_segment(rng, 1, cfg.vocab_size);
  const std::size_t M = cfg.dag_lambda * s.src_len();
  const NatRun r = nat_logits(m, s, {M}, true);
  nc::Graph g(false);
  Forward f(m, g);
  const nc::BoolArray mask = loss::dag_forward_mask(M);
  const Array t = nc::log_softmax(f.transition_logits(g.constant(r.hidden)), &mask).value();
  for (std::size_t i = 0; i < M; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
      if (j <= i) CHECK(t(i, j) == nc::kLogZero);
      else z += std::exp(t(i, j));
    }
    if (i + 1 < M) CHECK(std::abs(z - 1.0) < 1e-12);
    else CHECK(z == 0.0);
  }
}

TEST_CASE("teacher prefix consistency") {
  std::mt19937_64 rng(71);
  const ModelConfig cfg = tiny_config(Variant::at_teacher);
  Model m(cfg, 12);
  for (int trial = 0; trial < 8; ++trial) {
    Segment s = random_segment(rng, 3, cfg.vocab_size);
    const std::vector<int> prefix = random_prefix(rng, 9, cfg.vocab_size);
    SeqBatch src, tgt;
    src.append(s.src_tokens(), s.src_tags(), true);
    tgt.append(prefix, teacher_input_tags(prefix), true);
    nc::Graph g(false);
    Forward f(m, g);
    const Array full = teacher_logits(f, src, tgt).value();
    for (std::size_t t = 1; t <= prefix.size(); ++t) {
      const auto step = decode_at_step(m, s.src_tokens(), s.src_tags(),
                                       std::vector<int>(prefix.begin(), prefix.begin() + long(t)));
      CHECK(bit_equal(step, full.row(t - 1)));
    }
  }
  CHECK_THROWS_AS(decode_at_step(m, {5}, {0}, {}), ContractError);
  Model nat(tiny_config(Variant::glat), 1);
  CHECK_THROWS_AS(decode_at_step(nat, {5}, {0}, {kBos}), ConfigError);
}

TEST_CASE("teacher stepper matches full recompute") {
  std::mt19937_64 rng(72);
  const ModelConfig cfg = tiny_config(Variant::at_teacher);
  Model m(cfg, 13);
  Segment a = random_segment(rng, 2, cfg.vocab_size), b = random_segment(rng, 3, cfg.vocab_size);
  const Segment* both[] = {&a, &b};
  SeqBatch src = source_batch(cfg, both);
  TeacherStepper st(m, src);
  const std::vector<int> pa = random_prefix(rng, 7, cfg.vocab_size), pb = random_prefix(rng, 5, cfg.vocab_size);
  for (std::size_t t = 0; t < pa.size(); ++t) {
    std::vector<std::size_t> which = {0};
    std::vector<int> toks = {pa[t]};
    if (t < pb.size()) {
      which.push_back(1);
      toks.push_back(pb[t]);
    }
    const Array out = st.step(which, toks);
    for (std::size_t i = 0; i < which.size(); ++i) {
      const Segment& seg = which[i] == 0 ? a : b;
      const auto& p = which[i] == 0 ? pa : pb;
      const auto ref = decode_at_step(m, seg.src_tokens(), seg.src_tags(),
                                      std::vector<int>(p.begin(), p.begin() + long(t) + 1));
      for (std::size_t c = 0; c < ref.size(); ++c) CHECK(out(i, c) == Catch::Approx(ref[c]).margin(1e-10));
    }
  }
  CHECK(st.tag(0) == teacher_input_tags(pa).back());
}

TEST_CASE("teacher forcing loss equals stepwise likelihood") {
  std::mt19937_64 rng(81);
  const ModelConfig cfg = tiny_config(Variant::at_teacher);
  Model m(cfg, 14);
  for (int trial = 0; trial < 5; ++trial) {
    Segment s = random_segment(rng, 2, cfg.vocab_size);
    const Segment* p = &s;
    nc::Graph g;
    Forward f(m, g);
    std::mt19937_64 lrng(0);
    const double parallel = loss::composite_loss(f, std::span(&p, 1), {}, lrng).loss.value().item();
    const std::vector<int> d = loss::teacher_targets(s);
    std::vector<int> prefix = {kBos};
    double nll = 0.0;
    for (int y : d) {
      const auto logits = decode_at_step(m, s.src_tokens(), s.src_tags(), prefix);
      nll -= logits[std::size_t(y)] - kernels::logsumexp(logits);
      prefix.push_back(y);
    }
    CHECK(std::abs(parallel - nll / double(d.size())) < 1e-9);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  const ModelConfig cfg = tiny_config(Variant::gtrans_dag);
  Model m(cfg, 99);
  m.arrays()[0][0] = -0.0;
  m.arrays()[0][1] = 1e-310;
  const std::vector<std::string> vocab = {"<pad>", "<s>", "</s>", "<blank>", "<unk>", "a", "b"};
  const auto path = std::filesystem::temp_directory_path() / "natdoc_test_ckpt.bin";
  save_checkpoint(path.string(), m, vocab, {{"step", "42"}});
  const Checkpoint c = load_checkpoint(path.string());
  CHECK(config_to_map(c.model.config()) == config_to_map(cfg));
  CHECK(c.vocab == vocab);
  CHECK(c.meta.at("step") == "42");
  REQUIRE(c.model.names() == m.names());
  for (std::size_t i = 0; i < m.arrays().size(); ++i) {
    CHECK(c.model.arrays()[i].shape() == m.arrays()[i].shape());
    CHECK(bit_equal(c.model.arrays()[i].values(), m.arrays()[i].values()));
  }
  std::filesystem::remove(path);

  auto kv = config_to_map(cfg);
  kv["dropout"] = "0.1";
  CHECK_THROWS_AS(config_from_map(kv), ConfigError);
  CHECK_THROWS(load_checkpoint((std::filesystem::temp_directory_path() / "natdoc_missing.bin").string()));
}
