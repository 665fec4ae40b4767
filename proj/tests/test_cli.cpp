// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

// Runs the natdoc binary named by $NATDOC_CLI.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

fs::path workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("natdoc_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string cli() {
  const char* p = std::getenv("NATDOC_CLI");
  REQUIRE(p != nullptr);
  return p;
}

// Exit status of `natdoc <args>`, run inside the work directory.
int run(const std::string& args, std::string* out = nullptr) {
  const fs::path log = workdir() / "last_output.txt";
  const std::string cmd = "cd '" + workdir().string() + "' && '" + cli() + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  if (out) {
    std::ifstream in(log);
    std::ostringstream ss;
    ss << in.rdbuf();
    *out = ss.str();
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(workdir() / p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

const std::string kSmall =
    "--set data.train_docs=40 --set data.dev_docs=8 --set data.test_docs=8 --set data.vocab_size=16";
const std::string kTiny =
    "--set model.d_model=16 --set model.d_ff=32 --set model.heads=2 --set model.layers=1 "
    "--set train.steps=4 --set train.eval_every=4 --set train.log_every=2 --set train.batch_tokens=256";

void ensure_small_corpus() {
  if (fs::exists(workdir() / "small/manifest.json")) return;
  REQUIRE(run("gen-data --out small " + kSmall) == 0);
}

void ensure_models() {
  ensure_small_corpus();
  if (!fs::exists(workdir() / "teacher.ckpt"))
    REQUIRE(run("train --data small --variant at_teacher --out teacher.ckpt " + kTiny) == 0);
  if (!fs::exists(workdir() / "glat_ctc.ckpt"))
    REQUIRE(run("train --data small --variant gtrans_glat_ctc --out glat_ctc.ckpt " + kTiny) == 0);
}

}  // namespace

TEST_CASE("gen-data defaults and manifest") {
  std::string out;
  REQUIRE(run("gen-data --out full", &out) == 0);
  CHECK(lines(slurp("full/train.jsonl")) == 2000);
  CHECK(lines(slurp("full/dev.jsonl")) == 200);
  CHECK(lines(slurp("full/test.jsonl")) == 200);
  const auto m = nlohmann::json::parse(slurp("full/manifest.json"));
  CHECK(m["ambiguity"].get<double>() == 0.5);
  CHECK(m["sentences"].get<int>() == 4);
  CHECK(m["vocab_size"].get<int>() == 64);
  CHECK(m["documents"]["train"].get<int>() == 2000);
  CHECK(m["segments"].get<int>() > 0);
  CHECK(fs::exists(workdir() / "full/config.ini"));
}

TEST_CASE("gen-data is deterministic and refuses to overwrite") {
  REQUIRE(run("gen-data --out a " + kSmall) == 0);
  REQUIRE(run("gen-data --out b " + kSmall) == 0);
  CHECK(slurp("a/train.jsonl") == slurp("b/train.jsonl"));
  CHECK(slurp("a/test.jsonl") == slurp("b/test.jsonl"));
  CHECK(slurp("a/vocab.txt") == slurp("b/vocab.txt"));
  std::string out;
  CHECK(run("gen-data --out a " + kSmall, &out) == 2);
  CHECK(out.find("--force") != std::string::npos);
  CHECK(run("gen-data --force --out a " + kSmall + " --set data.seed=2") == 0);
  CHECK(slurp("a/train.jsonl") != slurp("b/train.jsonl"));
}

TEST_CASE("config errors exit 1") {
  std::string out;
  CHECK(run("gen-data --out x --set model.nope=1", &out) == 1);
  CHECK(out.find("unknown key 'nope' in [model]") != std::string::npos);
  std::ofstream(workdir() / "bad.ini") << "[data]\nseed = 3\n[train]\nlr = fast\n";
  CHECK(run("gen-data --out x --config bad.ini", &out) == 1);
  CHECK(out.find("bad.ini:4") != std::string::npos);
  CHECK(run("frobnicate") == 1);
  CHECK(run("--help", &out) == 0);
  CHECK(out.find("train.lr") != std::string::npos);
}

TEST_CASE("train, translate and evaluate") {
  ensure_models();
  CHECK(lines(slurp("glat_ctc.ckpt.log")) == 3);
  CHECK(slurp("glat_ctc.ckpt.log").rfind("step=0 loss=", 0) == 0);
  CHECK(fs::exists(workdir() / "glat_ctc.ckpt.config.ini"));

  REQUIRE(run("translate --model glat_ctc.ckpt --input small/test.jsonl --out hyp.jsonl --timed") == 0);
  const std::string hyp = slurp("hyp.jsonl");
  CHECK(lines(hyp) == 8);
  std::istringstream in(hyp);
  std::string first;
  std::getline(in, first);
  const auto j = nlohmann::json::parse(first);
  CHECK(j.contains("seconds"));
  CHECK(j["tgt"].size() == 4);

  std::string out;
  REQUIRE(run("evaluate --hyp small/test.jsonl --ref small/test.jsonl --granularity doc", &out) == 0);
  CHECK(out.find("d-BLEU 100.00") != std::string::npos);
  REQUIRE(run("evaluate --hyp hyp.jsonl --ref small/test.jsonl --granularity sent --json g.metrics.json --name "
              "glat_ctc --corpus-kind raw") == 0);
  CHECK(nlohmann::json::parse(slurp("g.metrics.json"))["granularity"] == "sent");
  CHECK(run("evaluate --hyp hyp.jsonl --ref small/test.jsonl --granularity word") == 1);
  CHECK(run("evaluate --hyp missing.jsonl --ref small/test.jsonl") == 2);
}

TEST_CASE("unaligned output fails s-BLEU with exit 2") {
  ensure_small_corpus();
  std::ifstream in(workdir() / "small/test.jsonl");
  std::ofstream out(workdir() / "merged.jsonl");
  for (std::string line; std::getline(in, line);) {
    auto j = nlohmann::json::parse(line);
    std::string joined;
    for (const auto& s : j["tgt"]) joined += (joined.empty() ? "" : " ") + s.get<std::string>();
    j["tgt"] = {joined};
    out << j.dump() << "\n";
  }
  out.close();
  std::string msg;
  CHECK(run("evaluate --hyp merged.jsonl --ref small/test.jsonl --granularity sent", &msg) == 2);
  CHECK(msg.find("sentence counts differ") != std::string::npos);
  CHECK(run("evaluate --hyp merged.jsonl --ref small/test.jsonl --granularity doc", &msg) == 0);
  CHECK(msg.find("d-BLEU 100.00") != std::string::npos);
}

TEST_CASE("bench and report") {
  ensure_models();
  REQUIRE(run("bench --model teacher.ckpt --model glat_ctc.ckpt --corpus small/test.jsonl --out speed "
              "--buckets sent,64 --batch-sizes 1,2 --reps 3 --segments 2") == 0);
  const std::string csv = slurp("speed.csv");
  CHECK(csv.rfind("model,variant,bucket,batch,segments,mean_tokens,seconds,init_seconds,speedup,speedup_ex\n", 0) == 0);
  CHECK(lines(csv) == 9);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line))
    if (line.rfind("teacher,", 0) == 0) CHECK(line.substr(line.size() - 14) == ",1.0000,1.0000");
  CHECK(slurp("speed.svg").find("<svg") != std::string::npos);

  CHECK(run("bench --model glat_ctc.ckpt --corpus small/test.jsonl --out nope --reps 1") == 1);

  std::string a, b;
  REQUIRE(run("report --dir .", &a) == 0);
  const std::string first = slurp("report.md");
  REQUIRE(run("report --dir .", &b) == 0);
  CHECK(slurp("report.md") == first);
  CHECK(first.find("| glat_ctc |") != std::string::npos);
  CHECK(first.find("absent") != std::string::npos);
}

TEST_CASE("distill writes a corpus of the same shape") {
  ensure_models();
  REQUIRE(run("distill --teacher teacher.ckpt --input small/dev.jsonl --out kd.jsonl") == 0);
  CHECK(lines(slurp("kd.jsonl")) == 8);
  CHECK(run("distill --teacher teacher.ckpt --input small/dev.jsonl --out kd.jsonl") == 2);
  CHECK(run("train --data small --variant glat --train-file kd.jsonl --out kd.ckpt " + kTiny) == 0);
}
