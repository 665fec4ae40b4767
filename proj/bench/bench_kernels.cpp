// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference kernels against the OpenMP kernels.
//
//   bench_kernels [--threads N] [--reps R] [--sizes 64,128,256]

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "CLI11.hpp"
#include "natdoc/kernels.hpp"

using namespace natdoc;

namespace {

double median_seconds(std::size_t reps, const std::function<void()>& f) {
  f();
  std::vector<double> t;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

void bench_gemm(std::size_t n, std::size_t reps, std::mt19937_64& rng) {
  const auto a = random_values(rng, n * n), b = random_values(rng, n * n);
  std::vector<double> c1(n * n), c2(n * n);
  kernels::GemmArgs g{.m = n, .n = n, .k = n, .a = a.data(), .lda = n, .b = b.data(), .ldb = n, .ldc = n};
  g.c = c1.data();
  const double ts = median_seconds(reps, [&] { kernels::serial::gemm(g); });
  g.c = c2.data();
  const double tp = median_seconds(reps, [&] { kernels::parallel::gemm(g); });
  const double flops = 2.0 * double(n) * double(n) * double(n);
  std::printf("gemm       n=%-4zu serial %9.3f ms %6.2f GFLOP/s  parallel %9.3f ms %6.2f GFLOP/s  x%.2f  max|diff| %.1e\n", n,
              1e3 * ts, flops / ts * 1e-9, 1e3 * tp, flops / tp * 1e-9, ts / tp, max_diff(c1, c2));
}

// Block-diagonal group attention over four equal sentences, 4 heads of width 16.
void bench_attention(std::size_t n, std::size_t reps, std::mt19937_64& rng) {
  const std::size_t d = 64, groups = 4, len = n / groups;
  const auto q = random_values(rng, n * d), k = random_values(rng, n * d), v = random_values(rng, n * d);
  const kernels::AttnShape s{.n_q = n, .n_k = n, .dim = d, .heads = 4};
  nc::BoolArray mask({n, n}, false);
  std::vector<kernels::AttnBlock> blocks;
  for (std::size_t gi = 0; gi < groups; ++gi) {
    blocks.push_back({.q0 = gi * len, .nq = len, .k0 = gi * len, .nk = len});
    for (std::size_t i = gi * len; i < (gi + 1) * len; ++i)
      for (std::size_t j = gi * len; j < (gi + 1) * len; ++j) mask.set(i, j, true);
  }
  std::vector<double> o1(n * d), o2(n * d);
  const double ts = median_seconds(reps, [&] { kernels::serial::attention_dense(q.data(), k.data(), v.data(), s, mask, o1.data()); });
  const double tp = median_seconds(
      reps, [&] { kernels::parallel::attention_forward(q.data(), k.data(), v.data(), s, blocks, o2.data(), nullptr); });
  std::printf("attention  n=%-4zu serial %9.3f ms                  parallel %9.3f ms                  x%.2f  max|diff| %.1e\n", n,
              1e3 * ts, 1e3 * tp, ts / tp, max_diff(o1, o2));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial reference kernels against the OpenMP kernels"};
  int threads = 0;
  std::size_t reps = 5;
  std::vector<std::size_t> sizes = {64, 128, 256, 512};
  app.add_option("--threads", threads, "OpenMP threads (0: default)");
  app.add_option("--reps", reps, "timed repetitions (median)");
  app.add_option("--sizes", sizes, "matrix and sequence sizes")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) omp_set_num_threads(threads);
  std::printf("threads %d, median of %zu\n", omp_get_max_threads(), reps);
  std::mt19937_64 rng(1);
  for (std::size_t n : sizes) bench_gemm(n, reps, rng);
  for (std::size_t n : sizes) bench_attention(n, reps, rng);
  return 0;
}
