// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "natdoc/autodiff.hpp"

namespace natdoc::nc {

// Builds a scalar from parameter handles bound in the given graph.
using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

// Compares reverse-mode gradients against central differences. The error of
// one coordinate is |analytic - numeric| / max(1, |analytic|); the maximum
// over all coordinates is returned. eps must lie in (0, 1e-3].
GradCheckResult grad_check_detailed(const ScalarFn& f, std::span<Array* const> params, double eps);
double grad_check(const ScalarFn& f, std::span<Array* const> params, double eps = 1e-6);

}  // namespace natdoc::nc
