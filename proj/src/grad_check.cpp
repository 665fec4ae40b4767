// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "natdoc/errors.hpp"

namespace natdoc::nc {

namespace {

double evaluate(const ScalarFn& f, std::span<Array* const> params) {
  Graph g(false);
  std::vector<Var> vars;
  for (Array* p : params) vars.push_back(g.parameter(*p));
  return f(g, vars).value().item();
}

}  // namespace

GradCheckResult grad_check_detailed(const ScalarFn& f, std::span<Array* const> params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-3)) throw DomainError("grad_check: eps must lie in (0, 1e-3]");
  std::vector<Array> analytic;
  {
    Graph g;
    std::vector<Var> vars;
    for (Array* p : params) vars.push_back(g.parameter(*p));
    analytic = gradients(f(g, vars), vars);
  }
  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Array& p = *params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + eps;
      const double up = evaluate(f, params);
      p[i] = orig - eps;
      const double down = evaluate(f, params);
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (!(err <= res.max_rel_error)) {
        res.max_rel_error = std::isnan(err) ? INFINITY : err;
        res.worst_param = pi;
        res.worst_index = i;
      }
    }
  }
  return res;
}

double grad_check(const ScalarFn& f, std::span<Array* const> params, double eps) {
  return grad_check_detailed(f, params, eps).max_rel_error;
}

}  // namespace natdoc::nc
