// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lcf/core.hpp"

namespace lcf {

struct GradReport {
  std::string op;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int probes = 0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
// Throws when f evaluates non-finite near x.
std::vector<double> numeric_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double h);

// Verifies the analytic gradients of bilinear_sample (wrt u, v), linear
// (wrt x and W), softmax, ffn, and deform_attn (wrt the query) against
// central finite differences. Runs in 64-bit mode regardless of the
// caller's precision; bilinear probes keep at least 1e-3 cells away from
// interpolation lattice lines. Relative error uses the denominator
// max(|analytic|, |numeric|, 1e-8).
std::vector<GradReport> check_gradients(uint64_t seed, double tol = 1e-5,
                                        int probes = 32, double h = 1e-5);

inline bool all_pass(std::span<const GradReport> reports) {
  for (const GradReport& r : reports)
    if (!r.pass) return false;
  return !reports.empty();
}

}  // namespace lcf
