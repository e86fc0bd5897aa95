// Central finite-difference verification of analytic gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "nlab/core.hpp"
#include "nlab/tensor.hpp"

namespace nlab {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  bool passed = true;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  std::size_t min_coordinates = 100;
  // Denominator floor: gradients smaller than this are compared absolutely.
  double scale_floor = 1e-4;
  std::uint64_t seed = 7;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares `analytic[t]` against central differences of `value_fn()` while
/// perturbing `variables[t]` in place. Checks every coordinate when there are at
/// most `min_coordinates`, otherwise a seeded random subsample of that many.
template <class ValueFn>
GradCheckReport gradient_check(ValueFn&& value_fn, std::span<Tensor* const> variables,
                               std::span<const Tensor> analytic, const GradCheckOptions& opt = {}) {
  require(variables.size() == analytic.size(), "gradient_check: variable/gradient count mismatch");
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < variables.size(); ++t) {
    require(variables[t]->size() == analytic[t].size(), "gradient_check: gradient shape mismatch");
    for (std::size_t j = 0; j < variables[t]->size(); ++j) coords.emplace_back(t, j);
  }
  if (coords.size() > opt.min_coordinates) {
    Rng rng = stream(opt.seed, 0x9c);
    shuffle(coords, rng);
    coords.resize(opt.min_coordinates);
  }
  GradCheckReport report;
  for (auto [t, j] : coords) {
    double& x = variables[t]->data[j];
    const double saved = x;
    x = saved + opt.epsilon;
    const double up = value_fn();
    x = saved - opt.epsilon;
    const double down = value_fn();
    x = saved;
    const double numeric = (up - down) / (2.0 * opt.epsilon);
    report.max_relative_error =
        std::max(report.max_relative_error, relative_error(analytic[t].data[j], numeric, opt.scale_floor));
    ++report.coordinates_checked;
  }
  report.passed = report.max_relative_error < opt.tolerance;
  return report;
}

}  // namespace nlab
