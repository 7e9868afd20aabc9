#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "deflare/core/tape.hpp"

namespace deflare {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor of the per-coordinate relative error, so that
  // near-zero gradient entries are judged on absolute error instead.
  double scale_floor = 1e-4;
  // Coordinates examined per input; 0 means all. Larger inputs are sampled on
  // an evenly spaced subset.
  std::size_t max_coords_per_input = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

// Compares the tape gradient of a scalar composite against central differences
// (f(x+h) - f(x-h)) / 2h, one coordinate at a time.
//
// `f(tape, leaves)` must build the scalar on `tape` from the given leaves.
template <class F>
GradCheckReport grad_check(F&& f, std::vector<Tensor<double>> points,
                           const GradCheckOptions& opt = {}) {
  auto evaluate = [&](const std::vector<Tensor<double>>& pts) {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& p : pts) leaves.push_back(tape.leaf(p, false));
    const double v = f(tape, std::span<const Var<double>>(leaves)).value()[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
    return v;
  };

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& p : points) leaves.push_back(tape.leaf(p, true));
    Var<double> out = f(tape, std::span<const Var<double>>(leaves));
    if (out.value().size() != 1) throw DimensionError("grad_check: function is not scalar");
    if (!std::isfinite(out.value()[0])) {
      throw NumericError("grad_check: non-finite function value");
    }
    tape.backward(out);
    for (const auto& l : leaves) analytic.push_back(tape.grad(l));
  }

  GradCheckReport report;
  const double h = opt.step;
  for (std::size_t t = 0; t < points.size(); ++t) {
    const std::size_t n = points[t].size();
    std::size_t stride = 1;
    if (opt.max_coords_per_input && n > opt.max_coords_per_input) {
      stride = (n + opt.max_coords_per_input - 1) / opt.max_coords_per_input;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double x0 = points[t][i];
      points[t][i] = x0 + h;
      const double fp = evaluate(points);
      points[t][i] = x0 - h;
      const double fm = evaluate(points);
      points[t][i] = x0;
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic[t][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opt.scale_floor});
      ++report.coords_checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = t;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace deflare
