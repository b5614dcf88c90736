#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace icl {

// A scalar function of a flat parameter vector together with its analytic gradient.
// value may be evaluated in extended precision so that the difference quotient keeps its digits.
struct DifferentiableFunction {
  std::function<long double(std::span<const double>)> value;
  std::function<std::vector<double>(std::span<const double>)> gradient;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares the analytic gradient against central differences coordinate by coordinate.
// Relative error per coordinate: |a - c| / max(|a|, |c|, 1e-8). The quotient divides by the
// step actually taken, (x + h) - (x - h) after rounding, rather than the nominal 2h.
GradientCheckResult gradient_check(const DifferentiableFunction& fn, std::span<const double> point,
                                   double step);

}  // namespace icl
