#include "icl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace icl {

GradientCheckResult gradient_check(const DifferentiableFunction& fn, std::span<const double> point,
                                   double step) {
  if (!(step > 0.0)) throw std::invalid_argument("gradient_check: step must be positive");
  const long double base = fn.value(point);
  if (!std::isfinite(base)) throw std::runtime_error("gradient_check: non-finite value at point");
  const std::vector<double> analytic = fn.gradient(point);
  if (analytic.size() != point.size()) throw std::invalid_argument("gradient_check: gradient size mismatch");

  GradientCheckResult result;
  std::vector<double> probe(point.begin(), point.end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    const double hi = orig + step;
    const double lo = orig - step;
    probe[i] = hi;
    const long double up = fn.value(probe);
    probe[i] = lo;
    const long double down = fn.value(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("gradient_check: non-finite value at coordinate " + std::to_string(i));
    }
    const auto numeric = static_cast<double>((up - down) / static_cast<long double>(hi - lo));
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (i == 0 || rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_index = i;
      result.worst_analytic = analytic[i];
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace icl
