#include "icl/ops.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <Eigen/Core>

namespace icl {
namespace {

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

using ConstArray = Eigen::Map<const Eigen::ArrayXd>;
using Array = Eigen::Map<Eigen::ArrayXd>;

}  // namespace

void causal_softmax_inplace(Eigen::Ref<RowMatrix> scores) {
  const Eigen::Index n = scores.rows();
  if (n < 1 || scores.cols() != n) throw std::invalid_argument("causal_softmax: expected a square matrix");
  for (Eigen::Index i = 0; i < n; ++i) {
    auto seg = scores.row(i).head(i + 1).array();
    if (!seg.allFinite()) {
      // -inf is a legal logit (a masked entry); NaN and +inf are not.
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double v = seg(j);
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
          throw std::domain_error("causal_softmax: non-finite logit");
      }
      if (!(seg.maxCoeff() > -std::numeric_limits<double>::infinity()))
        throw std::domain_error("causal_softmax: row has no finite logit");
    }
    const double mx = seg.maxCoeff();
    seg = (seg - mx).exp();
    seg /= seg.sum();
    scores.row(i).tail(n - i - 1).setZero();
  }
}

Tensor causal_softmax(const Tensor& scores) {
  if (scores.rank() != 2 || scores.extent(0) != scores.extent(1) || scores.extent(0) == 0) {
    throw std::invalid_argument("causal_softmax: expected a square matrix, got " +
                                shape_string(scores.shape()));
  }
  Tensor out = scores;
  causal_softmax_inplace(out.as_matrix());
  return out;
}

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                               std::span<const double> bias, double eps) {
  if (x.size() != gain.size() || x.size() != bias.size()) {
    throw std::invalid_argument("layer_norm: length mismatch");
  }
  if (x.empty()) throw std::invalid_argument("layer_norm: empty input");
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double rstd = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gain[i] * (x[i] - mean) * rstd + bias[i];
  return out;
}

double gelu(double x) {
  const double z = 2.0 * kGeluScale * (x + kGeluCubic * x * x * x);
  return x / (1.0 + std::exp(-z));
}

double gelu_derivative(double x) {
  const double z = 2.0 * kGeluScale * (x + kGeluCubic * x * x * x);
  const double s = 1.0 / (1.0 + std::exp(-z));
  const double dz = 2.0 * kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
  return s + x * s * (1.0 - s) * dz;
}

void gelu_forward(std::span<const double> in, std::span<double> out) {
  if (in.size() != out.size()) throw std::invalid_argument("gelu_forward: size mismatch");
  const auto n = static_cast<Eigen::Index>(in.size());
  ConstArray x(in.data(), n);
  Array y(out.data(), n);
  y = x / (1.0 + (-2.0 * kGeluScale * (x + kGeluCubic * x.cube())).exp());
}

void gelu_backward(std::span<const double> pre, std::span<const double> grad_out,
                   std::span<double> grad_in) {
  if (pre.size() != grad_out.size() || pre.size() != grad_in.size()) {
    throw std::invalid_argument("gelu_backward: size mismatch");
  }
  if (grad_in.data() == grad_out.data()) throw std::invalid_argument("gelu_backward: output aliases input");
  const auto n = static_cast<Eigen::Index>(pre.size());
  ConstArray x(pre.data(), n);
  ConstArray g(grad_out.data(), n);
  Array out(grad_in.data(), n);
  out = 1.0 / (1.0 + (-2.0 * kGeluScale * (x + kGeluCubic * x.cube())).exp());
  out = g * (out + x * out * (1.0 - out) * (2.0 * kGeluScale) * (1.0 + 3.0 * kGeluCubic * x.square()));
}

}  // namespace icl
