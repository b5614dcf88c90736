#include "icl/evaluation.hpp"

#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <Eigen/Dense>

#include "icl/csv.hpp"

namespace icl {

double EvalCurve::mean() const {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

Tensor targets_of(const PromptBatch& prompts) { return Tensor({prompts.batch, prompts.pairs}, prompts.y); }

Normalizer Normalizer::from_targets(const Tensor& targets) {
  if (targets.rank() != 2 || targets.empty()) throw std::invalid_argument("Normalizer: expected batch x pairs targets");
  const std::size_t batch = targets.extent(0);
  const std::size_t pairs = targets.extent(1);
  Normalizer n;
  n.second_moment.assign(pairs, 0.0);
  for (std::size_t i = 0; i < pairs; ++i) {
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double diff = 0.0 - targets.at(b, i);
      acc += diff * diff;
    }
    n.second_moment[i] = acc / static_cast<double>(batch);
  }
  return n;
}

Normalizer Normalizer::from_targets(const PromptBatch& prompts) { return from_targets(targets_of(prompts)); }

EvalCurve normalized_mse(const Tensor& predictions, const Tensor& targets, const Normalizer& normalizer) {
  if (predictions.shape() != targets.shape() || predictions.rank() != 2)
    throw std::invalid_argument("normalized_mse: predictions and targets must both be batch x pairs");
  const std::size_t batch = targets.extent(0);
  const std::size_t pairs = targets.extent(1);
  if (normalizer.second_moment.size() != pairs) throw std::invalid_argument("normalized_mse: normalizer length mismatch");
  EvalCurve curve;
  curve.sequences = batch;
  curve.values.resize(pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    const double norm = normalizer.second_moment[i];
    if (!(norm > 0.0)) throw std::invalid_argument("normalized_mse: normalizer must be positive");
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double diff = predictions.at(b, i) - targets.at(b, i);
      acc += diff * diff;
    }
    curve.values[i] = (acc / static_cast<double>(batch)) / norm;
  }
  return curve;
}

EvalCurve normalized_mse(const Tensor& predictions, const PromptBatch& prompts, const Normalizer& normalizer) {
  return normalized_mse(predictions, targets_of(prompts), normalizer);
}

double ols_predict(std::span<const double> prefix_x, std::span<const double> prefix_y,
                   std::span<const double> query) {
  const std::size_t d = query.size();
  const std::size_t i = prefix_y.size();
  if (d == 0) throw std::invalid_argument("ols_predict: empty query");
  if (prefix_x.size() != i * d) throw std::invalid_argument("ols_predict: prefix shape mismatch");
  if (i == 0) return 0.0;
  const auto rows = static_cast<Eigen::Index>(i);
  const auto cols = static_cast<Eigen::Index>(d);
  // Owned copies: reductions over caller memory would round according to its alignment.
  const Eigen::MatrixXd a = Eigen::Map<const RowMatrix>(prefix_x.data(), rows, cols);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(prefix_y.data(), rows);
  const Eigen::VectorXd q = Eigen::Map<const Eigen::VectorXd>(query.data(), cols);
  const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  const Eigen::VectorXd beta = cod.solve(y);
  return beta.dot(q);
}

Tensor ols_predictions(const PromptBatch& prompts) {
  Tensor out({prompts.batch, prompts.pairs});
  const std::size_t d = prompts.dim;
  for (std::size_t b = 0; b < prompts.batch; ++b) {
    const double* xs = prompts.x.data() + b * prompts.pairs * d;
    const double* ys = prompts.y.data() + b * prompts.pairs;
    for (std::size_t i = 0; i < prompts.pairs; ++i) {
      out.at(b, i) = ols_predict({xs, i * d}, {ys, i}, {xs + i * d, d});
    }
  }
  return out;
}

Tensor zero_predictions(const PromptBatch& prompts) { return Tensor({prompts.batch, prompts.pairs}); }

std::vector<double> moving_average(std::span<const double> series, std::size_t window) {
  if (window < 1) throw std::invalid_argument("moving_average: window must be >= 1");
  if (series.empty()) throw std::invalid_argument("moving_average: empty series");
  std::vector<double> out(series.size());
  for (std::size_t k = 0; k < series.size(); ++k) {
    const std::size_t len = std::min(k + 1, window);
    double acc = 0.0;
    for (std::size_t j = k + 1 - len; j <= k; ++j) acc += series[j];
    out[k] = acc / static_cast<double>(len);
  }
  return out;
}

bool convergence_check(const EvalCurve& curve, std::size_t window) {
  if (curve.values.size() < window) throw std::invalid_argument("convergence_check: curve shorter than window");
  return moving_average(curve.values, window).back() < 1.0;
}

void write_curves_csv(std::ostream& out, std::span<const EvalCurve> curves) {
  write_csv_version(out);
  out << "shots,value,task,model,seed\n";
  out << std::setprecision(17);
  for (const auto& c : curves)
    for (std::size_t s = 0; s < c.values.size(); ++s)
      out << s << ',' << c.values[s] << ',' << c.task << ',' << c.model << ',' << c.seed << '\n';
}

}  // namespace icl
