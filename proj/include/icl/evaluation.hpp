#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "icl/tasks.hpp"
#include "icl/tensor.hpp"

namespace icl {

// values[s] is the error of the prediction made after s in-context examples, s = 0..n-1.
struct EvalCurve {
  std::vector<double> values;
  std::string task;
  std::string model;
  std::uint64_t seed = 0;
  std::size_t sequences = 0;

  std::size_t size() const { return values.size(); }
  double mean() const;
};

// Per-shot second moment of the targets of an evaluation set. Dividing by it makes the
// constant-zero predictor score exactly 1 at every shot.
struct Normalizer {
  std::vector<double> second_moment;

  static Normalizer from_targets(const PromptBatch& prompts);
  static Normalizer from_targets(const Tensor& targets);
};

EvalCurve normalized_mse(const Tensor& predictions, const Tensor& targets, const Normalizer& normalizer);
EvalCurve normalized_mse(const Tensor& predictions, const PromptBatch& prompts, const Normalizer& normalizer);

Tensor targets_of(const PromptBatch& prompts);

// Minimum-norm least-squares fit of the prefix, evaluated at `query`. An empty prefix predicts 0.
double ols_predict(std::span<const double> prefix_x, std::span<const double> prefix_y,
                   std::span<const double> query);

// batch x pairs OLS predictions, each from the preceding pairs of its own sequence.
Tensor ols_predictions(const PromptBatch& prompts);

Tensor zero_predictions(const PromptBatch& prompts);

// Trailing mean over the last min(k, w) entries.
std::vector<double> moving_average(std::span<const double> series, std::size_t window);

// True iff the moving-averaged curve is below 1 at the largest shot count.
bool convergence_check(const EvalCurve& curve, std::size_t window);

// Columns: shots,value,task,model,seed
void write_curves_csv(std::ostream& out, std::span<const EvalCurve> curves);

}  // namespace icl
