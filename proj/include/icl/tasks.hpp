#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "icl/rng.hpp"

namespace icl {

enum class FunctionClass { Linear, Quadratic, Cubic };

enum class DistributionKind { IsotropicGaussian, SkewedGaussian, StudentT };

inline constexpr double kStudentTDegreesOfFreedom = 4.0;

struct InputDistribution {
  DistributionKind kind = DistributionKind::IsotropicGaussian;
  // Skewed covariance eigenvalues are 1 / k^skew_exponent, k = 1..d.
  double skew_exponent = 2.0;
  // Seeds the random orthogonal basis of the skewed covariance.
  std::uint64_t basis_seed = 20240101;
  // Student-t coordinates are divided by sqrt(df / (df - 2)) when set.
  bool unit_variance = true;

  friend bool operator==(const InputDistribution&, const InputDistribution&) = default;
};

struct TaskSpec {
  FunctionClass function_class = FunctionClass::Linear;
  InputDistribution inputs;
  std::size_t dim = 5;

  std::string name() const;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

// Prompt data as the model and the evaluators see it: no hidden weights.
struct PromptBatch {
  std::size_t batch = 0;
  std::size_t pairs = 0;
  std::size_t dim = 0;
  std::size_t task_id = 0;
  std::vector<double> x;  // batch x pairs x dim
  std::vector<double> y;  // batch x pairs

  std::span<const double> input(std::size_t b, std::size_t i) const {
    return {x.data() + (b * pairs + i) * dim, dim};
  }
  double target(std::size_t b, std::size_t i) const { return y[b * pairs + i]; }
};

struct SequenceBatch {
  PromptBatch prompts;
  std::vector<double> weights;  // batch x dim, constant within a sequence

  std::span<const double> weight(std::size_t b) const { return {weights.data() + b * prompts.dim, prompts.dim}; }
};

// He_n(t) / sqrt(n!) for n in {1, 2, 3}.
double hermite_normalized(int degree, double t);

double eval_phi(FunctionClass cls, double t);

// count x dim row-major samples.
std::vector<double> sample_inputs(const InputDistribution& dist, std::size_t count, std::size_t dim, Rng& rng);

// Orthogonal d x d basis used by the skewed distribution (row-major).
std::vector<double> skew_basis(const InputDistribution& dist, std::size_t dim);
std::vector<double> skew_eigenvalues(const InputDistribution& dist, std::size_t dim);

SequenceBatch generate_batch(const TaskSpec& spec, std::size_t batch, std::size_t pairs, Rng& rng,
                             std::size_t task_id = 0);

// One JSON object per line: {"task":..,"d":..,"n":..,"w":[..],"x":[[..],..],"y":[..]}.
void write_dataset(std::ostream& out, const SequenceBatch& batch);
std::vector<SequenceBatch> read_dataset(std::istream& in);

std::string to_string(FunctionClass cls);
std::string to_string(DistributionKind kind);
FunctionClass parse_function_class(const std::string& s);
DistributionKind parse_distribution(const std::string& s);

}  // namespace icl
