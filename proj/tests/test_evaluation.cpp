#include <cmath>
#include <sstream>
#include <vector>

#include <doctest.h>

#include "icl/csv.hpp"
#include "icl/evaluation.hpp"

using namespace icl;

namespace {

PromptBatch linear_prompts(std::size_t batch, std::size_t pairs, std::size_t dim, std::uint64_t seed) {
  Rng rng = make_rng(seed, 3);
  return generate_batch(TaskSpec{FunctionClass::Linear, {}, dim}, batch, pairs, rng).prompts;
}

Tensor scaled_targets(const PromptBatch& p, double s) {
  Tensor t = targets_of(p);
  for (double& v : t.values()) v *= s;
  return t;
}

}  // namespace

TEST_CASE("zero, perfect and doubled predictors") {
  for (auto cls : {FunctionClass::Linear, FunctionClass::Quadratic, FunctionClass::Cubic}) {
    Rng rng = make_rng(4, 4);
    const PromptBatch p = generate_batch(TaskSpec{cls, {}, 3}, 16, 9, rng).prompts;
    const Normalizer n = Normalizer::from_targets(p);
    for (double v : normalized_mse(zero_predictions(p), p, n).values) CHECK(v == 1.0);
    for (double v : normalized_mse(targets_of(p), p, n).values) CHECK(v == 0.0);
    for (double v : normalized_mse(scaled_targets(p, 2.0), p, n).values) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("normalizer is the per-shot second moment") {
  const Tensor y = Tensor::matrix(2, 2, {1.0, 3.0, -1.0, 1.0});
  const Normalizer n = Normalizer::from_targets(y);
  CHECK(n.second_moment == std::vector<double>{1.0, 5.0});
  const Tensor pred = Tensor::matrix(2, 2, {0.0, 3.0, 0.0, 0.0});
  const EvalCurve c = normalized_mse(pred, y, n);
  CHECK(c.values[0] == 1.0);
  CHECK(c.values[1] == doctest::Approx(0.1));
  CHECK(c.mean() == doctest::Approx(0.55));
  CHECK(c.sequences == 2);
}

TEST_CASE("ols interpolates exactly") {
  const std::vector<double> x{1, 0, 0, 1}, y{3, -1}, q{1, 1};
  CHECK(ols_predict(x, y, q) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(ols_predict({}, {}, q) == 0.0);
  // Underdetermined: minimum-norm solution of x1 + x2 = 2 is (1, 1).
  const std::vector<double> x1{1, 1}, y1{2}, q1{1, 0};
  CHECK(ols_predict(x1, y1, q1) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("ols recovers noiseless linear tasks once shots reach d") {
  const std::size_t d = 5;
  const PromptBatch p = linear_prompts(32, 12, d, 1);
  const EvalCurve c = normalized_mse(ols_predictions(p), p, Normalizer::from_targets(p));
  CHECK(c.values[0] == 1.0);
  for (std::size_t s = 1; s < d; ++s) CHECK(c.values[s] > 1e-3);
  for (std::size_t s = d; s < c.size(); ++s) CHECK(c.values[s] < 1e-10);
}

TEST_CASE("moving average") {
  const std::vector<double> a{4.0, 9.0, -1.0};
  CHECK(moving_average(a, 1) == a);
  const std::vector<double> b{1.0, 3.0, 5.0};
  CHECK(moving_average(b, 2) == std::vector<double>{1.0, 2.0, 4.0});
  const std::vector<double> c(6, 0.7);
  for (double v : moving_average(c, 4)) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
  CHECK_THROWS(moving_average(b, 0));
}

TEST_CASE("convergence check") {
  EvalCurve half, two, descending;
  half.values.assign(10, 0.5);
  two.values.assign(10, 2.0);
  for (int s = 0; s < 10; ++s) descending.values.push_back(10.0 - s * (9.2 / 9.0));
  CHECK(convergence_check(half, 3));
  CHECK_FALSE(convergence_check(two, 3));
  CHECK(convergence_check(descending, 1));
}

TEST_CASE("curves csv") {
  EvalCurve c;
  c.values = {1.0, 0.25};
  c.task = "linear";
  c.model = "m";
  c.seed = 3;
  std::stringstream io;
  write_curves_csv(io, std::span<const EvalCurve>(&c, 1));
  const CsvTable t = read_csv(io);
  CHECK(t.format_version == 1);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1][t.column("shots")] == "1");
  CHECK(std::stod(t.rows[1][t.column("value")]) == 0.25);
  CHECK(t.rows[1][t.column("seed")] == "3");
}
