#include <cmath>
#include <vector>

#include <doctest.h>

#include "icl/gradcheck.hpp"
#include "icl/ops.hpp"

using namespace icl;

TEST_CASE("causal softmax closed forms") {
  Tensor s = Tensor::matrix(2, 2, {3.0, -7.0, 0.0, 0.0});
  Tensor p = causal_softmax(s);
  CHECK(p.at(0, 0) == 1.0);
  CHECK(p.at(0, 1) == 0.0);
  CHECK(p.at(1, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p.at(1, 1) == doctest::Approx(0.5).epsilon(1e-15));

  Tensor q = causal_softmax(Tensor::matrix(2, 2, {0.0, 0.0, std::log(2.0), 0.0}));
  CHECK(q.at(1, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(q.at(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("causal softmax is row-stochastic and exactly zero above the diagonal") {
  const std::size_t n = 7;
  Tensor s({n, n});
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::sin(1.7 * static_cast<double>(i)) * 30.0;
  Tensor p = causal_softmax(s);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j > i) CHECK(p.at(i, j) == 0.0);
      sum += p.at(i, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("causal softmax tolerates -inf but not NaN") {
  const double inf = std::numeric_limits<double>::infinity();
  Tensor p = causal_softmax(Tensor::matrix(2, 2, {0.0, 0.0, -inf, 1.0}));
  CHECK(p.at(1, 0) == 0.0);
  CHECK(p.at(1, 1) == 1.0);
  CHECK_THROWS(causal_softmax(Tensor::matrix(2, 2, {0.0, 0.0, std::nan(""), 1.0})));
  CHECK_THROWS(causal_softmax(Tensor::matrix(2, 2, {0.0, 0.0, -inf, -inf})));
}

TEST_CASE("layer norm examples") {
  const std::vector<double> one2{1.0, 1.0}, zero2{0.0, 0.0}, five2{5.0, 5.0};
  auto a = layer_norm(std::vector<double>{1.0, -1.0}, one2, zero2, 1e-12);
  CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-11));
  CHECK(a[1] == doctest::Approx(-1.0).epsilon(1e-11));
  auto b = layer_norm(std::vector<double>{1.0, -1.0}, one2, five2, 1e-12);
  CHECK(b[0] == doctest::Approx(6.0).epsilon(1e-11));
  CHECK(b[1] == doctest::Approx(4.0).epsilon(1e-11));
  const std::vector<double> one3{1.0, 1.0, 1.0}, zero3{0.0, 0.0, 0.0};
  auto c = layer_norm(std::vector<double>{2.5, 2.5, 2.5}, one3, zero3, 1e-5);
  for (double v : c) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("gelu values") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(10.0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(std::abs(gelu(-10.0)) < 1e-12);
  // tanh form at x = 1: 0.5 (1 + tanh(sqrt(2/pi) 1.044715))
  const double ref = 0.5 * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * 1.044715));
  CHECK(gelu(1.0) == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("gelu derivative against a difference quotient in long double") {
  auto g = [](long double x) {
    const long double c = std::sqrt(2.0L / 3.14159265358979323846264338327950288L);
    return 0.5L * x * (1.0L + std::tanh(c * (x + 0.044715L * x * x * x)));
  };
  for (double x : {-4.0, -1.3, -0.2, 0.0, 0.4, 1.1, 3.5}) {
    const long double h = 1e-6L;
    const double numeric = static_cast<double>((g(x + h) - g(x - h)) / (2 * h));
    CHECK(gelu_derivative(x) == doctest::Approx(numeric).epsilon(1e-9));
  }
}

TEST_CASE("vectorised gelu matches the scalar path") {
  std::vector<double> in(37), out(37), up(37, 1.0), grad(37);
  for (std::size_t i = 0; i < in.size(); ++i) in[i] = -6.0 + 0.33 * static_cast<double>(i);
  gelu_forward(in, out);
  gelu_backward(in, up, grad);
  for (std::size_t i = 0; i < in.size(); ++i) {
    CHECK(out[i] == doctest::Approx(gelu(in[i])).epsilon(1e-14));
    CHECK(grad[i] == doctest::Approx(gelu_derivative(in[i])).epsilon(1e-13));
  }
}

TEST_CASE("gradient check on closed-form functions") {
  DifferentiableFunction square{
      [](std::span<const double> w) { return static_cast<long double>(w[0]) * w[0]; },
      [](std::span<const double> w) { return std::vector<double>{2.0 * w[0]}; }};
  const std::vector<double> three{3.0};
  const auto r = gradient_check(square, three, 1e-5);
  CHECK(r.max_relative_error < 1e-6);
  CHECK(r.worst_numeric == doctest::Approx(6.0).epsilon(1e-9));

  DifferentiableFunction constant{[](std::span<const double>) { return 4.0L; },
                                  [](std::span<const double> w) { return std::vector<double>(w.size(), 0.0); }};
  const std::vector<double> pt{0.3, -2.0, 7.0};
  const auto c = gradient_check(constant, pt, 1e-4);
  CHECK(c.max_relative_error == 0.0);

  DifferentiableFunction wrong{square.value, [](std::span<const double> w) { return std::vector<double>{w[0]}; }};
  CHECK(gradient_check(wrong, three, 1e-5).max_relative_error > 0.4);
}
