#include "icl/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace icl {

void AdamHyper::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("AdamHyper: learning rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
    throw std::invalid_argument("AdamHyper: betas must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("AdamHyper: epsilon must be positive");
}

AdamState AdamState::zeros(const ModelConfig& config) {
  return AdamState{0, Parameters::zeros(config), Parameters::zeros(config)};
}

void adam_step(Parameters& params, const Parameters& grads, AdamState& state, const AdamHyper& hyper) {
  std::vector<Tensor*> p, m, v;
  std::vector<const Tensor*> g;
  params.for_each([&](const std::string&, Tensor& t) { p.push_back(&t); });
  grads.for_each([&](const std::string&, const Tensor& t) { g.push_back(&t); });
  state.first_moment.for_each([&](const std::string&, Tensor& t) { m.push_back(&t); });
  state.second_moment.for_each([&](const std::string&, Tensor& t) { v.push_back(&t); });
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
    throw std::invalid_argument("adam_step: parameter layout mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i]->shape() != g[i]->shape() || p[i]->shape() != m[i]->shape() || p[i]->shape() != v[i]->shape())
      throw std::invalid_argument("adam_step: shape mismatch");
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < p.size(); ++i) {
    double* pv = p[i]->data();
    const double* gv = g[i]->data();
    double* mv = m[i]->data();
    double* vv = v[i]->data();
    for (std::size_t j = 0, n = p[i]->size(); j < n; ++j) {
      mv[j] = hyper.beta1 * mv[j] + (1.0 - hyper.beta1) * gv[j];
      vv[j] = hyper.beta2 * vv[j] + (1.0 - hyper.beta2) * gv[j] * gv[j];
      const double m_hat = mv[j] / c1;
      const double v_hat = vv[j] / c2;
      pv[j] -= hyper.learning_rate * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
    }
  }
}

double clip_gradient_norm(Parameters& grads, double max_norm) {
  double sq = 0.0;
  grads.for_each([&](const std::string&, const Tensor& t) {
    for (double x : t.values()) sq += x * x;
  });
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    grads.for_each([&](const std::string&, Tensor& t) {
      for (double& x : t.values()) x *= s;
    });
  }
  return norm;
}

}  // namespace icl
