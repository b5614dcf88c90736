#pragma once

#include <cstdint>

#include "icl/model.hpp"

namespace icl {

struct AdamHyper {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct AdamState {
  std::uint64_t step = 0;
  Parameters first_moment;
  Parameters second_moment;

  static AdamState zeros(const ModelConfig& config);
};

// One bias-corrected Adam update; increments state.step before use.
void adam_step(Parameters& params, const Parameters& grads, AdamState& state, const AdamHyper& hyper);

// Rescales grads to at most max_norm (global L2); returns the norm before rescaling.
double clip_gradient_norm(Parameters& grads, double max_norm);

}  // namespace icl
