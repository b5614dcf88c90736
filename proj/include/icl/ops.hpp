#pragma once

#include <span>
#include <vector>

#include "icl/tensor.hpp"

namespace icl {

// Row-wise softmax of an n x n logit matrix restricted to the lower triangle.
// Entries above the diagonal are exactly zero.
Tensor causal_softmax(const Tensor& scores);

// In-place variant over the leading n x n block of a row-major buffer.
void causal_softmax_inplace(Eigen::Ref<RowMatrix> scores);

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                               std::span<const double> bias, double eps);

// GELU, tanh form: x * sigmoid(2 * sqrt(2/pi) * (x + 0.044715 x^3)).
// This is the variant GPT-2 ships, and the only one used in this library.
double gelu(double x);
double gelu_derivative(double x);

// Elementwise over a contiguous buffer; vectorised through Eigen.
void gelu_forward(std::span<const double> in, std::span<double> out);
// grad_in[i] = grad_out[i] * gelu'(pre[i])
void gelu_backward(std::span<const double> pre, std::span<const double> grad_out,
                   std::span<double> grad_in);

}  // namespace icl
