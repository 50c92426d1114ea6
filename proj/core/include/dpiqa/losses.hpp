#pragma once

#include <vector>

#include "dpiqa/tensor.hpp"

namespace dpiqa {

// Plain-double reference forms, shared by tests and reporting. pred and
// target are per-sample scores; every form needs n >= 2 samples.
double mse_loss_ref(const std::vector<double>& pred, const std::vector<double>& target);
double margin_loss_ref(const std::vector<double>& pred, const std::vector<double>& target,
                       double lambda);
double total_loss_ref(const std::vector<double>& pred, const std::vector<double>& target,
                      double lambda);

// m = lambda * population standard deviation (divide by n) of the targets
double ranking_margin(const std::vector<double>& target, double lambda);

// Differentiable forms over (N,) tensors; gradients flow into pred only.
Tensor mse_loss(const Tensor& pred, const Tensor& target);
// Pairwise hinge on score order: for every pair i<j the term is
// max(0, -sign(y_i - y_j)(p_i - p_j) + m), averaged as 2/(n(n-1)) * sum.
// Tied targets keep their pairs (sign 0 contributes a constant m).
Tensor margin_loss(const Tensor& pred, const Tensor& target, double lambda);
// unweighted sum of the two parts
Tensor total_loss(const Tensor& pred, const Tensor& target, double lambda);

}  // namespace dpiqa
