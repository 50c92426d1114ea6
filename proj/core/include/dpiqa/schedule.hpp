#pragma once

#include <cstdint>
#include <vector>

#include "dpiqa/tensor.hpp"

namespace dpiqa {

// Forward-noising coefficients. Timesteps are 1-indexed: alpha_bar(t) is
// the cumulative product over steps 1..t.
struct NoiseSchedule {
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
    int64_t t_max = 0;

    // Linear beta ramp (beta_start..beta_end over t_max steps).
    static NoiseSchedule linear(int64_t t_max = 1000, double beta_start = 1e-4,
                                double beta_end = 0.02);

    double alpha(int64_t t) const;
    double alpha_bar(int64_t t) const;
};

// sqrt(alpha_bar)*z0 + sqrt(1-alpha_bar)*eps, elementwise; differentiable
// through z0 and eps. The direct form exists so the degenerate alpha_bar
// limits (0 and 1) are testable even though a real schedule never reaches 0.
Tensor add_noise_alpha_bar(double alpha_bar, const Tensor& z0, const Tensor& eps);

// Same, with alpha_bar looked up from the schedule; 1 <= t <= t_max.
Tensor add_noise(const NoiseSchedule& sched, const Tensor& z0, int64_t t, const Tensor& eps);

}  // namespace dpiqa
