#include "dpiqa/schedule.hpp"

#include <cmath>

namespace dpiqa {

NoiseSchedule NoiseSchedule::linear(int64_t t_max, double beta_start, double beta_end) {
    check(t_max >= 1, "schedule: t_max must be >= 1");
    check(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end,
          "schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.t_max = t_max;
    s.alphas.resize(static_cast<size_t>(t_max));
    s.alpha_bars.resize(static_cast<size_t>(t_max));
    double prod = 1.0;
    for (int64_t t = 0; t < t_max; ++t) {
        const double frac =
            (t_max == 1) ? 0.0 : static_cast<double>(t) / static_cast<double>(t_max - 1);
        const double beta = beta_start + (beta_end - beta_start) * frac;
        const double a = 1.0 - beta;
        prod *= a;
        s.alphas[static_cast<size_t>(t)] = a;
        s.alpha_bars[static_cast<size_t>(t)] = prod;
        check(prod > 0.0 && prod <= 1.0, "schedule: alpha_bar left (0,1] at t=", t + 1);
        if (t > 0)
            check(prod <= s.alpha_bars[static_cast<size_t>(t - 1)],
                  "schedule: alpha_bar increased at t=", t + 1);
    }
    return s;
}

double NoiseSchedule::alpha(int64_t t) const {
    check(t >= 1 && t <= t_max, "schedule: timestep ", t, " outside [1, ", t_max, "]");
    return alphas[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int64_t t) const {
    check(t >= 1 && t <= t_max, "schedule: timestep ", t, " outside [1, ", t_max, "]");
    return alpha_bars[static_cast<size_t>(t - 1)];
}

Tensor add_noise_alpha_bar(double alpha_bar, const Tensor& z0, const Tensor& eps) {
    check(alpha_bar >= 0.0 && alpha_bar <= 1.0, "add_noise: alpha_bar ", alpha_bar,
          " outside [0,1]");
    check(z0.shape() == eps.shape(), "add_noise: eps shape ", shape_str(eps.shape()),
          " does not match z0 ", shape_str(z0.shape()));
    return add(mul_scalar(z0, std::sqrt(alpha_bar)), mul_scalar(eps, std::sqrt(1.0 - alpha_bar)));
}

Tensor add_noise(const NoiseSchedule& sched, const Tensor& z0, int64_t t, const Tensor& eps) {
    return add_noise_alpha_bar(sched.alpha_bar(t), z0, eps);
}

}  // namespace dpiqa
