#include "dpiqa/losses.hpp"

#include <cmath>
#include <cstring>
#include <utility>

#include "dpiqa/common.hpp"

namespace dpiqa {

namespace {

void check_pair(size_t np, size_t nt) {
    check(np == nt, "pred has ", np, " scores but target has ", nt);
    check(np >= 2, "losses need at least 2 samples, got ", np);
}

double population_std(const double* y, int64_t n) {
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += y[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) var += (y[i] - mean) * (y[i] - mean);
    return std::sqrt(var / static_cast<double>(n));
}

double sign_of(double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); }

// shared margin kernel: returns the loss, optionally filling d(loss)/d(pred)
double margin_kernel(const double* pred, const double* target, int64_t n, double lambda,
                     double* dpred) {
    const double m = lambda * population_std(target, n);
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) {
            const double s = sign_of(target[i] - target[j]);
            const double term = -s * (pred[i] - pred[j]) + m;
            if (term > 0.0) {
                sum += term;
                if (dpred) {
                    dpred[i] -= s;
                    dpred[j] += s;
                }
            }
        }
    const double scale = 2.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
    if (dpred)
        for (int64_t i = 0; i < n; ++i) dpred[i] *= scale;
    return sum * scale;
}

}  // namespace

double ranking_margin(const std::vector<double>& target, double lambda) {
    check(target.size() >= 2, "margin needs at least 2 targets, got ", target.size());
    return lambda * population_std(target.data(), static_cast<int64_t>(target.size()));
}

double mse_loss_ref(const std::vector<double>& pred, const std::vector<double>& target) {
    check_pair(pred.size(), target.size());
    double sum = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        sum += d * d;
    }
    return sum / static_cast<double>(pred.size());
}

double margin_loss_ref(const std::vector<double>& pred, const std::vector<double>& target,
                       double lambda) {
    check_pair(pred.size(), target.size());
    return margin_kernel(pred.data(), target.data(), static_cast<int64_t>(pred.size()), lambda,
                         nullptr);
}

double total_loss_ref(const std::vector<double>& pred, const std::vector<double>& target,
                      double lambda) {
    return mse_loss_ref(pred, target) + margin_loss_ref(pred, target, lambda);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    check(pred.ndim() == 1 && target.ndim() == 1, "losses take (N,) score vectors");
    check_pair(static_cast<size_t>(pred.numel()), static_cast<size_t>(target.numel()));
    Tensor diff = sub(pred, target);
    return mean_all(mul(diff, diff));
}

Tensor margin_loss(const Tensor& pred, const Tensor& target, double lambda) {
    check(pred.ndim() == 1 && target.ndim() == 1, "losses take (N,) score vectors");
    check_pair(static_cast<size_t>(pred.numel()), static_cast<size_t>(target.numel()));
    const int64_t n = pred.numel();
    std::vector<double> dpred(static_cast<size_t>(n), 0.0);
    const double loss = margin_kernel(pred.data(), target.data(), n, lambda, dpred.data());
    return make_node(
        {1}, {loss}, {pred},
        [dpred = std::move(dpred)](TensorNode& node) {
            TensorNode* pn = node.parents[0].get();
            if (!pn->requires_grad) return;
            pn->ensure_grad();
            const double g = node.grad[0];
            for (size_t i = 0; i < dpred.size(); ++i) pn->grad[i] += g * dpred[i];
        },
        "margin_loss");
}

Tensor total_loss(const Tensor& pred, const Tensor& target, double lambda) {
    return add(mse_loss(pred, target), margin_loss(pred, target, lambda));
}

}  // namespace dpiqa
