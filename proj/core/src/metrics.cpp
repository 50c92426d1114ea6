#include "dpiqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "dpiqa/common.hpp"

namespace dpiqa {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const int64_t n = static_cast<int64_t>(v.size());
    std::vector<int64_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int64_t a, int64_t b) { return v[static_cast<size_t>(a)] < v[static_cast<size_t>(b)]; });
    std::vector<double> ranks(v.size());
    int64_t i = 0;
    while (i < n) {
        int64_t j = i;
        while (j + 1 < n &&
               v[static_cast<size_t>(order[static_cast<size_t>(j + 1)])] ==
                   v[static_cast<size_t>(order[static_cast<size_t>(i)])])
            ++j;
        // positions i..j (0-based) share the mean of 1-based ranks i+1..j+1
        const double shared = static_cast<double>(i + j) / 2.0 + 1.0;
        for (int64_t k = i; k <= j; ++k)
            ranks[static_cast<size_t>(order[static_cast<size_t>(k)])] = shared;
        i = j + 1;
    }
    return ranks;
}

double plcc(const std::vector<double>& a, const std::vector<double>& b) {
    check(a.size() == b.size(), "correlation inputs differ in length: ", a.size(), " vs ",
          b.size());
    const int64_t n = static_cast<int64_t>(a.size());
    check(n >= 2, "correlation needs at least 2 points, got ", n);
    double ma = 0.0, mb = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        ma += a[static_cast<size_t>(i)];
        mb += b[static_cast<size_t>(i)];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double da = a[static_cast<size_t>(i)] - ma;
        const double db = b[static_cast<size_t>(i)] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    check(va > 0.0 && vb > 0.0, "correlation is undefined for a constant input");
    return cov / std::sqrt(va * vb);
}

double srcc(const std::vector<double>& a, const std::vector<double>& b) {
    check(a.size() == b.size(), "correlation inputs differ in length: ", a.size(), " vs ",
          b.size());
    return plcc(average_ranks(a), average_ranks(b));
}

double median_of(std::vector<double> v) {
    check(!v.empty(), "median of an empty list");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace dpiqa
