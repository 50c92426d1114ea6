#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dpiqa/common.hpp"
#include "dpiqa/metrics.hpp"
#include "dpiqa/rng.hpp"

using namespace dpiqa;

namespace {

// independent oracles, written the slow textbook way
double slow_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        sa += a[i];
        sb += b[i];
        saa += a[i] * a[i];
        sbb += b[i] * b[i];
        sab += a[i] * b[i];
    }
    const double num = n * sab - sa * sb;
    const double den = std::sqrt(n * saa - sa * sa) * std::sqrt(n * sbb - sb * sb);
    return num / den;
}

std::vector<double> slow_ranks(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        double below = 0.0, equal = 0.0;
        for (size_t j = 0; j < v.size(); ++j) {
            if (v[j] < v[i]) below += 1.0;
            if (v[j] == v[i]) equal += 1.0;
        }
        // mean of the 1-based rank span occupied by the tie group
        r[i] = below + (equal + 1.0) / 2.0;
    }
    return r;
}

}  // namespace

TEST_CASE("metrics: average ranks with and without ties") {
    CHECK(average_ranks({10.0, 30.0, 20.0}) == std::vector<double>{1.0, 3.0, 2.0});
    CHECK(average_ranks({10.0, 20.0, 20.0, 30.0}) == std::vector<double>{1.0, 2.5, 2.5, 4.0});
    CHECK(average_ranks({7.0, 7.0, 7.0}) == std::vector<double>{2.0, 2.0, 2.0});

    Rng rng(4);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> v(20);
        for (auto& x : v) x = std::floor(rng.uniform() * 6.0);  // plenty of ties
        CHECK(average_ranks(v) == slow_ranks(v));
    }
}

TEST_CASE("metrics: linear correlation") {
    CHECK(plcc({1.0, 2.0, 3.0}, {10.0, 20.0, 30.0}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(plcc({1.0, 2.0, 3.0}, {5.0, 3.0, 1.0}) == doctest::Approx(-1.0).epsilon(1e-12));
    // hand-checked small case: a=(1,2,3,4), b=(2,1,4,3) -> r = 0.6
    CHECK(plcc({1.0, 2.0, 3.0, 4.0}, {2.0, 1.0, 4.0, 3.0}) ==
          doctest::Approx(0.6).epsilon(1e-12));

    CHECK_THROWS_WITH_AS(plcc({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}), doctest::Contains("constant"),
                         Error);
    CHECK_THROWS_AS(plcc({1.0, 2.0}, {1.0}), Error);
    CHECK_THROWS_AS(plcc({1.0}, {1.0}), Error);

    Rng rng(9);
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> a(30), b(30);
        for (size_t i = 0; i < 30; ++i) {
            a[i] = rng.normal();
            b[i] = 0.4 * a[i] + rng.normal();
        }
        CHECK(plcc(a, b) == doctest::Approx(slow_pearson(a, b)).epsilon(1e-11));
    }
}

TEST_CASE("metrics: rank correlation") {
    // any strictly monotone map scores a perfect 1
    CHECK(srcc({1.0, 2.0, 3.0, 4.0}, {1.0, 8.0, 27.0, 64.0}) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(srcc({1.0, 2.0, 3.0}, {0.0, -1.0, -2.0}) == doctest::Approx(-1.0).epsilon(1e-12));

    Rng rng(21);
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> a(25), b(25);
        for (size_t i = 0; i < 25; ++i) {
            a[i] = std::floor(rng.uniform() * 8.0);  // ties on both sides
            b[i] = std::floor(rng.uniform() * 8.0);
        }
        // reject constant draws; they are defined as errors
        auto spread = [](const std::vector<double>& v) {
            return *std::max_element(v.begin(), v.end()) >
                   *std::min_element(v.begin(), v.end());
        };
        if (!spread(a) || !spread(b)) continue;
        CHECK(srcc(a, b) ==
              doctest::Approx(slow_pearson(slow_ranks(a), slow_ranks(b))).epsilon(1e-11));
    }

    CHECK_THROWS_AS(srcc({2.0, 2.0, 2.0}, {1.0, 2.0, 3.0}), Error);
}

TEST_CASE("metrics: median") {
    CHECK(median_of({3.0}) == 3.0);
    CHECK(median_of({4.0, 1.0, 3.0}) == 3.0);
    CHECK(median_of({4.0, 1.0, 3.0, 2.0}) == 2.5);
    // permutation invariance
    std::vector<double> v = {0.91, 0.85, 0.88, 0.93, 0.87};
    std::sort(v.begin(), v.end());
    do {
        CHECK(median_of(v) == 0.88);
    } while (std::next_permutation(v.begin(), v.end()));
    CHECK_THROWS_AS(median_of({}), Error);
}
