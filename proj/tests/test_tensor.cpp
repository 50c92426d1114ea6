#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "dpiqa/tensor.hpp"

using namespace dpiqa;

namespace {

// Projects t to a scalar with fixed pseudo-random weights so every output
// element contributes a distinct gradient.
Tensor weighted(const Tensor& t, uint64_t seed) {
    Rng rng(seed);
    Tensor w = Tensor::randn(t.shape(), rng);
    return sum_all(mul(t, w));
}

// Central finite differences against the analytic gradient of fn() w.r.t.
// every leaf. Returns the worst relative error over a strided sample of
// elements.
double max_rel_grad_err(std::vector<Tensor> leaves, const std::function<Tensor()>& fn,
                        double h = 1e-5) {
    for (auto& l : leaves) l.zero_grad();
    Tensor y = fn();
    y.backward();
    double worst = 0.0;
    for (auto& leaf : leaves) {
        const std::vector<double> g = leaf.grad_ref();  // copy before perturbing
        const int64_t n = leaf.numel();
        const int64_t step = std::max<int64_t>(1, n / 48);
        for (int64_t i = 0; i < n; i += step) {
            double* p = leaf.data() + i;
            const double x0 = *p;
            NoGradGuard ng;
            *p = x0 + h;
            const double yp = fn().item();
            *p = x0 - h;
            const double ym = fn().item();
            *p = x0;
            const double fd = (yp - ym) / (2.0 * h);
            const double gi = g[static_cast<size_t>(i)];
            const double err =
                std::abs(fd - gi) / std::max({1.0, std::abs(fd), std::abs(gi)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

Tensor leaf_randn(Shape shape, uint64_t seed, double stddev = 1.0) {
    Rng rng(seed);
    Tensor t = Tensor::randn(std::move(shape), rng, stddev);
    t.set_requires_grad(true);
    return t;
}

//(M,K)x(K,N) by hand
std::vector<double> slow_matmul(const double* a, const double* b, int64_t M, int64_t K,
                                int64_t N) {
    std::vector<double> c(static_cast<size_t>(M * N), 0.0);
    for (int64_t i = 0; i < M; ++i)
        for (int64_t k = 0; k < K; ++k)
            for (int64_t j = 0; j < N; ++j) c[i * N + j] += a[i * K + k] * b[k * N + j];
    return c;
}

// direct convolution, no tricks
std::vector<double> slow_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                                int pad) {
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const int64_t OH = (H + 2 * pad - KH) / stride + 1;
    const int64_t OW = (W + 2 * pad - KW) / stride + 1;
    std::vector<double> y(static_cast<size_t>(N * O * OH * OW), 0.0);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o)
            for (int64_t oy = 0; oy < OH; ++oy)
                for (int64_t ox = 0; ox < OW; ++ox) {
                    double s = b.defined() ? b.data()[o] : 0.0;
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t ky = 0; ky < KH; ++ky)
                            for (int64_t kx = 0; kx < KW; ++kx) {
                                const int64_t iy = oy * stride + ky - pad;
                                const int64_t ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                s += x.data()[((n * C + c) * H + iy) * W + ix] *
                                     w.data()[((o * C + c) * KH + ky) * KW + kx];
                            }
                    y[((n * O + o) * OH + oy) * OW + ox] = s;
                }
    return y;
}

}  // namespace

TEST_CASE("tensor: construction and accessors") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.numel() == 6);
    CHECK(z.dim(0) == 2);
    CHECK(z.dim(-1) == 3);
    CHECK(!z.requires_grad());
    Tensor f = Tensor::full({4}, 2.5);
    for (int i = 0; i < 4; ++i) CHECK(f.data()[i] == 2.5);
    Tensor s = Tensor::scalar(-1.0);
    CHECK(s.item() == -1.0);
    CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1.0, 2.0}), Error);
    CHECK_THROWS_AS((void)f.item(), Error);
}

TEST_CASE("tensor: elementwise values") {
    Tensor a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_vector({2, 2}, {10, 20, 30, 40});
    Tensor c = add(a, b);
    CHECK(c.data()[3] == 44.0);
    Tensor d = sub(b, a);
    CHECK(d.data()[0] == 9.0);
    Tensor e = mul(a, b);
    CHECK(e.data()[2] == 90.0);
    CHECK(add_scalar(a, 0.5).data()[0] == 1.5);
    CHECK(mul_scalar(a, -2.0).data()[1] == -4.0);
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    CHECK(silu(Tensor::scalar(0.0)).item() == 0.0);
    CHECK_THROWS_AS(add(a, Tensor::zeros({3})), Error);
}

TEST_CASE("tensor: elementwise gradients") {
    Tensor a = leaf_randn({2, 3}, 1);
    Tensor b = leaf_randn({2, 3}, 2);
    CHECK(max_rel_grad_err({a, b}, [&] { return weighted(add(a, b), 10); }) < 1e-7);
    CHECK(max_rel_grad_err({a, b}, [&] { return weighted(sub(a, b), 11); }) < 1e-7);
    CHECK(max_rel_grad_err({a, b}, [&] { return weighted(mul(a, b), 12); }) < 1e-7);
    CHECK(max_rel_grad_err({a}, [&] { return weighted(add_scalar(a, 1.5), 13); }) < 1e-7);
    CHECK(max_rel_grad_err({a}, [&] { return weighted(mul_scalar(a, -0.7), 14); }) < 1e-7);
    CHECK(max_rel_grad_err({a}, [&] { return weighted(silu(a), 15); }) < 1e-7);
    CHECK(max_rel_grad_err({a}, [&] { return weighted(sigmoid(a), 16); }) < 1e-7);
}

TEST_CASE("tensor: matmul matches a naive loop") {
    Rng rng(3);
    Tensor a = Tensor::randn({4, 6}, rng);
    Tensor b = Tensor::randn({6, 5}, rng);
    Tensor c = matmul(a, b);
    auto ref = slow_matmul(a.data(), b.data(), 4, 6, 5);
    for (int64_t i = 0; i < c.numel(); ++i) CHECK(c.data()[i] == doctest::Approx(ref[static_cast<size_t>(i)]).epsilon(1e-12));

    // transpose_b path against the equivalent plain product
    Tensor bt = Tensor::randn({5, 6}, rng);
    Tensor c2 = matmul(a, bt, /*transpose_b=*/true);
    std::vector<double> btt(30);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j) btt[static_cast<size_t>(j * 5 + i)] = bt.data()[i * 6 + j];
    auto ref2 = slow_matmul(a.data(), btt.data(), 4, 6, 5);
    for (int64_t i = 0; i < c2.numel(); ++i)
        CHECK(c2.data()[i] == doctest::Approx(ref2[static_cast<size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("tensor: matmul gradients") {
    Tensor a = leaf_randn({3, 4}, 21);
    Tensor b = leaf_randn({4, 5}, 22);
    CHECK(max_rel_grad_err({a, b}, [&] { return weighted(matmul(a, b), 23); }) < 1e-7);
    Tensor bt = leaf_randn({5, 4}, 24);
    CHECK(max_rel_grad_err({a, bt}, [&] { return weighted(matmul(a, bt, true), 25); }) < 1e-7);
}

TEST_CASE("tensor: linear values and gradients") {
    Tensor x = leaf_randn({2, 3, 4}, 31);
    Tensor w = leaf_randn({5, 4}, 32);
    Tensor b = leaf_randn({5}, 33);
    Tensor y = linear(x, w, b);
    CHECK(y.shape() == Shape{2, 3, 5});
    // row 0 against a hand dot product
    for (int o = 0; o < 5; ++o) {
        double s = b.data()[o];
        for (int i = 0; i < 4; ++i) s += x.data()[i] * w.data()[o * 4 + i];
        CHECK(y.data()[o] == doctest::Approx(s).epsilon(1e-12));
    }
    CHECK(max_rel_grad_err({x, w, b}, [&] { return weighted(linear(x, w, b), 34); }) < 1e-7);
    CHECK(max_rel_grad_err({x, w}, [&] { return weighted(linear(x, w, Tensor()), 35); }) < 1e-7);
}

TEST_CASE("tensor: conv2d matches direct convolution") {
    Rng rng(41);
    Tensor x = Tensor::randn({2, 3, 5, 6}, rng);
    Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
    Tensor b = Tensor::randn({4}, rng);

    for (auto [stride, pad] : {std::pair{1, 1}, {1, 0}, {2, 1}, {2, 0}}) {
        Tensor y = conv2d(x, w, b, stride, pad);
        auto ref = slow_conv2d(x, w, b, stride, pad);
        REQUIRE(y.numel() == static_cast<int64_t>(ref.size()));
        for (int64_t i = 0; i < y.numel(); ++i)
            CHECK(y.data()[i] == doctest::Approx(ref[static_cast<size_t>(i)]).epsilon(1e-12));
    }

    // 1x1 kernel and a patchify-style stride==kernel case
    Tensor w1 = Tensor::randn({2, 3, 1, 1}, rng);
    Tensor y1 = conv2d(x, w1, Tensor(), 1, 0);
    auto ref1 = slow_conv2d(x, w1, Tensor(), 1, 0);
    for (int64_t i = 0; i < y1.numel(); ++i)
        CHECK(y1.data()[i] == doctest::Approx(ref1[static_cast<size_t>(i)]).epsilon(1e-12));

    Tensor xp = Tensor::randn({1, 2, 8, 8}, rng);
    Tensor wp = Tensor::randn({5, 2, 4, 4}, rng);
    Tensor yp = conv2d(xp, wp, Tensor(), 4, 0);
    CHECK(yp.shape() == Shape{1, 5, 2, 2});
    auto refp = slow_conv2d(xp, wp, Tensor(), 4, 0);
    for (int64_t i = 0; i < yp.numel(); ++i)
        CHECK(yp.data()[i] == doctest::Approx(refp[static_cast<size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("tensor: conv2d gradients") {
    Tensor x = leaf_randn({2, 3, 5, 5}, 51);
    Tensor w = leaf_randn({4, 3, 3, 3}, 52);
    Tensor b = leaf_randn({4}, 53);
    CHECK(max_rel_grad_err({x, w, b}, [&] { return weighted(conv2d(x, w, b, 1, 1), 54); }) < 1e-7);
    CHECK(max_rel_grad_err({x, w, b}, [&] { return weighted(conv2d(x, w, b, 2, 0), 55); }) < 1e-7);
    // weight-only grad (input is a frozen buffer)
    Rng rf(56);
    Tensor xf = Tensor::randn({1, 3, 4, 4}, rf);
    Tensor w2 = leaf_randn({2, 3, 2, 2}, 57);
    CHECK(max_rel_grad_err({w2}, [&] { return weighted(conv2d(xf, w2, Tensor(), 1, 0), 58); }) <
          1e-7);
}

TEST_CASE("tensor: conv2d batch equals per-sample calls bit-exactly") {
    Rng rng(61);
    Tensor x = Tensor::randn({3, 2, 6, 6}, rng);
    Tensor w = Tensor::randn({4, 2, 3, 3}, rng);
    Tensor b = Tensor::randn({4}, rng);
    Tensor y = conv2d(x, w, b, 1, 1);
    const int64_t per = 2 * 6 * 6, oper = y.numel() / 3;
    for (int64_t n = 0; n < 3; ++n) {
        Tensor xs = Tensor::from_vector(
            {1, 2, 6, 6},
            std::vector<double>(x.data() + n * per, x.data() + (n + 1) * per));
        Tensor ys = conv2d(xs, w, b, 1, 1);
        CHECK(std::memcmp(ys.data(), y.data() + n * oper,
                          static_cast<size_t>(oper) * sizeof(double)) == 0);
    }
}

TEST_CASE("tensor: reshape and concat") {
    Tensor a = leaf_randn({2, 2, 2, 2}, 71);
    Tensor r = reshape(a, {4, 4});
    CHECK(r.shape() == Shape{4, 4});
    CHECK(std::memcmp(r.data(), a.data(), 16 * sizeof(double)) == 0);
    CHECK(max_rel_grad_err({a}, [&] { return weighted(reshape(a, {16}), 72); }) < 1e-7);

    Tensor c1 = leaf_randn({2, 1, 3, 3}, 73);
    Rng r74(74);
    Tensor c2 = Tensor::randn({2, 2, 3, 3}, r74);  // no grad path through this one
    Tensor c3 = leaf_randn({2, 3, 3, 3}, 75);
    Tensor cat = concat_channels({c1, c2, c3});
    CHECK(cat.shape() == Shape{2, 6, 3, 3});
    // channel order: c1 then c2 then c3, per sample
    CHECK(cat.data()[0] == c1.data()[0]);
    CHECK(cat.data()[9] == c2.data()[0]);
    CHECK(cat.data()[3 * 9] == c3.data()[0]);
    CHECK(cat.data()[6 * 9] == c1.data()[9]);  // sample 1 starts with c1 again
    CHECK(max_rel_grad_err({c1, c3}, [&] { return weighted(concat_channels({c1, c2, c3}), 76); }) <
          1e-7);
}

TEST_CASE("tensor: layout permutes round-trip") {
    Tensor x = leaf_randn({2, 3, 2, 4}, 81);
    Tensor nlc = nchw_to_nlc(x);
    CHECK(nlc.shape() == Shape{2, 8, 3});
    // element (n=1, c=2, y=1, x=3) -> (n=1, l=7, c=2)
    CHECK(nlc.data()[1 * 8 * 3 + 7 * 3 + 2] == x.data()[((1 * 3 + 2) * 2 + 1) * 4 + 3]);
    Tensor back = nlc_to_nchw(nlc, 2, 4);
    CHECK(std::memcmp(back.data(), x.data(), static_cast<size_t>(x.numel()) * sizeof(double)) ==
          0);
    CHECK(max_rel_grad_err({x}, [&] { return weighted(nchw_to_nlc(x), 82); }) < 1e-7);
    CHECK(max_rel_grad_err({x}, [&] {
              return weighted(nlc_to_nchw(nchw_to_nlc(x), 2, 4), 83);
          }) < 1e-7);
}

TEST_CASE("tensor: softmax rows normalize and differentiate") {
    Tensor x = leaf_randn({2, 3, 5}, 91);
    Tensor y = softmax_lastdim(x);
    for (int r = 0; r < 6; ++r) {
        double s = 0.0;
        for (int i = 0; i < 5; ++i) {
            const double v = y.data()[r * 5 + i];
            CHECK(v > 0.0);
            s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    // large inputs stay finite
    Tensor big = Tensor::from_vector({1, 3}, {1000.0, 1001.0, 999.0});
    CHECK(all_finite(softmax_lastdim(big)));
    CHECK(max_rel_grad_err({x}, [&] { return weighted(softmax_lastdim(x), 92); }) < 1e-7);
}

TEST_CASE("tensor: group_norm normalizes per group") {
    Rng rng(101);
    Tensor x = Tensor::randn({2, 6, 3, 3}, rng, 3.0);
    Tensor gamma = Tensor::full({6}, 1.0);
    Tensor beta = Tensor::zeros({6});
    Tensor y = group_norm(x, gamma, beta, 3);
    // each (sample, group) block has mean ~0 and var ~1
    for (int n = 0; n < 2; ++n)
        for (int g = 0; g < 3; ++g) {
            double mean = 0.0, var = 0.0;
            const double* p = y.data() + (n * 6 + g * 2) * 9;
            for (int i = 0; i < 18; ++i) mean += p[i];
            mean /= 18.0;
            for (int i = 0; i < 18; ++i) var += (p[i] - mean) * (p[i] - mean);
            var /= 18.0;
            CHECK(std::abs(mean) < 1e-12);
            CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shifts it slightly
        }
    CHECK_THROWS_AS(group_norm(x, gamma, beta, 4), Error);
}

TEST_CASE("tensor: group_norm gradients") {
    Tensor x = leaf_randn({2, 4, 3, 3}, 111);
    Tensor gamma = leaf_randn({4}, 112);
    Tensor beta = leaf_randn({4}, 113);
    CHECK(max_rel_grad_err({x, gamma, beta},
                           [&] { return weighted(group_norm(x, gamma, beta, 2), 114); }) < 1e-6);
}

TEST_CASE("tensor: resize_bilinear identity, values, gradients") {
    Rng rng(121);
    Tensor x = Tensor::randn({2, 3, 5, 7}, rng);
    Tensor same = resize_bilinear(x, 5, 7);
    CHECK(std::memcmp(same.data(), x.data(), static_cast<size_t>(x.numel()) * sizeof(double)) ==
          0);

    // constant image stays constant under any resize
    Tensor c = Tensor::full({1, 1, 3, 3}, 4.25);
    Tensor up = resize_bilinear(c, 8, 5);
    for (int64_t i = 0; i < up.numel(); ++i) CHECK(up.data()[i] == doctest::Approx(4.25));

    // 2x upsample of a 1x2 row: half-pixel centers interpolate between taps
    Tensor row = Tensor::from_vector({1, 1, 1, 2}, {0.0, 1.0});
    Tensor r4 = resize_bilinear(row, 1, 4);
    CHECK(r4.data()[0] == doctest::Approx(0.0));
    CHECK(r4.data()[1] == doctest::Approx(0.25));
    CHECK(r4.data()[2] == doctest::Approx(0.75));
    CHECK(r4.data()[3] == doctest::Approx(1.0));

    Tensor xl = leaf_randn({2, 2, 5, 7}, 122);
    CHECK(max_rel_grad_err({xl}, [&] { return weighted(resize_bilinear(xl, 3, 4), 123); }) < 1e-7);
    CHECK(max_rel_grad_err({xl}, [&] { return weighted(resize_bilinear(xl, 9, 11), 124); }) <
          1e-7);
}

TEST_CASE("tensor: pooling and channel scaling") {
    Tensor x = Tensor::from_vector({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    Tensor p = global_avg_pool(x);
    CHECK(p.shape() == Shape{1, 2});
    CHECK(p.data()[0] == doctest::Approx(2.5));
    CHECK(p.data()[1] == doctest::Approx(25.0));

    Tensor s = Tensor::from_vector({1, 2}, {2.0, 0.5});
    Tensor y = scale_channels(x, s);
    CHECK(y.data()[0] == doctest::Approx(2.0));
    CHECK(y.data()[4] == doctest::Approx(5.0));

    Tensor xl = leaf_randn({2, 3, 4, 4}, 131);
    Tensor sl = leaf_randn({2, 3}, 132);
    CHECK(max_rel_grad_err({xl}, [&] { return weighted(global_avg_pool(xl), 133); }) < 1e-7);
    CHECK(max_rel_grad_err({xl, sl}, [&] { return weighted(scale_channels(xl, sl), 134); }) <
          1e-7);
}

TEST_CASE("tensor: reductions") {
    Tensor x = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
    CHECK(sum_all(x).item() == doctest::Approx(10.0));
    CHECK(mean_all(x).item() == doctest::Approx(2.5));
    Tensor xl = leaf_randn({3, 3}, 141);
    CHECK(max_rel_grad_err({xl}, [&] { return mean_all(silu(xl)); }) < 1e-7);
}

TEST_CASE("tensor: graph mechanics") {
    // diamond: y = x*x + x, dy/dx = 2x + 1 exactly
    Tensor x = Tensor::from_vector({3}, {0.5, -1.0, 2.0});
    x.set_requires_grad(true);
    Tensor y = sum_all(add(mul(x, x), x));
    y.backward();
    CHECK(x.grad_ref()[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(x.grad_ref()[1] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(x.grad_ref()[2] == doctest::Approx(5.0).epsilon(1e-12));

    // zero_grad clears, second backward re-accumulates fresh
    x.zero_grad();
    Tensor y2 = sum_all(mul(x, x));
    y2.backward();
    CHECK(x.grad_ref()[2] == doctest::Approx(4.0).epsilon(1e-12));

    // NoGradGuard suppresses taping
    {
        NoGradGuard ng;
        Tensor z = mul(x, x);
        CHECK(!z.requires_grad());
        CHECK(z.node()->parents.empty());
    }

    // detach blocks gradient flow
    Tensor d = x.detach();
    CHECK(!d.requires_grad());
    Tensor y3 = sum_all(mul(d, d));
    CHECK(!y3.requires_grad());

    // backward demands a scalar
    Tensor v = leaf_randn({4}, 151);
    Tensor w = silu(v);
    CHECK_THROWS_AS(w.backward(), Error);

    CHECK(all_finite(x));
    Tensor bad = Tensor::from_vector({2}, {1.0, std::nan("")});
    CHECK(!all_finite(bad));
}
