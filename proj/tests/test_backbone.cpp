#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "dpiqa/backbone.hpp"
#include "dpiqa/common.hpp"

using namespace dpiqa;

namespace {

UnetConfig tiny_cfg() {
    UnetConfig cfg;
    cfg.latent_channels = 2;
    cfg.channels = {4, 4, 4, 4};
    cfg.cond_dim = 8;
    cfg.image_size = 64;
    cfg.seed = 5;
    return cfg;
}

Tensor fake_images(int64_t n, int64_t size, uint64_t seed) {
    Rng rng(seed);
    Tensor img = Tensor::zeros({n, 3, size, size});
    for (int64_t i = 0; i < img.numel(); ++i) img.data()[i] = rng.uniform() * 2.0 - 1.0;
    return img;
}

Tensor fake_cond(int64_t k, int64_t d, uint64_t seed) {
    Rng rng(seed);
    return Tensor::randn({k, d}, rng);
}

bool same_bits(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * sizeof(double)) == 0;
}

Tensor weighted(const Tensor& t, uint64_t seed) {
    Rng rng(seed);
    Tensor w = Tensor::randn(t.shape(), rng);
    return sum_all(mul(t, w));
}

}  // namespace

TEST_CASE("backbone: latent encoder is a frozen 8x patchify") {
    MiniUnet unet(tiny_cfg());
    Tensor img = fake_images(2, 64, 1);
    Tensor z = unet.encode_latent(img);
    CHECK(z.shape() == Shape{2, 2, 8, 8});
    CHECK(same_bits(z, unet.encode_latent(img)));  // deterministic

    // the patch weights are buffers: present in state, absent from params
    bool saw_patch_buffer = false;
    for (auto& [name, t] : unet.named_buffers())
        if (name == "patch.w") saw_patch_buffer = true;
    CHECK(saw_patch_buffer);
    for (auto& [name, t] : unet.named_parameters()) CHECK(name.find("patch") == std::string::npos);

    // same seed, same weights; different seed, different weights
    MiniUnet twin(tiny_cfg());
    CHECK(same_bits(twin.encode_latent(img), z));
    UnetConfig other = tiny_cfg();
    other.seed = 6;
    MiniUnet reseeded(other);
    CHECK(!same_bits(reseeded.encode_latent(img), z));

    CHECK_THROWS_AS(unet.encode_latent(Tensor::zeros({2, 3, 32, 32})), Error);
    CHECK_THROWS_AS(unet.encode_latent(Tensor::zeros({2, 1, 64, 64})), Error);
}

TEST_CASE("backbone: denoise exposes 4+4 taps at the declared shapes") {
    MiniUnet unet(tiny_cfg());
    Tensor z = unet.encode_latent(fake_images(2, 64, 2));
    Tensor cond = fake_cond(3, 8, 7);

    CHECK(unet.denoise_calls() == 0);
    FeatureTapSet taps = unet.denoise(z, cond, nullptr);
    CHECK(unet.denoise_calls() == 1);

    REQUIRE(taps.down.size() == 4);
    REQUIRE(taps.up.size() == 4);
    auto down_shapes = unet.down_tap_shapes();
    auto up_shapes = unet.up_tap_shapes();
    for (size_t i = 0; i < 4; ++i) {
        Shape want_down = {2, down_shapes[i][0], down_shapes[i][1], down_shapes[i][2]};
        Shape want_up = {2, up_shapes[i][0], up_shapes[i][1], up_shapes[i][2]};
        CHECK(taps.down[i].shape() == want_down);
        CHECK(taps.up[i].shape() == want_up);
    }
    // down resolutions halve (8,4,2,1); up resolutions climb back up
    CHECK(taps.down[0].dim(2) == 8);
    CHECK(taps.down[3].dim(2) == 1);
    for (size_t i = 1; i < 4; ++i) {
        CHECK(taps.down[i].dim(2) == taps.down[i - 1].dim(2) / 2);
        CHECK(taps.up[i].dim(2) >= taps.up[i - 1].dim(2));
    }
    CHECK(taps.noise_pred.shape() == z.shape());

    CHECK_THROWS_AS(unet.denoise(Tensor::zeros({2, 2, 4, 4}), cond, nullptr), Error);
    CHECK_THROWS_AS(unet.denoise(z, fake_cond(3, 9, 7), nullptr), Error);
    CHECK(unet.denoise_calls() == 1);  // failed calls never count
}

TEST_CASE("backbone: adapter starts as an exact no-op and then matters") {
    UnetConfig cfg = tiny_cfg();
    MiniUnet unet(cfg);
    NoiseSchedule sched = NoiseSchedule::linear();
    Rng arng(31);
    ImageAdapter adapter(64, unet.down_tap_shapes(), 4, arng);

    Tensor img = fake_images(2, 64, 3);
    Tensor cond = fake_cond(3, 8, 7);
    ExtractOptions opts;  // eps = 0 path

    // freshly built adapter emits exact zeros
    for (const Tensor& f : adapter.forward(img))
        for (int64_t i = 0; i < f.numel(); ++i) CHECK(f.data()[i] == 0.0);

    FeatureTapSet bare = extract_features(unet, sched, img, cond, nullptr, opts);
    FeatureTapSet with = extract_features(unet, sched, img, cond, &adapter, opts);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(same_bits(bare.down[i], with.down[i]));
        CHECK(same_bits(bare.up[i], with.up[i]));
    }

    // nudge one projection weight: its stage and everything downstream move
    for (auto& [name, p] : adapter.named_parameters())
        if (name == "stage1.proj.w") p.data()[0] = 0.5;
    FeatureTapSet moved = extract_features(unet, sched, img, cond, &adapter, opts);
    CHECK(same_bits(bare.down[0], moved.down[0]));  // stage before the nudge
    CHECK(!same_bits(bare.down[1], moved.down[1]));
    CHECK(!same_bits(bare.down[2], moved.down[2]));  // propagated downstream
    for (size_t i = 0; i < 4; ++i) CHECK(!same_bits(bare.up[i], moved.up[i]));
}

TEST_CASE("backbone: noise policy") {
    MiniUnet unet(tiny_cfg());
    NoiseSchedule sched = NoiseSchedule::linear();
    Tensor img = fake_images(1, 64, 4);
    Tensor cond = fake_cond(2, 8, 9);

    // inference: no noise; bit-reproducible
    ExtractOptions quiet;
    quiet.timestep = 500;
    FeatureTapSet a = extract_features(unet, sched, img, cond, nullptr, quiet);
    FeatureTapSet b = extract_features(unet, sched, img, cond, nullptr, quiet);
    for (size_t i = 0; i < 4; ++i) CHECK(same_bits(a.up[i], b.up[i]));

    // training: fresh noise; identical rng states agree, different differ
    ExtractOptions noisy;
    noisy.timestep = 500;
    noisy.fresh_noise = true;
    Rng r1(8), r2(8), r3(77);
    noisy.rng = &r1;
    FeatureTapSet n1 = extract_features(unet, sched, img, cond, nullptr, noisy);
    noisy.rng = &r2;
    FeatureTapSet n2 = extract_features(unet, sched, img, cond, nullptr, noisy);
    noisy.rng = &r3;
    FeatureTapSet n3 = extract_features(unet, sched, img, cond, nullptr, noisy);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(same_bits(n1.up[i], n2.up[i]));
        CHECK(!same_bits(n1.up[i], n3.up[i]));
    }
    CHECK(!same_bits(n1.up[3], a.up[3]));

    ExtractOptions missing_rng;
    missing_rng.fresh_noise = true;
    CHECK_THROWS_AS(extract_features(unet, sched, img, cond, nullptr, missing_rng), Error);
    ExtractOptions bad_t;
    bad_t.timestep = 1001;
    CHECK_THROWS_AS(extract_features(unet, sched, img, cond, nullptr, bad_t), Error);
}

TEST_CASE("backbone: non-finite activations name the failing stage") {
    MiniUnet unet(tiny_cfg());
    NoiseSchedule sched = NoiseSchedule::linear();
    Tensor img = fake_images(1, 64, 5);
    Tensor cond = fake_cond(2, 8, 11);

    // poison a weight inside down stage 2's res block
    for (auto& [name, p] : unet.named_parameters())
        if (name == "down2.res.conv1.w") p.data()[0] = std::nan("");
    ExtractOptions opts;
    CHECK_THROWS_WITH_AS(extract_features(unet, sched, img, cond, nullptr, opts),
                         doctest::Contains("down stage 2"), Error);
}

TEST_CASE("backbone: batch output matches per-sample outputs") {
    // batched matmuls may re-associate sums, so equality is near-exact, not bitwise
    MiniUnet unet(tiny_cfg());
    NoiseSchedule sched = NoiseSchedule::linear();
    Tensor batch = fake_images(3, 64, 6);
    Tensor cond = fake_cond(3, 8, 13);
    ExtractOptions opts;
    FeatureTapSet all = extract_features(unet, sched, batch, cond, nullptr, opts);

    double worst = 0.0;
    for (int64_t s = 0; s < 3; ++s) {
        Tensor one = Tensor::zeros({1, 3, 64, 64});
        std::memcpy(one.data(), batch.data() + s * 3 * 64 * 64,
                    static_cast<size_t>(3 * 64 * 64) * sizeof(double));
        FeatureTapSet single = extract_features(unet, sched, one, cond, nullptr, opts);
        for (size_t i = 0; i < 4; ++i) {
            const Tensor& big = all.up[i];
            const Tensor& small = single.up[i];
            const int64_t per = small.numel();
            for (int64_t j = 0; j < per; ++j) {
                double a = big.data()[s * per + j];
                double b = small.data()[j];
                worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(b)));
            }
        }
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("backbone: gradients reach the input image and the weights") {
    MiniUnet unet(tiny_cfg());
    NoiseSchedule sched = NoiseSchedule::linear();
    Tensor img = fake_images(1, 64, 7);
    img.set_requires_grad(true);
    Tensor cond = fake_cond(2, 8, 15);
    ExtractOptions opts;

    unet.zero_grad();
    FeatureTapSet taps = extract_features(unet, sched, img, cond, nullptr, opts);
    weighted(taps.up[3], 99).backward();

    CHECK(img.has_grad());
    double img_grad_norm = 0.0;
    for (double g : img.grad_ref()) img_grad_norm += g * g;
    CHECK(img_grad_norm > 0.0);

    int64_t with_grad = 0;
    for (auto& [name, p] : unet.named_parameters()) {
        if (!p.has_grad()) continue;
        for (double g : p.grad_ref())
            if (g != 0.0) {
                ++with_grad;
                break;
            }
    }
    CHECK(with_grad > 50);  // the final up tap sees nearly the whole network
}

TEST_CASE("backbone: analytic gradients match finite differences") {
    MiniUnet unet(tiny_cfg());
    NoiseSchedule sched = NoiseSchedule::linear();
    Tensor img = fake_images(1, 64, 8);
    Tensor cond = fake_cond(2, 8, 17);
    ExtractOptions opts;

    auto fn = [&]() {
        FeatureTapSet taps = extract_features(unet, sched, img, cond, nullptr, opts);
        Tensor obj = weighted(taps.up[0], 41);
        for (size_t i = 1; i < 4; ++i) obj = add(obj, weighted(taps.up[i], 41 + i));
        return obj;
    };
    unet.zero_grad();
    fn().backward();

    const double h = 1e-5;
    double worst = 0.0;
    for (auto& [name, p] : unet.named_parameters()) {
        if (!p.has_grad()) continue;  // the noise head is not in this objective
        const std::vector<double> g = p.grad_ref();
        const int64_t n = p.numel();
        const int64_t step = std::max<int64_t>(1, n / 6);
        for (int64_t i = 0; i < n; i += step) {
            double* x = p.data() + i;
            const double x0 = *x;
            NoGradGuard ng;
            *x = x0 + h;
            const double yp = fn().item();
            *x = x0 - h;
            const double ym = fn().item();
            *x = x0;
            const double fd = (yp - ym) / (2.0 * h);
            const double gi = g[static_cast<size_t>(i)];
            worst = std::max(worst,
                             std::abs(fd - gi) / std::max({1.0, std::abs(fd), std::abs(gi)}));
        }
    }
    CHECK(worst < 2e-6);
}
