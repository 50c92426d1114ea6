// Micro-benchmarks for the hot paths: metric computation, the ranking loss,
// the denoising feature pass, decoding, and teacher-vs-student inference.

#include <benchmark/benchmark.h>

#include <vector>

#include "dpiqa/distill.hpp"
#include "dpiqa/eval.hpp"
#include "dpiqa/losses.hpp"
#include "dpiqa/metrics.hpp"
#include "dpiqa/model.hpp"
#include "dpiqa/student.hpp"

using namespace dpiqa;

namespace {

TeacherConfig tiny_teacher_cfg() {
    TeacherConfig cfg;
    cfg.unet.latent_channels = 2;
    cfg.unet.channels = {4, 4, 4, 4};
    cfg.unet.cond_dim = 8;
    cfg.unet.image_size = 64;
    cfg.unet.seed = 7;
    cfg.cond_hidden = 6;
    cfg.adapter_hidden = 4;
    cfg.qfd_unify = 4;
    cfg.qfd_reduce = {8};
    cfg.head_hidden = {16, 8};
    return cfg;
}

StudentConfig tiny_student_cfg() {
    StudentConfig cfg;
    cfg.image_size = 64;
    cfg.channels = {4, 6, 8, 8};
    cfg.head_hidden = {16, 8};
    cfg.seed = 5;
    return cfg;
}

Tensor tiny_cond() {
    Rng rng(21);
    return Tensor::randn({3, 8}, rng, 0.3);
}

std::vector<double> random_vec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

}  // namespace

static void BM_Plcc(benchmark::State& state) {
    const auto a = random_vec(static_cast<size_t>(state.range(0)), 1);
    const auto b = random_vec(static_cast<size_t>(state.range(0)), 2);
    for (auto _ : state) benchmark::DoNotOptimize(plcc(a, b));
}
BENCHMARK(BM_Plcc)->Arg(1000);

static void BM_Srcc(benchmark::State& state) {
    const auto a = random_vec(static_cast<size_t>(state.range(0)), 3);
    const auto b = random_vec(static_cast<size_t>(state.range(0)), 4);
    for (auto _ : state) benchmark::DoNotOptimize(srcc(a, b));
}
BENCHMARK(BM_Srcc)->Arg(1000);

static void BM_MarginLoss(benchmark::State& state) {
    const auto p = random_vec(static_cast<size_t>(state.range(0)), 5);
    const auto y = random_vec(static_cast<size_t>(state.range(0)), 6);
    for (auto _ : state) benchmark::DoNotOptimize(margin_loss_ref(p, y, 0.25));
}
BENCHMARK(BM_MarginLoss)->Arg(12)->Arg(24);

static void BM_TotalLossBackward(benchmark::State& state) {
    const int64_t n = state.range(0);
    const auto pv = random_vec(static_cast<size_t>(n), 7);
    const auto yv = random_vec(static_cast<size_t>(n), 8);
    Tensor y = Tensor::from_vector({n}, yv);
    for (auto _ : state) {
        Tensor p = Tensor::from_vector({n}, pv);
        p.set_requires_grad(true);
        total_loss(p, y, 0.25).backward();
        benchmark::DoNotOptimize(p.grad_ref().data());
    }
}
BENCHMARK(BM_TotalLossBackward)->Arg(12)->Arg(24)->Unit(benchmark::kMicrosecond);

static void BM_FeatureExtraction(benchmark::State& state) {
    TeacherModel model(tiny_teacher_cfg(), tiny_cond());
    Rng rng(9);
    Tensor x = Tensor::randn({1, 3, 64, 64}, rng, 0.4);
    NoGradGuard guard;
    Tensor cond = model.condition();
    ExtractOptions opts;
    opts.timestep = model.config().timestep;
    for (auto _ : state) {
        FeatureTapSet taps =
            extract_features(model.unet, model.sched, x, cond, &model.image_adapter, opts);
        benchmark::DoNotOptimize(taps.up.back().data());
    }
}
BENCHMARK(BM_FeatureExtraction)->Unit(benchmark::kMillisecond);

static void BM_QfdDecode(benchmark::State& state) {
    TeacherModel model(tiny_teacher_cfg(), tiny_cond());
    Rng rng(9);
    Tensor x = Tensor::randn({1, 3, 64, 64}, rng, 0.4);
    NoGradGuard guard;
    ExtractOptions opts;
    opts.timestep = model.config().timestep;
    FeatureTapSet taps =
        extract_features(model.unet, model.sched, x, model.condition(), &model.image_adapter, opts);
    for (auto _ : state) benchmark::DoNotOptimize(model.qfd.forward(taps.up).data());
}
BENCHMARK(BM_QfdDecode)->Unit(benchmark::kMillisecond);

static void BM_TeacherPredict(benchmark::State& state) {
    TeacherModel model(tiny_teacher_cfg(), tiny_cond());
    Rng rng(9);
    Tensor x = Tensor::randn({state.range(0), 3, 64, 64}, rng, 0.4);
    NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(model.predict_scores(x).data());
}
BENCHMARK(BM_TeacherPredict)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

static void BM_StudentPredict(benchmark::State& state) {
    StudentModel model(tiny_student_cfg());
    Rng rng(9);
    Tensor x = Tensor::randn({state.range(0), 3, 64, 64}, rng, 0.4);
    NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(model.predict_scores(x).data());
}
BENCHMARK(BM_StudentPredict)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

static void BM_TeacherTrainStep(benchmark::State& state) {
    TeacherModel model(tiny_teacher_cfg(), tiny_cond());
    Adam opt(trainable_parameters(model));
    Rng rng(9);
    Tensor x = Tensor::randn({2, 3, 64, 64}, rng, 0.4);
    Tensor y = Tensor::from_vector({2}, {0.2, 0.8});
    Rng noise(5);
    for (auto _ : state) {
        model.zero_grad();
        total_loss(model.forward_quality(x, true, &noise).scores, y, 0.25).backward();
        opt.step(1e-5);
    }
}
BENCHMARK(BM_TeacherTrainStep)->Unit(benchmark::kMillisecond);

static void BM_SaliencyMap(benchmark::State& state) {
    TeacherModel model(tiny_teacher_cfg(), tiny_cond());
    Rng rng(9);
    Tensor x = Tensor::randn({1, 3, 64, 64}, rng, 0.4);
    PredictFn score_fn = [&](const Tensor& in) {
        return model.forward_quality(in, false, nullptr).scores;
    };
    for (auto _ : state) benchmark::DoNotOptimize(saliency_map(score_fn, x).data());
}
BENCHMARK(BM_SaliencyMap)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
