#include "dpiqa/nn.hpp"

#include <cmath>

namespace dpiqa {

int64_t norm_groups(int64_t channels) {
    for (int64_t g : {8, 4, 2}) {
        if (channels % g == 0) return g;
    }
    return 1;
}

// ---- Module ----

std::vector<std::pair<std::string, Tensor>> Module::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    collect("", true, false, out);
    return out;
}

std::vector<std::pair<std::string, Tensor>> Module::named_buffers() const {
    std::vector<std::pair<std::string, Tensor>> out;
    collect("", false, true, out);
    return out;
}

std::vector<std::pair<std::string, Tensor>> Module::named_state() const {
    std::vector<std::pair<std::string, Tensor>> out;
    collect("", true, false, out);
    collect("", false, true, out);
    return out;
}

std::vector<Tensor> Module::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

int64_t Module::parameter_count() const {
    int64_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
}

void Module::zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
}

void Module::set_trainable(bool trainable) {
    for (auto& t : parameters()) t.set_requires_grad(trainable);
}

Tensor Module::register_parameter(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params_.emplace_back(name, t);
    return t;
}

Tensor Module::register_buffer(const std::string& name, Tensor t) {
    buffers_.emplace_back(name, t);
    return t;
}

void Module::register_child(const std::string& name, Module* child) {
    children_.emplace_back(name, child);
}

void Module::collect(const std::string& prefix, bool params, bool buffers,
                     std::vector<std::pair<std::string, Tensor>>& out) const {
    if (params)
        for (auto& [name, t] : params_) out.emplace_back(prefix + name, t);
    if (buffers)
        for (auto& [name, t] : buffers_) out.emplace_back(prefix + name, t);
    for (auto& [name, child] : children_) child->collect(prefix + name + ".", params, buffers, out);
}

// ---- layers ----

namespace {

double init_stddev(Init init, int64_t fan_in) {
    switch (init) {
        case Init::He:
            return std::sqrt(2.0 / static_cast<double>(fan_in));
        case Init::Attn:
            return std::sqrt(1.0 / static_cast<double>(fan_in));
        case Init::Zero:
            return 0.0;
    }
    return 0.0;
}

}  // namespace

Linear::Linear(int64_t in, int64_t out, Rng& rng, Init init, bool bias) {
    w = register_parameter("w", Tensor::randn({out, in}, rng, init_stddev(init, in)));
    if (bias) b = register_parameter("b", Tensor::zeros({out}));
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, w, b); }

Conv2d::Conv2d(int64_t in, int64_t out, int64_t k, int stride, int pad, Rng& rng, Init init,
               bool bias)
    : stride_(stride), pad_(pad) {
    w = register_parameter("w",
                           Tensor::randn({out, in, k, k}, rng, init_stddev(init, in * k * k)));
    if (bias) b = register_parameter("b", Tensor::zeros({out}));
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, w, b, stride_, pad_); }

GroupNorm::GroupNorm(int64_t channels, int64_t groups) : groups_(groups) {
    gamma = register_parameter("gamma", Tensor::full({channels}, 1.0));
    beta = register_parameter("beta", Tensor::zeros({channels}));
}

Tensor GroupNorm::forward(const Tensor& x) const { return group_norm(x, gamma, beta, groups_); }

SqueezeExcite::SqueezeExcite(int64_t channels, Rng& rng, int64_t reduction)
    : fc1(channels, std::max<int64_t>(1, channels / reduction), rng),
      fc2(std::max<int64_t>(1, channels / reduction), channels, rng) {
    register_child("fc1", &fc1);
    register_child("fc2", &fc2);
}

Tensor SqueezeExcite::forward(const Tensor& x) const {
    Tensor s = global_avg_pool(x);  //(N,C)
    s = sigmoid(fc2.forward(silu(fc1.forward(s))));
    return scale_channels(x, s);
}

ResBlock::ResBlock(int64_t in, int64_t out, Rng& rng)
    : gn1(in, norm_groups(in)),
      gn2(out, norm_groups(out)),
      conv1(in, out, 3, 1, 1, rng),
      conv2(out, out, 3, 1, 1, rng) {
    register_child("gn1", &gn1);
    register_child("gn2", &gn2);
    register_child("conv1", &conv1);
    register_child("conv2", &conv2);
    if (in != out) {
        skip = std::make_unique<Conv2d>(in, out, 1, 1, 0, rng);
        register_child("skip", skip.get());
    }
}

Tensor ResBlock::forward(const Tensor& x) const {
    Tensor h = conv1.forward(silu(gn1.forward(x)));
    h = conv2.forward(silu(gn2.forward(h)));
    Tensor s = skip ? skip->forward(x) : x;
    return add(h, s);
}

CrossAttention::CrossAttention(int64_t channels, int64_t cond_dim, Rng& rng)
    : gn(channels, norm_groups(channels)),
      wq(channels, channels, rng, Init::Attn, /*bias=*/false),
      wk(cond_dim, channels, rng, Init::Attn, /*bias=*/false),
      wv(cond_dim, channels, rng, Init::Attn, /*bias=*/false),
      wo(channels, channels, rng, Init::Attn) {
    register_child("gn", &gn);
    register_child("wq", &wq);
    register_child("wk", &wk);
    register_child("wv", &wv);
    register_child("wo", &wo);
}

Tensor CrossAttention::forward(const Tensor& x, const Tensor& cond) const {
    check(cond.ndim() == 2, "cross-attention: condition must be 2-D, got ",
          shape_str(cond.shape()));
    check(cond.dim(1) == wk.in_features(), "cross-attention: condition width ", cond.dim(1),
          " does not match attention width ", wk.in_features());
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), L = H * W;
    Tensor q = wq.forward(nchw_to_nlc(gn.forward(x)));  //(N,L,C)
    Tensor k = wk.forward(cond);                        //(K,C), shared across the batch
    Tensor v = wv.forward(cond);                        //(K,C)
    Tensor scores = mul_scalar(matmul(reshape(q, {N * L, C}), k, /*transpose_b=*/true),
                               1.0 / std::sqrt(static_cast<double>(C)));
    Tensor attn = softmax_lastdim(scores);       //(N*L,K)
    Tensor mixed = matmul(attn, v);              //(N*L,C)
    Tensor out = wo.forward(reshape(mixed, {N, L, C}));
    return add(x, nlc_to_nchw(out, H, W));
}

Downsample::Downsample(int64_t in, int64_t out, Rng& rng) : conv(in, out, 3, 2, 1, rng) {
    register_child("conv", &conv);
}

Tensor Downsample::forward(const Tensor& x) const { return conv.forward(x); }

Upsample::Upsample(int64_t in, int64_t out, Rng& rng) : conv(in, out, 3, 1, 1, rng) {
    register_child("conv", &conv);
}

Tensor Upsample::forward(const Tensor& x) const {
    return conv.forward(resize_bilinear(x, x.dim(2) * 2, x.dim(3) * 2));
}

}  // namespace dpiqa
