#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dpiqa/tensor.hpp"

namespace dpiqa {

// Largest group count in {8,4,2,1} dividing `channels`.
int64_t norm_groups(int64_t channels);

// Tree of named parameters and buffers. Parameters receive optimizer
// updates; buffers only travel with checkpoints (frozen weights, constants).
// Names are dotted paths: "qfd.levels.0.conv.w".
class Module {
public:
    virtual ~Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;
    Module() = default;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_buffers() const;
    std::vector<std::pair<std::string, Tensor>> named_state() const;  // params then buffers
    std::vector<Tensor> parameters() const;
    int64_t parameter_count() const;
    void zero_grad();
    // flips requires_grad on every parameter in the subtree
    void set_trainable(bool trainable);

protected:
    Tensor register_parameter(const std::string& name, Tensor t);
    Tensor register_buffer(const std::string& name, Tensor t);
    void register_child(const std::string& name, Module* child);

private:
    void collect(const std::string& prefix, bool params, bool buffers,
                 std::vector<std::pair<std::string, Tensor>>& out) const;

    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::pair<std::string, Tensor>> buffers_;
    std::vector<std::pair<std::string, Module*>> children_;
};

enum class Init { He, Attn, Zero };

class Linear : public Module {
public:
    Linear(int64_t in, int64_t out, Rng& rng, Init init = Init::He, bool bias = true);
    Tensor forward(const Tensor& x) const;
    int64_t in_features() const { return w.dim(1); }
    int64_t out_features() const { return w.dim(0); }
    Tensor w, b;
};

class Conv2d : public Module {
public:
    Conv2d(int64_t in, int64_t out, int64_t k, int stride, int pad, Rng& rng,
           Init init = Init::He, bool bias = true);
    Tensor forward(const Tensor& x) const;
    Tensor w, b;
    int stride_ = 1, pad_ = 0;
};

class GroupNorm : public Module {
public:
    GroupNorm(int64_t channels, int64_t groups);
    Tensor forward(const Tensor& x) const;
    Tensor gamma, beta;
    int64_t groups_ = 1;
};

// gap -> fc -> silu -> fc -> sigmoid -> channel scale
class SqueezeExcite : public Module {
public:
    SqueezeExcite(int64_t channels, Rng& rng, int64_t reduction = 16);
    Tensor forward(const Tensor& x) const;
    Linear fc1, fc2;
};

// gn -> silu -> conv3x3 -> gn -> silu -> conv3x3, plus 1x1 skip on width change
class ResBlock : public Module {
public:
    ResBlock(int64_t in, int64_t out, Rng& rng);
    Tensor forward(const Tensor& x) const;
    GroupNorm gn1, gn2;
    Conv2d conv1, conv2;
    std::unique_ptr<Conv2d> skip;  // null when in == out
};

// Single-head cross-attention over a shared (K,d) condition matrix. The
// keys/values are identical for every sample, so the whole batch collapses
// to flat 2-D matmuls.
class CrossAttention : public Module {
public:
    CrossAttention(int64_t channels, int64_t cond_dim, Rng& rng);
    Tensor forward(const Tensor& x, const Tensor& cond) const;  // x NCHW, cond (K,d)
    int64_t cond_dim() const { return wk.in_features(); }
    GroupNorm gn;
    Linear wq, wk, wv, wo;
};

class Downsample : public Module {  // stride-2 conv, halves H and W
public:
    Downsample(int64_t in, int64_t out, Rng& rng);
    Tensor forward(const Tensor& x) const;
    Conv2d conv;
};

class Upsample : public Module {  // 2x bilinear then conv
public:
    Upsample(int64_t in, int64_t out, Rng& rng);
    Tensor forward(const Tensor& x) const;
    Conv2d conv;
};

}  // namespace dpiqa
