#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "dpiqa/nn.hpp"
#include "dpiqa/tensor.hpp"

namespace dpiqa {

// Side length and channel depth of the decoded quality-feature map; every
// model size emits the same (8, 64, 64) map.
inline constexpr int64_t kQualityMapSize = 64;
inline constexpr int64_t kQualityMapChannels = 8;

// one decoder level: resize to the common grid -> 3x3 conv -> squeeze-excite
class QfdLevel : public Module {
public:
    QfdLevel(int64_t in_ch, int64_t unify, Rng& rng);
    Tensor forward(const Tensor& tap) const;
    Conv2d conv;
    SqueezeExcite se;
};

// Quality-feature decoder: unifies the four up-stage taps onto a 64x64 grid
// at a common width, concatenates them, and reduces the stack through a
// conv chain (group norm + silu between stages, plain final conv) down to
// the 8-channel quality map.
class Qfd : public Module {
public:
    Qfd(std::vector<int64_t> tap_channels, int64_t unify, std::vector<int64_t> reduce, Rng& rng);
    Tensor forward(const std::vector<Tensor>& taps) const;  // -> (N,8,64,64)
    // channel count of the most recent concatenation, for shape audits
    int64_t last_concat_channels() const { return last_concat_channels_; }

private:
    std::vector<int64_t> tap_channels_;
    std::vector<std::unique_ptr<QfdLevel>> levels_;
    std::vector<std::unique_ptr<Conv2d>> reduce_convs_;
    std::vector<std::unique_ptr<GroupNorm>> reduce_norms_;  // one fewer than convs
    mutable int64_t last_concat_channels_ = 0;
};

// flatten -> linear -> silu -> linear -> silu -> linear, no activation on
// the final score
class RegressionHead : public Module {
public:
    RegressionHead(int64_t in_features, std::vector<int64_t> hidden, Rng& rng);
    Tensor forward(const Tensor& quality_map) const;  // (N,C,H,W) -> (N,)
    int64_t in_features() const { return in_features_; }
    Linear l1, l2, l3;

private:
    int64_t in_features_ = 0;
};

}  // namespace dpiqa
