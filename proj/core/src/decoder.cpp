#include "dpiqa/decoder.hpp"

#include <string>
#include <utility>

#include "dpiqa/common.hpp"

namespace dpiqa {

QfdLevel::QfdLevel(int64_t in_ch, int64_t unify, Rng& rng)
    : conv(in_ch, unify, 3, 1, 1, rng), se(unify, rng) {
    register_child("conv", &conv);
    register_child("se", &se);
}

Tensor QfdLevel::forward(const Tensor& tap) const {
    Tensor x = resize_bilinear(tap, kQualityMapSize, kQualityMapSize);
    return se.forward(conv.forward(x));
}

Qfd::Qfd(std::vector<int64_t> tap_channels, int64_t unify, std::vector<int64_t> reduce, Rng& rng)
    : tap_channels_(std::move(tap_channels)) {
    check(tap_channels_.size() == 4, "decoder consumes exactly 4 taps, got ",
          tap_channels_.size());
    for (int64_t c : tap_channels_) check(c > 0, "tap widths must be positive");
    check(unify > 0, "unify width must be positive, got ", unify);
    check(!reduce.empty() && reduce.back() == kQualityMapChannels,
          "reduction chain must end at ", kQualityMapChannels, " channels");
    for (int64_t c : reduce) check(c > 0, "reduction widths must be positive");

    for (size_t i = 0; i < tap_channels_.size(); ++i) {
        levels_.push_back(std::make_unique<QfdLevel>(tap_channels_[i], unify, rng));
        register_child("levels." + std::to_string(i), levels_.back().get());
    }
    int64_t prev = unify * static_cast<int64_t>(tap_channels_.size());
    for (size_t i = 0; i < reduce.size(); ++i) {
        reduce_convs_.push_back(std::make_unique<Conv2d>(prev, reduce[i], 3, 1, 1, rng));
        register_child("reduce." + std::to_string(i), reduce_convs_.back().get());
        if (i + 1 < reduce.size()) {
            reduce_norms_.push_back(
                std::make_unique<GroupNorm>(reduce[i], norm_groups(reduce[i])));
            register_child("reduce_gn." + std::to_string(i), reduce_norms_.back().get());
        }
        prev = reduce[i];
    }
}

Tensor Qfd::forward(const std::vector<Tensor>& taps) const {
    check(taps.size() == tap_channels_.size(), "decoder expects ", tap_channels_.size(),
          " taps, got ", taps.size());
    std::vector<Tensor> unified;
    for (size_t i = 0; i < taps.size(); ++i) {
        check(taps[i].ndim() == 4, "tap ", i, " must be 4-d");
        check(taps[i].dim(1) == tap_channels_[i], "tap ", i, " has ", taps[i].dim(1),
              " channels, decoder was built for ", tap_channels_[i]);
        unified.push_back(levels_[i]->forward(taps[i]));
    }
    Tensor x = concat_channels(unified);
    last_concat_channels_ = x.dim(1);
    for (size_t i = 0; i < reduce_convs_.size(); ++i) {
        x = reduce_convs_[i]->forward(x);
        if (i < reduce_norms_.size()) x = silu(reduce_norms_[i]->forward(x));
    }
    return x;
}

namespace {

int64_t checked_head_in(int64_t in_features, const std::vector<int64_t>& hidden) {
    check(in_features > 0, "head input width must be positive, got ", in_features);
    check(hidden.size() == 2, "regression head needs exactly two hidden widths, got ",
          hidden.size());
    check(hidden[0] > 0 && hidden[1] > 0, "hidden widths must be positive");
    return in_features;
}

}  // namespace

RegressionHead::RegressionHead(int64_t in_features, std::vector<int64_t> hidden, Rng& rng)
    : l1(checked_head_in(in_features, hidden), hidden[0], rng),
      l2(hidden[0], hidden[1], rng),
      l3(hidden[1], 1, rng),
      in_features_(in_features) {
    register_child("l1", &l1);
    register_child("l2", &l2);
    register_child("l3", &l3);
}

Tensor RegressionHead::forward(const Tensor& quality_map) const {
    check(quality_map.ndim() >= 2, "head expects a batched input");
    const int64_t n = quality_map.dim(0);
    const int64_t flat = quality_map.numel() / n;
    check(flat == in_features_, "quality map flattens to ", flat, " values, head expects ",
          in_features_);
    Tensor x = reshape(quality_map, {n, in_features_});
    x = silu(l1.forward(x));
    x = silu(l2.forward(x));
    x = l3.forward(x);
    return reshape(x, {n});
}

}  // namespace dpiqa
