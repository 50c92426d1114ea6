#include "dpiqa/backbone.hpp"

#include <cmath>
#include <utility>

#include "dpiqa/common.hpp"

namespace dpiqa {

AttnBlock::AttnBlock(int64_t in_ch, int64_t out_ch, int64_t cond_dim, Rng& rng)
    : res(in_ch, out_ch, rng), attn(out_ch, cond_dim, rng) {
    register_child("res", &res);
    register_child("attn", &attn);
}

Tensor AttnBlock::forward(const Tensor& x, const Tensor& cond) const {
    return attn.forward(res.forward(x), cond);
}

namespace {

constexpr int64_t kPatch = 8;  // fixed latent downsampling factor
constexpr int64_t kStages = 4;

Tensor seeded_patch_weight(int64_t out_ch, uint64_t seed) {
    Rng rng(seed);
    const int64_t fan_in = 3 * kPatch * kPatch;
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor w = Tensor::zeros({out_ch, 3, kPatch, kPatch});
    for (int64_t i = 0; i < w.numel(); ++i) w.data()[i] = rng.normal() * stddev;
    return w;
}

}  // namespace

MiniUnet::MiniUnet(const UnetConfig& cfg) : cfg_(cfg) {
    check(cfg_.latent_channels > 0, "latent_channels must be positive, got ",
          cfg_.latent_channels);
    check(cfg_.channels.size() == kStages, "backbone needs exactly ", kStages,
          " stage widths, got ", cfg_.channels.size());
    for (int64_t c : cfg_.channels) check(c > 0, "stage widths must be positive");
    check(cfg_.cond_dim > 0, "cond_dim must be positive, got ", cfg_.cond_dim);
    check(cfg_.image_size > 0 && cfg_.image_size % 64 == 0,
          "image_size must be a positive multiple of 64, got ", cfg_.image_size);

    patch_w_ = register_buffer("patch.w", seeded_patch_weight(cfg_.latent_channels, cfg_.seed));
    patch_b_ = register_buffer("patch.b", Tensor::zeros({cfg_.latent_channels}));

    Rng rng(cfg_.seed ^ fnv1a64("unet", 4));
    const auto& ch = cfg_.channels;

    stem_ = std::make_unique<Conv2d>(cfg_.latent_channels, ch[0], 3, 1, 1, rng);
    register_child("stem", stem_.get());

    int64_t prev = ch[0];
    for (int64_t i = 0; i < kStages; ++i) {
        downs_.push_back(std::make_unique<AttnBlock>(prev, ch[i], cfg_.cond_dim, rng));
        register_child("down" + std::to_string(i), downs_.back().get());
        prev = ch[i];
        if (i + 1 < kStages) {
            downsamples_.push_back(std::make_unique<Downsample>(prev, prev, rng));
            register_child("dsamp" + std::to_string(i), downsamples_.back().get());
        }
    }

    mid_ = std::make_unique<AttnBlock>(ch[3], ch[3], cfg_.cond_dim, rng);
    register_child("mid", mid_.get());

    // up stage i concatenates the skip from down stage 3-i
    for (int64_t i = 0; i < kStages; ++i) {
        int64_t skip_ch = ch[3 - i];
        int64_t carry = (i == 0) ? ch[3] : ch[3 - i + 1];
        int64_t out_ch = ch[3 - i];
        ups_.push_back(std::make_unique<AttnBlock>(carry + skip_ch, out_ch, cfg_.cond_dim, rng));
        register_child("up" + std::to_string(i), ups_.back().get());
        if (i + 1 < kStages) {
            upsamples_.push_back(std::make_unique<Upsample>(out_ch, out_ch, rng));
            register_child("usamp" + std::to_string(i), upsamples_.back().get());
        }
    }

    out_gn_ = std::make_unique<GroupNorm>(ch[0], norm_groups(ch[0]));
    register_child("out_gn", out_gn_.get());
    out_conv_ = std::make_unique<Conv2d>(ch[0], cfg_.latent_channels, 3, 1, 1, rng);
    register_child("out_conv", out_conv_.get());
}

Tensor MiniUnet::encode_latent(const Tensor& images) const {
    check(images.ndim() == 4, "encode_latent expects (N,3,S,S), got ", images.ndim(), "-d input");
    check(images.dim(1) == 3, "encode_latent expects 3 input channels, got ", images.dim(1));
    check(images.dim(2) == cfg_.image_size && images.dim(3) == cfg_.image_size,
          "encode_latent expects ", cfg_.image_size, "x", cfg_.image_size, " input, got ",
          images.dim(2), "x", images.dim(3));
    return conv2d(images, patch_w_, patch_b_, static_cast<int>(kPatch), 0);
}

std::vector<Shape> MiniUnet::down_tap_shapes() const {
    std::vector<Shape> shapes;
    int64_t s = latent_size();
    for (int64_t i = 0; i < kStages; ++i) {
        shapes.push_back({cfg_.channels[i], s, s});
        s /= 2;
    }
    return shapes;
}

std::vector<Shape> MiniUnet::up_tap_shapes() const {
    std::vector<Shape> shapes;
    int64_t s = latent_size() / 8;
    for (int64_t i = 0; i < kStages; ++i) {
        shapes.push_back({cfg_.channels[3 - i], s, s});
        s *= 2;
    }
    return shapes;
}

FeatureTapSet MiniUnet::denoise(const Tensor& z_t, const Tensor& cond,
                                const std::vector<Tensor>* adapter_feats) {
    check(z_t.ndim() == 4, "denoise expects a 4-d latent, got ", z_t.ndim(), "-d input");
    check(z_t.dim(1) == cfg_.latent_channels && z_t.dim(2) == latent_size() &&
              z_t.dim(3) == latent_size(),
          "latent shape (", z_t.dim(1), ",", z_t.dim(2), ",", z_t.dim(3), ") does not match (",
          cfg_.latent_channels, ",", latent_size(), ",", latent_size(), ")");
    check(cond.ndim() == 2 && cond.dim(1) == cfg_.cond_dim, "condition must be (K,",
          cfg_.cond_dim, ")");
    const int64_t n = z_t.dim(0);
    auto expected = down_tap_shapes();
    if (adapter_feats) {
        check(adapter_feats->size() == kStages, "adapter must supply ", kStages,
              " feature maps, got ", adapter_feats->size());
        for (int64_t i = 0; i < kStages; ++i) {
            const Tensor& f = (*adapter_feats)[static_cast<size_t>(i)];
            Shape want = {n, expected[static_cast<size_t>(i)][0],
                          expected[static_cast<size_t>(i)][1],
                          expected[static_cast<size_t>(i)][2]};
            check(f.shape() == want, "adapter feature ", i, " has the wrong shape");
        }
    }

    ++calls_;
    FeatureTapSet taps;
    Tensor x = stem_->forward(z_t);
    for (int64_t i = 0; i < kStages; ++i) {
        x = downs_[static_cast<size_t>(i)]->forward(x, cond);
        if (adapter_feats) x = add(x, (*adapter_feats)[static_cast<size_t>(i)]);
        taps.down.push_back(x);
        if (i + 1 < kStages) x = downsamples_[static_cast<size_t>(i)]->forward(x);
    }
    x = mid_->forward(x, cond);
    for (int64_t i = 0; i < kStages; ++i) {
        x = concat_channels({x, taps.down[static_cast<size_t>(3 - i)]});
        x = ups_[static_cast<size_t>(i)]->forward(x, cond);
        taps.up.push_back(x);
        if (i + 1 < kStages) x = upsamples_[static_cast<size_t>(i)]->forward(x);
    }
    taps.noise_pred = out_conv_->forward(silu(out_gn_->forward(x)));
    return taps;
}

AdapterStage::AdapterStage(int64_t patch, int64_t hidden, int64_t out_ch, Rng& rng)
    : patch_conv(3, hidden, patch, static_cast<int>(patch), 0, rng),
      res1(hidden, hidden, rng),
      res2(hidden, hidden, rng),
      proj(hidden, out_ch, 1, 1, 0, rng, Init::Zero) {
    register_child("patch_conv", &patch_conv);
    register_child("res1", &res1);
    register_child("res2", &res2);
    register_child("proj", &proj);
}

Tensor AdapterStage::forward(const Tensor& images) const {
    return proj.forward(res2.forward(res1.forward(patch_conv.forward(images))));
}

ImageAdapter::ImageAdapter(int64_t image_size, const std::vector<Shape>& down_tap_shapes,
                           int64_t hidden, Rng& rng)
    : image_size_(image_size), tap_shapes_(down_tap_shapes) {
    check(image_size_ > 0, "image_size must be positive");
    check(hidden > 0, "adapter hidden width must be positive");
    check(!tap_shapes_.empty(), "adapter needs at least one target tap shape");
    for (size_t i = 0; i < tap_shapes_.size(); ++i) {
        const Shape& s = tap_shapes_[i];
        check(s.size() == 3, "tap shape ", i, " must be (C,H,W)");
        check(s[1] == s[2] && s[1] > 0, "tap ", i, " must be square, got ", s[1], "x", s[2]);
        check(image_size_ % s[1] == 0, "tap ", i, " resolution ", s[1],
              " does not divide the image size ", image_size_);
        stages_.push_back(
            std::make_unique<AdapterStage>(image_size_ / s[1], hidden, s[0], rng));
        register_child("stage" + std::to_string(i), stages_.back().get());
    }
}

std::vector<Tensor> ImageAdapter::forward(const Tensor& images) const {
    check(images.ndim() == 4 && images.dim(1) == 3 && images.dim(2) == image_size_ &&
              images.dim(3) == image_size_,
          "adapter expects (N,3,", image_size_, ",", image_size_, ") input");
    std::vector<Tensor> feats;
    feats.reserve(stages_.size());
    for (const auto& stage : stages_) feats.push_back(stage->forward(images));
    return feats;
}

FeatureTapSet extract_features(DenoiserBackbone& backbone, const NoiseSchedule& sched,
                               const Tensor& images, const Tensor& cond,
                               const ImageAdapter* adapter, const ExtractOptions& opts) {
    Tensor z0 = backbone.encode_latent(images);
    check(all_finite(z0), "non-finite values in the latent encoding");

    Tensor eps;
    if (opts.fresh_noise) {
        check(opts.rng != nullptr, "fresh_noise requires an rng");
        eps = Tensor::randn(z0.shape(), *opts.rng);
    } else {
        eps = Tensor::zeros(z0.shape());
    }
    Tensor z_t = add_noise(sched, z0, opts.timestep, eps);
    check(all_finite(z_t), "non-finite values in the noised latent");

    std::vector<Tensor> adapter_feats;
    if (adapter) {
        adapter_feats = adapter->forward(images);
        for (size_t i = 0; i < adapter_feats.size(); ++i)
            check(all_finite(adapter_feats[i]), "non-finite adapter features at stage ", i);
    }

    FeatureTapSet taps = backbone.denoise(z_t, cond, adapter ? &adapter_feats : nullptr);
    for (size_t i = 0; i < taps.down.size(); ++i)
        check(all_finite(taps.down[i]), "non-finite activation at down stage ", i);
    for (size_t i = 0; i < taps.up.size(); ++i)
        check(all_finite(taps.up[i]), "non-finite activation at up stage ", i);

    check(taps.down.size() == 4 && taps.up.size() == 4, "backbone must produce 4 down and 4 up taps");
    for (size_t i = 1; i < taps.up.size(); ++i)
        check(taps.up[i].dim(2) >= taps.up[i - 1].dim(2),
              "up-tap resolutions must be non-decreasing");
    return taps;
}

}  // namespace dpiqa
