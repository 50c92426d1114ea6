#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dpiqa/nn.hpp"
#include "dpiqa/schedule.hpp"
#include "dpiqa/tensor.hpp"

namespace dpiqa {

// Activations recorded while one denoising pass runs: the output of every
// down stage (after any adapter addition, i.e. exactly what propagates
// onward) and of every up stage, in computation order. Up-stage resolutions
// never decrease along the list.
struct FeatureTapSet {
    std::vector<Tensor> down;  //(N,C_i,H_i,W_i) per down stage
    std::vector<Tensor> up;    //(N,C_i,H_i,W_i) per up stage
    Tensor noise_pred;         //(N,C_lat,h,w)
};

// Anything that can map an image to a latent and run one conditioned
// denoising pass while exposing its stage activations.
class DenoiserBackbone {
public:
    virtual ~DenoiserBackbone() = default;
    virtual Tensor encode_latent(const Tensor& images) const = 0;  //(N,3,S,S)->(N,C,h,h)
    virtual FeatureTapSet denoise(const Tensor& z_t, const Tensor& cond,
                                  const std::vector<Tensor>* adapter_feats) = 0;
    virtual int64_t image_size() const = 0;
    virtual int64_t latent_size() const = 0;
    virtual int64_t latent_channels() const = 0;
    virtual std::vector<Shape> down_tap_shapes() const = 0;  //(C,H,W) per stage, batch-free
    virtual std::vector<Shape> up_tap_shapes() const = 0;
    // total denoising passes run so far; lets callers assert single-pass use
    virtual int64_t denoise_calls() const = 0;
};

struct UnetConfig {
    int64_t latent_channels = 4;
    std::vector<int64_t> channels = {32, 48, 64, 96};  // one width per down stage
    int64_t cond_dim = 768;
    int64_t image_size = 512;  // positive multiple of 64
    uint64_t seed = 17;
};

// res block + cross-attention, the repeating unit of every stage
class AttnBlock : public Module {
public:
    AttnBlock(int64_t in_ch, int64_t out_ch, int64_t cond_dim, Rng& rng);
    Tensor forward(const Tensor& x, const Tensor& cond) const;
    ResBlock res;
    CrossAttention attn;
};

// Four-stage encoder/decoder U-Net over an 8x-downsampled latent. The
// latent encoder is a frozen seeded patchify conv held as buffers; every
// stage cross-attends over the shared condition matrix. Down-stage outputs
// feed the skip connections, so adapter features added there influence the
// whole decoding path.
class MiniUnet : public Module, public DenoiserBackbone {
public:
    explicit MiniUnet(const UnetConfig& cfg);

    Tensor encode_latent(const Tensor& images) const override;
    FeatureTapSet denoise(const Tensor& z_t, const Tensor& cond,
                          const std::vector<Tensor>* adapter_feats) override;

    int64_t image_size() const override { return cfg_.image_size; }
    int64_t latent_size() const override { return cfg_.image_size / 8; }
    int64_t latent_channels() const override { return cfg_.latent_channels; }
    std::vector<Shape> down_tap_shapes() const override;
    std::vector<Shape> up_tap_shapes() const override;
    int64_t denoise_calls() const override { return calls_; }

    const UnetConfig& config() const { return cfg_; }

private:
    UnetConfig cfg_;
    Tensor patch_w_, patch_b_;  // frozen latent encoder, buffers
    std::unique_ptr<Conv2d> stem_;
    std::vector<std::unique_ptr<AttnBlock>> downs_;
    std::vector<std::unique_ptr<Downsample>> downsamples_;
    std::unique_ptr<AttnBlock> mid_;
    std::vector<std::unique_ptr<AttnBlock>> ups_;
    std::vector<std::unique_ptr<Upsample>> upsamples_;
    std::unique_ptr<GroupNorm> out_gn_;
    std::unique_ptr<Conv2d> out_conv_;
    int64_t calls_ = 0;
};

// patchify -> two res blocks -> zero-init 1x1 projection, one branch per
// down stage
class AdapterStage : public Module {
public:
    AdapterStage(int64_t patch, int64_t hidden, int64_t out_ch, Rng& rng);
    Tensor forward(const Tensor& images) const;
    Conv2d patch_conv;
    ResBlock res1, res2;
    Conv2d proj;  // zero-init: the adapter starts as an exact no-op
};

// Per-stage image features shaped to match the down taps. The final
// projection of every stage starts at zero, so a freshly built adapter
// leaves the backbone's activations untouched.
class ImageAdapter : public Module {
public:
    ImageAdapter(int64_t image_size, const std::vector<Shape>& down_tap_shapes, int64_t hidden,
                 Rng& rng);
    std::vector<Tensor> forward(const Tensor& images) const;  // one (N,C_i,H_i,W_i) per stage
    int64_t image_size() const { return image_size_; }

private:
    int64_t image_size_;
    std::vector<Shape> tap_shapes_;
    std::vector<std::unique_ptr<AdapterStage>> stages_;
};

struct ExtractOptions {
    int64_t timestep = 1;
    bool fresh_noise = false;  // true: eps ~ N(0,1) from rng; false: eps = 0
    Rng* rng = nullptr;        // required when fresh_noise
};

// Latent-encode, noise to the configured timestep, run exactly one
// conditioned denoising pass, and hand back the taps. Any non-finite
// activation is fatal, with the failing stage named.
FeatureTapSet extract_features(DenoiserBackbone& backbone, const NoiseSchedule& sched,
                               const Tensor& images, const Tensor& cond,
                               const ImageAdapter* adapter, const ExtractOptions& opts);

}  // namespace dpiqa
