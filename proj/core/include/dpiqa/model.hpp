#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dpiqa/backbone.hpp"
#include "dpiqa/conditioning.hpp"
#include "dpiqa/config.hpp"
#include "dpiqa/decoder.hpp"
#include "dpiqa/schedule.hpp"

namespace dpiqa {

struct TeacherConfig {
    UnetConfig unet;
    int64_t cond_hidden = 0;    // 0 -> cond_dim
    int64_t adapter_hidden = 0; // 0 -> first backbone width
    int64_t qfd_unify = 512;
    std::vector<int64_t> qfd_reduce = {512, 128, 32, 8};
    std::vector<int64_t> head_hidden = {1024, 128};
    int64_t timestep = 1;
};

struct TeacherOutput {
    Tensor quality_map;  //(N,8,64,64)
    Tensor scores;       //(N,)
};

// The full quality model: constant condition matrix (buffer) + residual
// text adapter, image adapter feeding the backbone's down stages, one
// denoising pass, quality-feature decoder over the up taps, regression
// head. Training adds fresh latent noise; inference uses none.
class TeacherModel : public Module {
    // declared first: everything below draws dimensions and seeded weights
    // from these during construction
    TeacherConfig cfg_;
    Rng init_rng_;

public:
    TeacherModel(const TeacherConfig& cfg, Tensor cond_base);

    // text-adapted condition, recomputed so adapter updates take effect
    Tensor condition() const;
    TeacherOutput forward_quality(const Tensor& images, bool fresh_noise, Rng* rng);
    Tensor predict_scores(const Tensor& images);  // inference path, no noise

    // "full" trains everything; "adapters" freezes the backbone and trains
    // the two adapters, the decoder, and the head
    void apply_train_scope(const std::string& scope);

    const TeacherConfig& config() const { return cfg_; }
    const Tensor& condition_base() const { return cond_base_; }

    NoiseSchedule sched;
    MiniUnet unet;
    TextAdapter text_adapter;
    ImageAdapter image_adapter;
    Qfd qfd;
    RegressionHead head;

private:
    Tensor cond_base_;  // (K,d) buffer
};

// RunConfig -> backbone/decoder dimensions
TeacherConfig teacher_config_from(const RunConfig& run);

// Loads the template, builds the condition matrix with the seeded hash
// encoder, constructs the model, and (for backbone.kind=pretrained)
// restores the full weight container named by backbone.weights.
std::unique_ptr<TeacherModel> build_teacher(const RunConfig& run);

// Metadata block describing a run, stored inside checkpoints so later
// stages can detect template or dimension mismatches.
KVMap run_meta(const RunConfig& run, const PromptTemplate& tpl, const std::string& role);

}  // namespace dpiqa
