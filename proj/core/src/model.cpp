#include "dpiqa/model.hpp"

#include <utility>

#include "dpiqa/checkpoint.hpp"
#include "dpiqa/common.hpp"

namespace dpiqa {

namespace {

int64_t resolve_cond_hidden(const TeacherConfig& cfg) {
    return cfg.cond_hidden > 0 ? cfg.cond_hidden : cfg.unet.cond_dim;
}

int64_t resolve_adapter_hidden(const TeacherConfig& cfg) {
    return cfg.adapter_hidden > 0 ? cfg.adapter_hidden : cfg.unet.channels.at(0);
}

std::vector<int64_t> up_tap_channels(const MiniUnet& unet) {
    std::vector<int64_t> ch;
    for (const Shape& s : unet.up_tap_shapes()) ch.push_back(s[0]);
    return ch;
}

}  // namespace

TeacherModel::TeacherModel(const TeacherConfig& cfg, Tensor cond_base)
    : cfg_(cfg),
      init_rng_(cfg.unet.seed ^ fnv1a64("heads", 5)),
      sched(NoiseSchedule::linear()),
      unet(cfg.unet),
      text_adapter(cfg.unet.cond_dim, resolve_cond_hidden(cfg), init_rng_),
      image_adapter(cfg.unet.image_size, unet.down_tap_shapes(), resolve_adapter_hidden(cfg),
                    init_rng_),
      qfd(up_tap_channels(unet), cfg.qfd_unify, cfg.qfd_reduce, init_rng_),
      head(kQualityMapChannels * kQualityMapSize * kQualityMapSize, cfg.head_hidden, init_rng_) {
    check(cfg_.timestep >= 1 && cfg_.timestep <= sched.t_max, "timestep ", cfg_.timestep,
          " outside the schedule range 1..", sched.t_max);
    check(cond_base.defined() && cond_base.ndim() == 2, "condition base must be a (K,d) matrix");
    check(cond_base.dim(1) == cfg_.unet.cond_dim, "condition base width ", cond_base.dim(1),
          " does not match cond_dim ", cfg_.unet.cond_dim);
    check(cond_base.dim(0) >= 1, "condition base needs at least one row");
    check(all_finite(cond_base), "condition base contains non-finite values");

    register_child("unet", &unet);
    register_child("text_adapter", &text_adapter);
    register_child("image_adapter", &image_adapter);
    register_child("qfd", &qfd);
    register_child("head", &head);
    cond_base_ = register_buffer("cond_base", std::move(cond_base));
}

Tensor TeacherModel::condition() const { return text_adapter.forward(cond_base_); }

TeacherOutput TeacherModel::forward_quality(const Tensor& images, bool fresh_noise, Rng* rng) {
    Tensor cond = condition();
    ExtractOptions opts;
    opts.timestep = cfg_.timestep;
    opts.fresh_noise = fresh_noise;
    opts.rng = rng;
    FeatureTapSet taps = extract_features(unet, sched, images, cond, &image_adapter, opts);
    TeacherOutput out;
    out.quality_map = qfd.forward(taps.up);
    out.scores = head.forward(out.quality_map);
    return out;
}

Tensor TeacherModel::predict_scores(const Tensor& images) {
    return forward_quality(images, false, nullptr).scores;
}

void TeacherModel::apply_train_scope(const std::string& scope) {
    if (scope == "full") {
        set_trainable(true);
    } else if (scope == "adapters") {
        set_trainable(true);
        unet.set_trainable(false);
    } else {
        fail_config("train.scope must be full or adapters, got '", scope, "'");
    }
}

TeacherConfig teacher_config_from(const RunConfig& run) {
    TeacherConfig cfg;
    cfg.unet.latent_channels = run.latent_channels;
    cfg.unet.channels = run.unet_channels;
    cfg.unet.cond_dim = run.cond_dim;
    cfg.unet.image_size = run.image_size;
    cfg.unet.seed = run.model_seed;
    cfg.cond_hidden = run.cond_hidden;
    cfg.qfd_unify = run.qfd_unify;
    cfg.qfd_reduce = run.qfd_reduce;
    cfg.head_hidden = run.head_hidden;
    cfg.timestep = run.timestep;
    return cfg;
}

std::unique_ptr<TeacherModel> build_teacher(const RunConfig& run) {
    PromptTemplate tpl = load_template_file(run.template_file);
    validate_template(tpl);
    HashTextEncoder enc(run.cond_dim, run.encoder_seed);
    Tensor cond = build_condition(enc, tpl);
    auto model = std::make_unique<TeacherModel>(teacher_config_from(run), std::move(cond));
    if (run.backbone_kind == "pretrained") {
        check_config(!run.backbone_weights.empty(),
                     "backbone.kind=pretrained requires backbone.weights");
        load_module(run.backbone_weights, *model);
    }
    return model;
}

KVMap run_meta(const RunConfig& run, const PromptTemplate& tpl, const std::string& role) {
    KVMap meta = run.to_kv();
    meta["meta.role"] = role;
    meta["meta.template_k"] = std::to_string(tpl.k());
    meta["meta.template_hash"] = hash_hex(template_hash(tpl));
    return meta;
}

}  // namespace dpiqa
