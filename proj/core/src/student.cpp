#include "dpiqa/student.hpp"

namespace dpiqa {

namespace {

StudentConfig checked(StudentConfig cfg) {
    check(cfg.image_size > 0 && cfg.image_size % 16 == 0,
          "student image size must be a positive multiple of 16");
    check(cfg.channels.size() == 4, "the student pyramid uses exactly four stages");
    for (int64_t c : cfg.channels) check(c > 0, "student channel widths must be positive");
    return cfg;
}

}  // namespace

StudentModel::StudentModel(const StudentConfig& cfg)
    : cfg_(checked(cfg)),
      init_rng_(cfg_.seed ^ fnv1a64("student", 7)),
      stem(3, cfg_.channels[0], 3, 1, 1, init_rng_),
      align(cfg_.channels[3], kQualityMapChannels, 1, 1, 0, init_rng_),
      head(kQualityMapChannels * kQualityMapSize * kQualityMapSize, cfg_.head_hidden, init_rng_) {
    for (size_t i = 0; i < 4; ++i) {
        const int64_t in = i == 0 ? cfg_.channels[0] : cfg_.channels[i - 1];
        blocks.push_back(std::make_unique<ResBlock>(in, cfg_.channels[i], init_rng_));
        dsamps.push_back(std::make_unique<Downsample>(cfg_.channels[i], cfg_.channels[i], init_rng_));
    }
    register_child("stem", &stem);
    for (size_t i = 0; i < 4; ++i) {
        register_child("block" + std::to_string(i), blocks[i].get());
        register_child("dsamp" + std::to_string(i), dsamps[i].get());
    }
    register_child("align", &align);
    register_child("head", &head);
}

StudentOutput StudentModel::forward_quality(const Tensor& images) {
    check(images.defined() && images.ndim() == 4 && images.dim(1) == 3 &&
              images.dim(2) == cfg_.image_size && images.dim(3) == cfg_.image_size,
          "student expects (N,3," + std::to_string(cfg_.image_size) + "," +
              std::to_string(cfg_.image_size) + ") images");
    Tensor x = stem.forward(images);
    for (size_t i = 0; i < 4; ++i) {
        x = blocks[i]->forward(x);
        x = dsamps[i]->forward(x);
        check(all_finite(x), "non-finite activation at student stage " + std::to_string(i));
    }
    Tensor aligned = resize_bilinear(x, kQualityMapSize, kQualityMapSize);
    StudentOutput out;
    out.quality_map = align.forward(aligned);  //(N,8,64,64)
    out.scores = head.forward(out.quality_map);
    check(all_finite(out.quality_map) && all_finite(out.scores), "non-finite student output");
    return out;
}

Tensor StudentModel::predict_scores(const Tensor& images) {
    return forward_quality(images).scores;
}

StudentConfig student_config_from(const RunConfig& run) {
    StudentConfig cfg;
    cfg.image_size = run.image_size;
    cfg.channels = run.student_channels;
    cfg.head_hidden = run.head_hidden;
    cfg.seed = run.student_seed;
    return cfg;
}

}  // namespace dpiqa
