#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "dpiqa/config.hpp"
#include "dpiqa/decoder.hpp"
#include "dpiqa/nn.hpp"

namespace dpiqa {

struct StudentConfig {
    int64_t image_size = 512;
    std::vector<int64_t> channels = {24, 48, 96, 192};  // four stride-2 stages
    std::vector<int64_t> head_hidden = {1024, 128};
    uint64_t seed = 23;
};

struct StudentOutput {
    Tensor quality_map;  //(N,8,64,64), aligned to the teacher's map
    Tensor scores;       //(N,)
};

// Plain convolutional scorer: a small stride-2 pyramid, an alignment head
// (bilinear resize to 64 plus a 1x1 conv to 8 channels) matching the
// teacher's quality-map shape, and the same flatten-MLP score head.
class StudentModel : public Module {
    StudentConfig cfg_;
    Rng init_rng_;

public:
    explicit StudentModel(const StudentConfig& cfg);

    StudentOutput forward_quality(const Tensor& images);  //(N,3,S,S)
    Tensor predict_scores(const Tensor& images);

    const StudentConfig& config() const { return cfg_; }

    Conv2d stem;
    std::vector<std::unique_ptr<ResBlock>> blocks;
    std::vector<std::unique_ptr<Downsample>> dsamps;
    Conv2d align;
    RegressionHead head;
};

StudentConfig student_config_from(const RunConfig& run);

}  // namespace dpiqa
