#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dpiqa {

// Flat key=value text ('#' comments, blank lines ignored). Keys are dotted
// lowercase ("teacher.lr"). Environment overrides use the DPIQA_ prefix with
// "__" standing in for the dot: DPIQA_TEACHER__LR=1e-4.
using KVMap = std::map<std::string, std::string>;

KVMap parse_kv_text(const std::string& text);
std::string serialize_kv(const KVMap& kv);
KVMap load_config_file(const std::string& path);
void apply_env_overrides(KVMap& kv, const std::string& prefix = "DPIQA_");

// Every tuned default in one place. "auto" schedule fields resolve per
// dataset at run time (see resolve_* below).
struct RunConfig {
    // backbone
    std::string backbone_kind = "mini";  // mini | pretrained
    std::string backbone_weights;        // checkpoint container path for "pretrained"
    int64_t latent_channels = 4;
    std::vector<int64_t> unet_channels = {32, 48, 64, 96};
    int64_t image_size = 512;
    int64_t timestep = 1;
    uint64_t model_seed = 17;
    // conditioning
    int64_t cond_dim = 768;
    int64_t cond_hidden = 0;  // 0 -> same as cond_dim
    std::string template_file = "configs/template_default.txt";
    uint64_t encoder_seed = 99;
    // decoder
    int64_t qfd_unify = 512;
    std::vector<int64_t> qfd_reduce = {512, 128, 32, 8};
    std::vector<int64_t> head_hidden = {1024, 128};
    // loss
    double lambda = 0.25;
    // teacher schedule
    double teacher_lr = 1e-5;
    int64_t teacher_batch = 12;
    int64_t teacher_epochs = 15;
    std::string teacher_decay = "auto";
    std::string teacher_validation_step = "auto";
    // student schedule
    double student_lr = 1e-4;
    int64_t student_batch = 24;
    int64_t student_epochs = 30;
    std::string student_decay = "auto";
    std::string student_validation_step = "auto";
    std::vector<int64_t> student_channels = {24, 48, 96, 192};
    uint64_t student_seed = 23;
    // training, shared
    double decay_factor = 0.2;
    std::string train_scope = "full";  // full | adapters
    uint64_t train_seed = 0;
    int64_t max_steps = 0;  // 0 = unlimited; smoke tests cap this
    // protocol
    std::vector<uint64_t> split_seeds = {1, 2, 3, 4, 5};
    // io
    std::string output_dir = "out";

    bool operator==(const RunConfig&) const = default;

    // Unknown keys and invalid values raise ConfigError naming the field.
    static RunConfig from_kv(const KVMap& kv);
    KVMap to_kv() const;
};

// defaults -> optional file -> optional env overlay -> validated struct
RunConfig load_run_config(const std::string& path, bool use_env);

// Built-in per-dataset schedule defaults. role is "teacher" or "student";
// unknown dataset ids get no decay and the 250-batch validation cadence.
std::vector<int64_t> default_decay_epochs(const std::string& role, const std::string& dataset_id);
int64_t default_validation_step(const std::string& dataset_id);

// Expands an "auto"/"none"/csv field against the dataset defaults.
std::vector<int64_t> resolve_decay_epochs(const std::string& field, const std::string& role,
                                          const std::string& dataset_id);
int64_t resolve_validation_step(const std::string& field, const std::string& dataset_id);

}  // namespace dpiqa
