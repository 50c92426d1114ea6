#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpiqa/student.hpp"
#include "dpiqa/train.hpp"

namespace dpiqa {

// Mean squared error over every element of two identically shaped quality
// maps. The teacher map is expected to carry no gradient history.
Tensor distill_loss(const Tensor& teacher_map, const Tensor& student_map);

// On-disk store of teacher quality maps keyed by (checkpoint hash, image
// hash), so repeated student epochs skip the expensive teacher forward.
class TeacherFeatureCache {
public:
    TeacherFeatureCache(std::string dir, uint64_t checkpoint_hash);
    std::optional<Tensor> get(uint64_t image_hash) const;
    void put(uint64_t image_hash, const Tensor& quality_map) const;
    std::string entry_path(uint64_t image_hash) const;

private:
    std::string dir_;
    uint64_t ckpt_hash_ = 0;
};

struct StudentTrainResult {
    TrainResult base;
    double initial_distill = 0.0;  // mean feature mse over the train records, pre-training
    double final_distill = 0.0;    // same, measured on the returned weights
};

// Minimizes distill_weight * feature-mse(teacher map, student map) plus the
// usual mse+margin score loss. The teacher runs gradient-free and is never
// updated; weight 0 is the no-distillation ablation. cache_dir, when
// non-empty, persists teacher maps keyed by teacher_hash + image content.
// Checkpointing, logging, validation, and divergence handling follow
// train_teacher; the log lines carry an extra "distill" field.
StudentTrainResult train_student(StudentModel& student, TeacherModel& teacher, const Dataset& ds,
                                 const std::vector<int64_t>& train_refs,
                                 const std::vector<int64_t>& val_refs, const TrainSchedule& sched,
                                 double lambda, double distill_weight,
                                 const std::string& ckpt_path, const std::string& log_path,
                                 const KVMap& meta, const std::string& cache_dir = "",
                                 uint64_t teacher_hash = 0);

// Rejects a teacher checkpoint whose conditioning or geometry disagrees
// with the active run config (different template, embedding width, noising
// timestep, or input size), naming the mismatched field.
void check_teacher_meta(const KVMap& ckpt_meta, const RunConfig& run);

}  // namespace dpiqa
