#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpiqa/config.hpp"
#include "dpiqa/dataset.hpp"
#include "dpiqa/model.hpp"
#include "dpiqa/tensor.hpp"

namespace dpiqa {

// Adaptive-moment optimizer over a fixed parameter list. Parameters with no
// accumulated gradient this step are treated as zero-gradient (the moment
// state still decays). Updates touch raw values only — no autograd history.
class Adam {
public:
    explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);
    void step(double lr);
    size_t size() const { return params_.size(); }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

std::vector<Tensor> trainable_parameters(const Module& m);
int64_t param_count(const Module& m);

struct TrainSchedule {
    double lr = 1e-5;
    int64_t batch = 12;
    int64_t epochs = 15;
    std::vector<int64_t> decay_epochs;  // 1-indexed, strictly increasing
    double decay_factor = 0.2;
    int64_t validation_step = 250;  // batches between held-out metric passes
    uint64_t seed = 0;
    int64_t max_steps = 0;  // 0 = no cap
};

// Concrete schedules from the run config, with "auto" decay/validation
// fields expanded against the per-dataset defaults.
TrainSchedule teacher_schedule_from(const RunConfig& run, const std::string& dataset_id);
TrainSchedule student_schedule_from(const RunConfig& run, const std::string& dataset_id);

// Base lr scaled by decay_factor once per decay epoch already completed;
// epochs are 1-indexed, so the new rate first applies in epoch m+1.
double lr_at_epoch(const TrainSchedule& s, int64_t epoch);

struct TrainResult {
    int64_t steps = 0;
    double final_loss = 0.0;
    double best_val_srcc = -2.0;  // stays -2 when every validation pass was degenerate
    int64_t best_step = -1;       // -1 = the pre-training snapshot
    std::string checkpoint_path;
};

// Minimizes mse+margin over shuffled minibatches of the referenced records.
// Validation (on val_refs, or on the training records when val_refs is
// empty) runs every validation_step batches and once at the end; the best
// checkpoint by validation SRCC is kept at ckpt_path and reloaded into the
// model before returning. Every step appends one JSON line to log_path.
// A non-finite loss aborts with the last good checkpoint still on disk.
TrainResult train_teacher(TeacherModel& model, const Dataset& ds,
                          const std::vector<int64_t>& train_refs,
                          const std::vector<int64_t>& val_refs, const TrainSchedule& sched,
                          double lambda, const std::string& ckpt_path,
                          const std::string& log_path, const KVMap& meta);

}  // namespace dpiqa
