#pragma once

// Shared minibatch loop behind train_teacher and train_student: shuffling,
// lr decay, logging, validation-driven checkpoint selection, divergence
// recovery. Internal to the library.

#include <functional>
#include <string>
#include <vector>

#include "dpiqa/eval.hpp"
#include "dpiqa/train.hpp"

namespace dpiqa::detail {

struct StepLoss {
    Tensor loss;          // scalar with a gradient path into the model
    double mse = 0.0;
    double margin = 0.0;
    double distill = -1.0;  // < 0 -> field omitted from the log line
};

using BatchLossFn = std::function<StepLoss(const Tensor& images, const Tensor& targets,
                                           const std::vector<int64_t>& refs)>;

// Drives the full schedule. val_predict runs gradient-free; the best
// checkpoint by validation SRCC lands at ckpt_path and is reloaded into the
// model before returning (the final weights win when every validation pass
// was degenerate). Non-finite loss restores the checkpoint and throws.
TrainResult run_training(Module& model, const PredictFn& val_predict, ImageStore& store,
                         const std::vector<int64_t>& train_refs,
                         const std::vector<int64_t>& val_refs, const TrainSchedule& sched,
                         const std::string& ckpt_path, const std::string& log_path,
                         const KVMap& meta, const BatchLossFn& batch_loss);

}  // namespace dpiqa::detail
