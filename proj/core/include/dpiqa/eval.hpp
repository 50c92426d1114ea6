#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dpiqa/dataset.hpp"
#include "dpiqa/tensor.hpp"

namespace dpiqa {

// (N,3,S,S) in [-1,1] -> (N,) scores
using PredictFn = std::function<Tensor(const Tensor&)>;

// Decodes and preprocesses manifest records on first use, then serves them
// from memory; content hashes feed the teacher feature cache.
class ImageStore {
public:
    ImageStore(const Dataset& ds, int64_t image_size);
    Tensor get(int64_t ref);                          //(3,S,S)
    Tensor batch(const std::vector<int64_t>& refs);   //(N,3,S,S)
    uint64_t content_hash(int64_t ref);
    int64_t image_size() const { return size_; }
    const Dataset& dataset() const { return *ds_; }

private:
    void load(int64_t ref);
    const Dataset* ds_;
    int64_t size_;
    std::vector<Tensor> cache_;
    std::vector<uint64_t> hashes_;
};

// Predictions for the referenced records, batched, gradient-free.
std::vector<double> predict_records(const PredictFn& predict, ImageStore& store,
                                    const std::vector<int64_t>& refs, int64_t batch);

// (plcc, srcc) of predictions against mos_norm, clamped to [-1,1].
std::pair<double, double> evaluate_split(const PredictFn& predict, ImageStore& store,
                                         const std::vector<int64_t>& test_refs, int64_t batch);

// Zero-shot metrics over every record of `other`; refuses to score the
// dataset the model was trained on.
std::pair<double, double> cross_dataset_eval(const PredictFn& predict,
                                             const std::string& trained_on, const Dataset& other,
                                             int64_t image_size, int64_t batch);

struct SplitMetrics {
    uint64_t seed = 0;
    double plcc = 0.0;
    double srcc = 0.0;
};

struct EvalReport {
    std::string dataset_id;
    std::string checkpoint;  // content hash of the model container, hex
    std::string mode;        // "within" | "cross_dataset"
    std::vector<SplitMetrics> splits;
    double median_plcc = 0.0;
    double median_srcc = 0.0;

    void finalize();              // recomputes the medians from the splits
    std::string to_json() const;  // stable field order, newline-terminated
};

void save_report(const std::string& path, const EvalReport& report);

// d(score)/d(pixel), absolute value, channel max, min-max normalized
// ((S,S) in [0,1]; all zeros when the gradient vanishes everywhere). The
// callable must build a gradient path — no internal NoGradGuard.
Tensor saliency_map(const PredictFn& score_fn, const Tensor& image);

void save_saliency_png(const std::string& path, const Tensor& map);

}  // namespace dpiqa
