#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpiqa/common.hpp"

namespace dpiqa {

struct ImageRecord {
    std::string image_ref;  // path, resolved against the manifest directory
    double mos_raw = 0.0;
    double mos_norm = 0.0;  // in [0,1]
    std::string dataset_id;
};

struct Dataset {
    std::string id;
    double scale_min = 0.0;
    double scale_max = 0.0;
    std::vector<ImageRecord> records;
};

// (raw - scale_min) / (scale_max - scale_min); a degenerate scale maps
// everything to 0.5. Raw values outside the declared scale are an error
// naming the offending index.
std::vector<double> normalize_scores(const std::vector<double>& raw, double scale_min,
                                     double scale_max);

// CSV with a header containing image_path and mos columns (extras ignored).
// An optional sidecar `<manifest>.meta` holds flat key=value lines:
// dataset_id, scale_min, scale_max. Missing sidecar values fall back to the
// manifest filename stem and the observed score range. Relative image paths
// resolve against the manifest's directory; each must exist. Row-level
// problems are reported with their line number; an empty manifest is fatal.
Dataset load_manifest(const std::string& csv_path);

struct SplitPlan {
    uint64_t seed = 0;
    int repeat_index = 0;
    std::vector<int64_t> train_refs;
    std::vector<int64_t> test_refs;
};

// One seeded shuffle + 8:2 partition per seed; floor(0.8*n) records go to
// train. Requires n_records >= 5.
std::vector<SplitPlan> make_splits(int64_t n_records, const std::vector<uint64_t>& seeds);

}  // namespace dpiqa
