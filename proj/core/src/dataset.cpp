#include "dpiqa/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dpiqa/rng.hpp"

namespace dpiqa {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        check(pos == s.size(), what, ": trailing characters in '", s, "'");
        check(std::isfinite(v), what, ": non-finite value '", s, "'");
        return v;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        fail(what, ": cannot parse number '", s, "'");
    }
}

}  // namespace

std::vector<double> normalize_scores(const std::vector<double>& raw, double scale_min,
                                     double scale_max) {
    check(scale_min <= scale_max, "normalize_scores: scale_min ", scale_min, " > scale_max ",
          scale_max);
    std::vector<double> out(raw.size());
    const double range = scale_max - scale_min;
    for (size_t i = 0; i < raw.size(); ++i) {
        check(raw[i] >= scale_min && raw[i] <= scale_max, "normalize_scores: value ", raw[i],
              " at index ", i, " outside declared scale [", scale_min, ", ", scale_max, "]");
        out[i] = (range == 0.0) ? 0.5 : (raw[i] - scale_min) / range;
    }
    return out;
}

Dataset load_manifest(const std::string& csv_path) {
    namespace fs = std::filesystem;
    std::ifstream in(csv_path);
    check(in.good(), "load_manifest: missing manifest '", csv_path, "'");
    const fs::path dir = fs::path(csv_path).parent_path();

    std::string line;
    check(static_cast<bool>(std::getline(in, line)), "load_manifest: '", csv_path, "' is empty");
    auto header = split_csv_row(line);
    int path_col = -1, mos_col = -1;
    for (size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "image_path") path_col = static_cast<int>(i);
        if (header[i] == "mos") mos_col = static_cast<int>(i);
    }
    check(path_col >= 0 && mos_col >= 0, "load_manifest: '", csv_path,
          "' header must contain image_path and mos columns");

    Dataset ds;
    std::vector<double> raw;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto cols = split_csv_row(line);
        check(cols.size() >= header.size(), "load_manifest: row ", line_no, " has ", cols.size(),
              " columns, expected ", header.size());
        ImageRecord rec;
        fs::path p(cols[static_cast<size_t>(path_col)]);
        if (p.is_relative()) p = dir / p;
        check(fs::exists(p), "load_manifest: row ", line_no, ": image '", p.string(),
              "' does not exist");
        rec.image_ref = p.string();
        rec.mos_raw = parse_double(cols[static_cast<size_t>(mos_col)],
                                   detail::format_msg("load_manifest: row ", line_no, " mos"));
        ds.records.push_back(std::move(rec));
        raw.push_back(ds.records.back().mos_raw);
    }
    check(!ds.records.empty(), "load_manifest: '", csv_path, "' has no data rows");

    // sidecar metadata, with observed-range fallback
    ds.id = fs::path(csv_path).stem().string();
    auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
    ds.scale_min = *lo_it;
    ds.scale_max = *hi_it;
    const std::string meta_path = csv_path + ".meta";
    if (std::ifstream meta(meta_path); meta.good()) {
        std::string mline;
        int mno = 0;
        while (std::getline(meta, mline)) {
            ++mno;
            const std::string t = trim(mline);
            if (t.empty() || t[0] == '#') continue;
            const size_t eq = t.find('=');
            check(eq != std::string::npos, "load_manifest: '", meta_path, "' line ", mno,
                  ": expected key=value");
            const std::string key = trim(t.substr(0, eq));
            const std::string val = trim(t.substr(eq + 1));
            if (key == "dataset_id") {
                ds.id = val;
            } else if (key == "scale_min") {
                ds.scale_min = parse_double(val, "load_manifest: scale_min");
            } else if (key == "scale_max") {
                ds.scale_max = parse_double(val, "load_manifest: scale_max");
            } else {
                fail("load_manifest: '", meta_path, "' line ", mno, ": unknown key '", key, "'");
            }
        }
    }

    auto norm = normalize_scores(raw, ds.scale_min, ds.scale_max);
    for (size_t i = 0; i < ds.records.size(); ++i) {
        ds.records[i].mos_norm = norm[i];
        ds.records[i].dataset_id = ds.id;
    }
    return ds;
}

std::vector<SplitPlan> make_splits(int64_t n_records, const std::vector<uint64_t>& seeds) {
    check(n_records >= 5, "make_splits: need at least 5 records, got ", n_records);
    check(!seeds.empty(), "make_splits: need at least one seed");
    std::vector<SplitPlan> plans;
    plans.reserve(seeds.size());
    const int64_t n_train = static_cast<int64_t>(std::floor(0.8 * static_cast<double>(n_records)));
    for (size_t r = 0; r < seeds.size(); ++r) {
        std::vector<int64_t> idx(static_cast<size_t>(n_records));
        for (int64_t i = 0; i < n_records; ++i) idx[static_cast<size_t>(i)] = i;
        Rng rng(seeds[r]);
        rng.shuffle(idx);
        SplitPlan plan;
        plan.seed = seeds[r];
        plan.repeat_index = static_cast<int>(r);
        plan.train_refs.assign(idx.begin(), idx.begin() + n_train);
        plan.test_refs.assign(idx.begin() + n_train, idx.end());
        plans.push_back(std::move(plan));
    }
    return plans;
}

}  // namespace dpiqa
