#include "dpiqa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dpiqa/image.hpp"
#include "dpiqa/imageio.hpp"
#include "dpiqa/metrics.hpp"
#include "json.hpp"

namespace dpiqa {

ImageStore::ImageStore(const Dataset& ds, int64_t image_size)
    : ds_(&ds), size_(image_size), cache_(ds.records.size()), hashes_(ds.records.size(), 0) {
    check(image_size > 0, "image size must be positive");
}

void ImageStore::load(int64_t ref) {
    check(ref >= 0 && ref < static_cast<int64_t>(cache_.size()),
          "record index " + std::to_string(ref) + " is out of range for dataset '" + ds_->id + "'");
    const size_t i = static_cast<size_t>(ref);
    if (cache_[i].defined()) return;
    ImageU8 img = load_image(ds_->records[i].image_ref);
    hashes_[i] = image_hash(img);
    cache_[i] = preprocess_image(img, size_);
}

Tensor ImageStore::get(int64_t ref) {
    load(ref);
    return cache_[static_cast<size_t>(ref)];
}

Tensor ImageStore::batch(const std::vector<int64_t>& refs) {
    check(!refs.empty(), "an image batch needs at least one record");
    std::vector<Tensor> images;
    images.reserve(refs.size());
    for (int64_t r : refs) images.push_back(get(r));
    return stack_images(images);
}

uint64_t ImageStore::content_hash(int64_t ref) {
    load(ref);
    return hashes_[static_cast<size_t>(ref)];
}

std::vector<double> predict_records(const PredictFn& predict, ImageStore& store,
                                    const std::vector<int64_t>& refs, int64_t batch) {
    check(batch >= 1, "prediction batch size must be at least 1");
    NoGradGuard guard;
    std::vector<double> out;
    out.reserve(refs.size());
    for (size_t off = 0; off < refs.size(); off += static_cast<size_t>(batch)) {
        const size_t end = std::min(refs.size(), off + static_cast<size_t>(batch));
        std::vector<int64_t> chunk(refs.begin() + static_cast<int64_t>(off),
                                   refs.begin() + static_cast<int64_t>(end));
        Tensor scores = predict(store.batch(chunk));
        check(scores.numel() == static_cast<int64_t>(chunk.size()),
              "predictor returned " + std::to_string(scores.numel()) + " scores for " +
                  std::to_string(chunk.size()) + " images");
        out.insert(out.end(), scores.data(), scores.data() + scores.numel());
    }
    return out;
}

std::pair<double, double> evaluate_split(const PredictFn& predict, ImageStore& store,
                                         const std::vector<int64_t>& test_refs, int64_t batch) {
    check(!test_refs.empty(), "evaluation needs a non-empty test set");
    std::vector<double> preds = predict_records(predict, store, test_refs, batch);
    std::vector<double> mos;
    mos.reserve(test_refs.size());
    for (int64_t r : test_refs)
        mos.push_back(store.dataset().records[static_cast<size_t>(r)].mos_norm);
    auto clamp1 = [](double v) { return std::clamp(v, -1.0, 1.0); };
    return {clamp1(plcc(mos, preds)), clamp1(srcc(mos, preds))};
}

std::pair<double, double> cross_dataset_eval(const PredictFn& predict,
                                             const std::string& trained_on, const Dataset& other,
                                             int64_t image_size, int64_t batch) {
    check(trained_on != other.id,
          "cross-dataset evaluation needs a dataset disjoint from the training one; both are '" +
              other.id + "'");
    ImageStore store(other, image_size);
    std::vector<int64_t> refs(other.records.size());
    for (size_t i = 0; i < refs.size(); ++i) refs[i] = static_cast<int64_t>(i);
    return evaluate_split(predict, store, refs, batch);
}

void EvalReport::finalize() {
    std::vector<double> ps, ss;
    ps.reserve(splits.size());
    ss.reserve(splits.size());
    for (const auto& s : splits) {
        ps.push_back(s.plcc);
        ss.push_back(s.srcc);
    }
    median_plcc = median_of(ps);
    median_srcc = median_of(ss);
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["dataset_id"] = dataset_id;
    j["checkpoint"] = checkpoint;
    j["mode"] = mode;
    j["splits"] = nlohmann::ordered_json::array();
    for (const auto& s : splits)
        j["splits"].push_back(
            nlohmann::ordered_json{{"seed", s.seed}, {"plcc", s.plcc}, {"srcc", s.srcc}});
    j["median_plcc"] = median_plcc;
    j["median_srcc"] = median_srcc;
    return j.dump(2) + "\n";
}

void save_report(const std::string& path, const EvalReport& report) {
    std::ofstream out(path, std::ios::trunc);
    check(out.is_open(), "cannot open report '" + path + "' for writing");
    out << report.to_json();
    check(out.good(), "failed while writing report '" + path + "'");
}

Tensor saliency_map(const PredictFn& score_fn, const Tensor& image) {
    check(image.defined() && image.ndim() == 4 && image.dim(0) == 1 && image.dim(1) == 3,
          "saliency expects one (1,3,S,S) image");
    const int64_t h = image.dim(2), w = image.dim(3);
    Tensor x = image.detach().set_requires_grad(true);
    Tensor score = score_fn(x);
    check(score.defined() && score.numel() == 1, "the score path must yield one scalar per image");
    check(score.requires_grad(),
          "saliency needs a differentiable score path (no-grad predictions cannot be attributed)");
    score.backward();
    check(x.has_grad(), "the score did not propagate a gradient back to the pixels");
    const auto& g = x.grad_ref();

    std::vector<double> map(static_cast<size_t>(h * w), 0.0);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < h * w; ++i)
            map[static_cast<size_t>(i)] =
                std::max(map[static_cast<size_t>(i)], std::abs(g[static_cast<size_t>(c * h * w + i)]));
    const auto [lo_it, hi_it] = std::minmax_element(map.begin(), map.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi > lo) {
        for (double& v : map) v = (v - lo) / (hi - lo);
    } else {
        std::fill(map.begin(), map.end(), 0.0);  // flat gradient carries no attribution
    }
    return Tensor::from_vector({h, w}, std::move(map));
}

void save_saliency_png(const std::string& path, const Tensor& map) {
    check(map.defined() && map.ndim() == 2, "saliency maps are 2-D");
    std::vector<uint8_t> px(static_cast<size_t>(map.numel()));
    for (int64_t i = 0; i < map.numel(); ++i) {
        const double v = std::clamp(map.data()[i], 0.0, 1.0);
        px[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    save_gray_png(path, px.data(), map.dim(0), map.dim(1));
}

}  // namespace dpiqa
