#include "dpiqa/distill.hpp"

#include <cmath>
#include <filesystem>
#include <unordered_map>

#include "dpiqa/checkpoint.hpp"
#include "dpiqa/conditioning.hpp"
#include "dpiqa/losses.hpp"
#include "train_loop.hpp"

namespace dpiqa {

Tensor distill_loss(const Tensor& teacher_map, const Tensor& student_map) {
    check(teacher_map.defined() && student_map.defined(), "distillation needs two feature maps");
    check(teacher_map.shape() == student_map.shape(),
          "distillation feature maps disagree in shape");
    Tensor diff = sub(student_map, teacher_map);
    return mean_all(mul(diff, diff));
}

TeacherFeatureCache::TeacherFeatureCache(std::string dir, uint64_t checkpoint_hash)
    : dir_(std::move(dir)), ckpt_hash_(checkpoint_hash) {
    check(!dir_.empty(), "the feature cache needs a directory");
    std::filesystem::create_directories(dir_);
}

std::string TeacherFeatureCache::entry_path(uint64_t image_hash) const {
    return dir_ + "/fq_" + hash_hex(ckpt_hash_) + "_" + hash_hex(image_hash) + ".ckpt";
}

std::optional<Tensor> TeacherFeatureCache::get(uint64_t image_hash) const {
    const std::string path = entry_path(image_hash);
    if (!std::filesystem::exists(path)) return std::nullopt;
    Checkpoint cp = load_checkpoint(path);
    for (auto& [name, t] : cp.tensors)
        if (name == "quality_map") return t;
    fail("cache entry '" + path + "' holds no quality map");
}

void TeacherFeatureCache::put(uint64_t image_hash, const Tensor& quality_map) const {
    KVMap meta{{"cache.kind", "teacher-quality-map"},
               {"cache.checkpoint", hash_hex(ckpt_hash_)},
               {"cache.image", hash_hex(image_hash)}};
    save_checkpoint(entry_path(image_hash), meta, {{"quality_map", quality_map.detach()}});
}

namespace {

// Per-record teacher maps, served from memory, the optional disk cache, or
// a fresh gradient-free teacher forward, in that order.
class TeacherMaps {
public:
    TeacherMaps(TeacherModel& teacher, ImageStore& store, const std::string& cache_dir,
                uint64_t teacher_hash)
        : teacher_(teacher), store_(store) {
        if (!cache_dir.empty()) disk_.emplace(cache_dir, teacher_hash);
    }

    Tensor get(int64_t ref) {
        auto it = mem_.find(ref);
        if (it != mem_.end()) return it->second;
        const uint64_t img_hash = store_.content_hash(ref);
        if (disk_) {
            if (auto hit = disk_->get(img_hash)) {
                mem_.emplace(ref, *hit);
                return *hit;
            }
        }
        NoGradGuard guard;
        Tensor one = store_.batch({ref});
        Tensor map = teacher_.forward_quality(one, /*fresh_noise=*/false, nullptr).quality_map;
        if (disk_) disk_->put(img_hash, map);
        mem_.emplace(ref, map);
        return map;
    }

    Tensor batch(const std::vector<int64_t>& refs) {  //(N,8,64,64), no grad history
        std::vector<double> data;
        const int64_t per = kQualityMapChannels * kQualityMapSize * kQualityMapSize;
        data.reserve(refs.size() * static_cast<size_t>(per));
        for (int64_t r : refs) {
            Tensor m = get(r);
            data.insert(data.end(), m.data(), m.data() + per);
        }
        return Tensor::from_vector({static_cast<int64_t>(refs.size()), kQualityMapChannels,
                                    kQualityMapSize, kQualityMapSize},
                                   std::move(data));
    }

private:
    TeacherModel& teacher_;
    ImageStore& store_;
    std::optional<TeacherFeatureCache> disk_;
    std::unordered_map<int64_t, Tensor> mem_;
};

double mean_feature_mse(StudentModel& student, TeacherMaps& maps, ImageStore& store,
                        const std::vector<int64_t>& refs) {
    NoGradGuard guard;
    double total = 0.0;
    for (int64_t r : refs) {
        Tensor smap = student.forward_quality(store.batch({r})).quality_map;
        total += distill_loss(maps.get(r), smap).data()[0];
    }
    return total / static_cast<double>(refs.size());
}

}  // namespace

StudentTrainResult train_student(StudentModel& student, TeacherModel& teacher, const Dataset& ds,
                                 const std::vector<int64_t>& train_refs,
                                 const std::vector<int64_t>& val_refs, const TrainSchedule& sched,
                                 double lambda, double distill_weight,
                                 const std::string& ckpt_path, const std::string& log_path,
                                 const KVMap& meta, const std::string& cache_dir,
                                 uint64_t teacher_hash) {
    check(distill_weight >= 0.0 && std::isfinite(distill_weight),
          "the distillation weight must be non-negative");
    check(student.config().image_size == teacher.config().unet.image_size,
          "student and teacher disagree on the input size");
    check(!train_refs.empty(), "training needs a non-empty train split");
    ImageStore store(ds, student.config().image_size);
    TeacherMaps maps(teacher, store, cache_dir, teacher_hash);

    StudentTrainResult result;
    result.initial_distill = mean_feature_mse(student, maps, store, train_refs);

    PredictFn predict = [&](const Tensor& images) { return student.predict_scores(images); };
    detail::BatchLossFn batch_loss = [&](const Tensor& images, const Tensor& targets,
                                         const std::vector<int64_t>& refs) {
        StudentOutput out = student.forward_quality(images);
        std::vector<double> pv(out.scores.data(), out.scores.data() + out.scores.numel());
        std::vector<double> tv(targets.data(), targets.data() + targets.numel());
        detail::StepLoss sl;
        sl.loss = total_loss(out.scores, targets, lambda);
        Tensor dloss = distill_loss(maps.batch(refs), out.quality_map);
        sl.distill = dloss.data()[0];
        if (distill_weight > 0.0) sl.loss = add(sl.loss, mul_scalar(dloss, distill_weight));
        sl.mse = mse_loss_ref(pv, tv);
        sl.margin = margin_loss_ref(pv, tv, lambda);
        return sl;
    };
    result.base = detail::run_training(student, predict, store, train_refs, val_refs, sched,
                                       ckpt_path, log_path, meta, batch_loss);
    result.final_distill = mean_feature_mse(student, maps, store, train_refs);
    return result;
}

void check_teacher_meta(const KVMap& ckpt_meta, const RunConfig& run) {
    auto want = [&](const std::string& key, const std::string& expect) {
        auto it = ckpt_meta.find(key);
        check(it != ckpt_meta.end(), "the teacher checkpoint carries no '" + key + "' metadata");
        check(it->second == expect, "teacher checkpoint mismatch: " + key + " is '" + it->second +
                                        "' in the checkpoint but '" + expect +
                                        "' in the active config");
    };
    want("meta.role", "teacher");
    want("cond.dim", std::to_string(run.cond_dim));
    want("model.timestep", std::to_string(run.timestep));
    want("backbone.image_size", std::to_string(run.image_size));
    PromptTemplate tpl = load_template_file(run.template_file);
    want("meta.template_hash", hash_hex(template_hash(tpl)));
}

}  // namespace dpiqa
