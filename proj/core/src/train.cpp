#include "dpiqa/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>

#include "dpiqa/checkpoint.hpp"
#include "dpiqa/losses.hpp"
#include "dpiqa/metrics.hpp"
#include "json.hpp"
#include "train_loop.hpp"

namespace dpiqa {

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    check(!params_.empty(), "optimizer needs at least one trainable parameter");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        check(p.defined() && p.requires_grad(), "optimizer parameters must require gradients");
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step(double lr) {
    check(lr > 0.0 && std::isfinite(lr), "learning rate must be positive");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    NoGradGuard guard;
    for (size_t k = 0; k < params_.size(); ++k) {
        Tensor& p = params_[k];
        const double* g = p.has_grad() ? p.grad_ref().data() : nullptr;
        double* x = p.data();
        auto& m = m_[k];
        auto& v = v_[k];
        for (size_t i = 0; i < m.size(); ++i) {
            const double gi = g ? g[i] : 0.0;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            x[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
    }
}

std::vector<Tensor> trainable_parameters(const Module& m) {
    std::vector<Tensor> out;
    for (auto& [name, p] : m.named_parameters())
        if (p.requires_grad()) out.push_back(p);
    return out;
}

int64_t param_count(const Module& m) {
    int64_t n = 0;
    for (auto& [name, p] : m.named_parameters()) n += p.numel();
    return n;
}

TrainSchedule teacher_schedule_from(const RunConfig& run, const std::string& dataset_id) {
    TrainSchedule s;
    s.lr = run.teacher_lr;
    s.batch = run.teacher_batch;
    s.epochs = run.teacher_epochs;
    s.decay_epochs = resolve_decay_epochs(run.teacher_decay, "teacher", dataset_id);
    s.decay_factor = run.decay_factor;
    s.validation_step = resolve_validation_step(run.teacher_validation_step, dataset_id);
    s.seed = run.train_seed;
    s.max_steps = run.max_steps;
    return s;
}

TrainSchedule student_schedule_from(const RunConfig& run, const std::string& dataset_id) {
    TrainSchedule s;
    s.lr = run.student_lr;
    s.batch = run.student_batch;
    s.epochs = run.student_epochs;
    s.decay_epochs = resolve_decay_epochs(run.student_decay, "student", dataset_id);
    s.decay_factor = run.decay_factor;
    s.validation_step = resolve_validation_step(run.student_validation_step, dataset_id);
    s.seed = run.train_seed;
    s.max_steps = run.max_steps;
    return s;
}

double lr_at_epoch(const TrainSchedule& s, int64_t epoch) {
    check(epoch >= 1, "epochs are 1-indexed");
    double lr = s.lr;
    for (int64_t m : s.decay_epochs)
        if (m < epoch) lr *= s.decay_factor;
    return lr;
}

namespace {

void validate_schedule(const TrainSchedule& s) {
    check(s.lr > 0.0 && std::isfinite(s.lr), "learning rate must be positive");
    check(s.batch >= 2, "batch size must be at least 2 (the ranking loss needs pairs)");
    check(s.epochs >= 1, "epoch count must be at least 1");
    check(s.decay_factor > 0.0 && s.decay_factor <= 1.0, "decay factor must be in (0,1]");
    for (size_t i = 0; i + 1 < s.decay_epochs.size(); ++i)
        check(s.decay_epochs[i] < s.decay_epochs[i + 1], "decay epochs must be strictly increasing");
    for (int64_t m : s.decay_epochs) check(m >= 1, "decay epochs are 1-indexed");
}

std::vector<double> gather_targets(const Dataset& ds, const std::vector<int64_t>& refs) {
    std::vector<double> out;
    out.reserve(refs.size());
    for (int64_t r : refs) {
        check(r >= 0 && r < static_cast<int64_t>(ds.records.size()),
              "record index " + std::to_string(r) + " is out of range for dataset '" + ds.id + "'");
        out.push_back(ds.records[static_cast<size_t>(r)].mos_norm);
    }
    return out;
}

}  // namespace

namespace detail {

TrainResult run_training(Module& model, const PredictFn& val_predict, ImageStore& store,
                         const std::vector<int64_t>& train_refs,
                         const std::vector<int64_t>& val_refs, const TrainSchedule& sched,
                         const std::string& ckpt_path, const std::string& log_path,
                         const KVMap& meta, const BatchLossFn& batch_loss) {
    validate_schedule(sched);
    check(!train_refs.empty(), "training needs a non-empty train split");
    check(train_refs.size() >= 2, "training needs at least two records (the ranking loss needs pairs)");
    check(!ckpt_path.empty(), "training needs a checkpoint path");
    const Dataset& ds = store.dataset();
    gather_targets(ds, train_refs);  // range-checks every ref up front

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::trunc);
        check(log.is_open(), "cannot open training log '" + log_path + "' for writing");
    }
    auto log_line = [&](const nlohmann::ordered_json& j) {
        if (log.is_open()) log << j.dump() << '\n' << std::flush;
    };

    auto save_snapshot = [&](int64_t step, std::optional<double> val_srcc) {
        KVMap m2 = meta;
        m2["meta.best_step"] = std::to_string(step);
        if (val_srcc) m2["meta.best_val_srcc"] = std::to_string(*val_srcc);
        save_module(ckpt_path, model, m2);
    };
    save_snapshot(-1, std::nullopt);  // divergence before the first validation restores this

    const std::vector<int64_t>& vrefs = val_refs.empty() ? train_refs : val_refs;
    TrainResult result;
    result.checkpoint_path = ckpt_path;
    bool have_best = false;

    auto run_validation = [&](int64_t step) {
        std::optional<std::pair<double, double>> metrics;
        try {
            metrics = evaluate_split(val_predict, store, vrefs, sched.batch);
        } catch (const Error&) {
            // constant predictions leave the correlations undefined; skip
        }
        nlohmann::ordered_json j{{"step", step}};
        if (metrics) {
            j["val_plcc"] = metrics->first;
            j["val_srcc"] = metrics->second;
            if (!have_best || metrics->second > result.best_val_srcc) {
                have_best = true;
                result.best_val_srcc = metrics->second;
                result.best_step = step;
                save_snapshot(step, metrics->second);
            }
        } else {
            j["val_plcc"] = nullptr;
            j["val_srcc"] = nullptr;
        }
        log_line(j);
    };

    Adam opt(trainable_parameters(model));
    Rng shuffle_rng(sched.seed ^ fnv1a64("shuffle", 7));
    int64_t gstep = 0;
    int64_t last_validated = -1;
    bool done = false;
    for (int64_t epoch = 1; epoch <= sched.epochs && !done; ++epoch) {
        const double lr = lr_at_epoch(sched, epoch);
        std::vector<int64_t> order = train_refs;
        shuffle_rng.shuffle(order);
        for (size_t off = 0; off < order.size() && !done; off += static_cast<size_t>(sched.batch)) {
            const size_t end = std::min(order.size(), off + static_cast<size_t>(sched.batch));
            std::vector<int64_t> chunk(order.begin() + static_cast<int64_t>(off),
                                       order.begin() + static_cast<int64_t>(end));
            if (chunk.size() < 2) continue;  // a lone trailing record cannot form a pair

            Tensor images = store.batch(chunk);
            Tensor targets = Tensor::from_vector({static_cast<int64_t>(chunk.size())},
                                                 gather_targets(ds, chunk));
            StepLoss sl;
            try {
                model.zero_grad();
                sl = batch_loss(images, targets, chunk);
                check(std::isfinite(sl.loss.data()[0]), "non-finite loss");
                sl.loss.backward();
                opt.step(lr);
            } catch (const Error& e) {
                // blowups surface as non-finite activations or losses anywhere
                // in the step; roll back to the last snapshot that worked
                load_module(ckpt_path, model);
                fail("training diverged at step " + std::to_string(gstep + 1) + " (" + e.what() +
                     "); last good checkpoint kept at '" + ckpt_path + "'");
            }
            const double lval = sl.loss.data()[0];
            ++gstep;
            result.final_loss = lval;

            nlohmann::ordered_json j{{"step", gstep}, {"epoch", epoch}, {"lr", lr},
                                     {"loss", lval},  {"mse", sl.mse},  {"margin", sl.margin}};
            if (sl.distill >= 0.0) j["distill"] = sl.distill;
            log_line(j);

            if (sched.validation_step > 0 && gstep % sched.validation_step == 0) {
                run_validation(gstep);
                last_validated = gstep;
            }
            if (sched.max_steps > 0 && gstep >= sched.max_steps) done = true;
        }
    }
    if (last_validated != gstep) run_validation(gstep);

    if (have_best) {
        load_module(ckpt_path, model);  // hand back the selected weights
    } else {
        save_snapshot(gstep, std::nullopt);  // no usable validation: the final weights win
        result.best_step = gstep;
    }
    result.steps = gstep;
    return result;
}

}  // namespace detail

TrainResult train_teacher(TeacherModel& model, const Dataset& ds,
                          const std::vector<int64_t>& train_refs,
                          const std::vector<int64_t>& val_refs, const TrainSchedule& sched,
                          double lambda, const std::string& ckpt_path,
                          const std::string& log_path, const KVMap& meta) {
    ImageStore store(ds, model.config().unet.image_size);
    Rng noise_rng(sched.seed ^ fnv1a64("noise", 5));
    PredictFn predict = [&](const Tensor& images) { return model.predict_scores(images); };
    detail::BatchLossFn batch_loss = [&](const Tensor& images, const Tensor& targets,
                                         const std::vector<int64_t>&) {
        TeacherOutput out = model.forward_quality(images, /*fresh_noise=*/true, &noise_rng);
        std::vector<double> pv(out.scores.data(), out.scores.data() + out.scores.numel());
        std::vector<double> tv(targets.data(), targets.data() + targets.numel());
        detail::StepLoss sl;
        sl.loss = total_loss(out.scores, targets, lambda);
        sl.mse = mse_loss_ref(pv, tv);
        sl.margin = margin_loss_ref(pv, tv, lambda);
        return sl;
    };
    return detail::run_training(model, predict, store, train_refs, val_refs, sched, ckpt_path,
                                log_path, meta, batch_loss);
}

}  // namespace dpiqa
