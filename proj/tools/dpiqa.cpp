// Command-line front end: teacher training, student distillation, scoring,
// evaluation protocols, and saliency emission over one shared config.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpiqa/checkpoint.hpp"
#include "dpiqa/conditioning.hpp"
#include "dpiqa/dataset.hpp"
#include "dpiqa/distill.hpp"
#include "dpiqa/eval.hpp"
#include "dpiqa/image.hpp"
#include "dpiqa/imageio.hpp"
#include "dpiqa/model.hpp"
#include "dpiqa/student.hpp"
#include "dpiqa/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int64_t kEvalBatch = 8;

struct LoadedModel {
    std::string role;
    dpiqa::RunConfig run;
    std::unique_ptr<dpiqa::TeacherModel> teacher;
    std::unique_ptr<dpiqa::StudentModel> student;
    uint64_t hash = 0;
    int64_t image_size = 0;

    dpiqa::PredictFn predict() {
        if (teacher) return [this](const dpiqa::Tensor& x) { return teacher->predict_scores(x); };
        return [this](const dpiqa::Tensor& x) { return student->predict_scores(x); };
    }
    // gradient-capable scalar path for pixel attribution
    dpiqa::PredictFn score_fn() {
        if (teacher)
            return [this](const dpiqa::Tensor& x) {
                return teacher->forward_quality(x, false, nullptr).scores;
            };
        return [this](const dpiqa::Tensor& x) { return student->forward_quality(x).scores; };
    }
};

// Rebuilds the model a checkpoint was saved from, using the run config
// embedded in its metadata; no external template or config file is needed.
LoadedModel load_model(const std::string& path) {
    dpiqa::Checkpoint cp = dpiqa::load_checkpoint(path);
    auto role_it = cp.meta.find("meta.role");
    dpiqa::check(role_it != cp.meta.end(),
                 "checkpoint '" + path + "' carries no model role metadata");
    dpiqa::KVMap kv;
    for (const auto& [k, v] : cp.meta)
        if (k.rfind("meta.", 0) != 0) kv[k] = v;

    LoadedModel lm;
    lm.role = role_it->second;
    lm.run = dpiqa::RunConfig::from_kv(kv);
    lm.hash = cp.content_hash;
    lm.image_size = lm.run.image_size;
    if (lm.role == "teacher") {
        auto k_it = cp.meta.find("meta.template_k");
        dpiqa::check(k_it != cp.meta.end(),
                     "teacher checkpoint '" + path + "' carries no template size metadata");
        const int64_t k = std::stoll(k_it->second);
        lm.teacher = std::make_unique<dpiqa::TeacherModel>(
            dpiqa::teacher_config_from(lm.run), dpiqa::Tensor::zeros({k, lm.run.cond_dim}));
        dpiqa::load_module(path, *lm.teacher);
    } else if (lm.role == "student") {
        lm.student = std::make_unique<dpiqa::StudentModel>(dpiqa::student_config_from(lm.run));
        dpiqa::load_module(path, *lm.student);
    } else {
        dpiqa::fail("checkpoint '" + path + "' has unknown role '" + lm.role + "'");
    }
    return lm;
}

// Tail of the (already shuffled) train refs becomes the held-out validation
// slice; tiny sets skip the carve and validate on the train records.
void carve_validation(std::vector<int64_t>& train, std::vector<int64_t>& val) {
    const size_t hold = train.size() / 10;
    if (hold >= 2 && train.size() - hold >= 2) {
        val.assign(train.end() - static_cast<int64_t>(hold), train.end());
        train.resize(train.size() - hold);
    }
}

std::vector<uint64_t> limit_seeds(const std::vector<uint64_t>& seeds, int64_t splits) {
    if (splits <= 0 || splits >= static_cast<int64_t>(seeds.size())) return seeds;
    return {seeds.begin(), seeds.begin() + splits};
}

void emit(const ordered_json& j, const std::string& path) {
    const std::string text = j.dump(2) + "\n";
    std::cout << text;
    std::ofstream out(path, std::ios::trunc);
    dpiqa::check(out.is_open(), "cannot open '" + path + "' for writing");
    out << text;
}

int cmd_train_teacher(const dpiqa::RunConfig& run, const std::string& manifest, int64_t splits) {
    dpiqa::Dataset ds = dpiqa::load_manifest(manifest);
    dpiqa::PromptTemplate tpl = dpiqa::load_template_file(run.template_file);
    const auto seeds = limit_seeds(run.split_seeds, splits);
    const auto plans = dpiqa::make_splits(static_cast<int64_t>(ds.records.size()), seeds);
    const dpiqa::TrainSchedule sched = dpiqa::teacher_schedule_from(run, ds.id);
    fs::create_directories(run.output_dir);

    dpiqa::EvalReport report;
    report.dataset_id = ds.id;
    report.mode = "within";
    uint64_t combo = dpiqa::fnv1a64("protocol", 8);
    for (const auto& plan : plans) {
        auto model = dpiqa::build_teacher(run);
        model->apply_train_scope(run.train_scope);
        dpiqa::KVMap meta = dpiqa::run_meta(run, tpl, "teacher");
        meta["meta.dataset_id"] = ds.id;
        meta["meta.split_seed"] = std::to_string(plan.seed);

        std::vector<int64_t> train = plan.train_refs, val;
        carve_validation(train, val);
        const std::string tag = run.output_dir + "/teacher_split" + std::to_string(plan.seed);
        dpiqa::train_teacher(*model, ds, train, val, sched, run.lambda, tag + ".ckpt",
                             tag + "_log.jsonl", meta);

        dpiqa::ImageStore store(ds, run.image_size);
        dpiqa::PredictFn predict = [&](const dpiqa::Tensor& x) {
            return model->predict_scores(x);
        };
        auto [p, s] = dpiqa::evaluate_split(predict, store, plan.test_refs, kEvalBatch);
        report.splits.push_back({plan.seed, p, s});
        const uint64_t h = dpiqa::checkpoint_hash(tag + ".ckpt");
        combo = dpiqa::fnv1a64(&h, sizeof(h), combo);
    }
    report.checkpoint = dpiqa::hash_hex(combo);
    report.finalize();
    std::cout << report.to_json();
    dpiqa::save_report(run.output_dir + "/teacher_eval.json", report);
    return 0;
}

int cmd_distill(const dpiqa::RunConfig& run, const std::string& manifest,
                const std::string& teacher_ckpt, const std::string& cache_dir) {
    dpiqa::Dataset ds = dpiqa::load_manifest(manifest);
    dpiqa::Checkpoint cp = dpiqa::load_checkpoint(teacher_ckpt);
    dpiqa::check_teacher_meta(cp.meta, run);
    LoadedModel tm = load_model(teacher_ckpt);
    dpiqa::PromptTemplate tpl = dpiqa::load_template_file(run.template_file);
    fs::create_directories(run.output_dir);

    const auto plans =
        dpiqa::make_splits(static_cast<int64_t>(ds.records.size()), {run.split_seeds.front()});
    const auto& plan = plans.front();
    std::vector<int64_t> train = plan.train_refs, val;
    carve_validation(train, val);

    dpiqa::StudentModel student(dpiqa::student_config_from(run));
    const dpiqa::TrainSchedule sched = dpiqa::student_schedule_from(run, ds.id);
    dpiqa::KVMap meta = dpiqa::run_meta(run, tpl, "student");
    meta["meta.dataset_id"] = ds.id;
    meta["meta.split_seed"] = std::to_string(plan.seed);
    meta["meta.teacher_checkpoint"] = dpiqa::hash_hex(cp.content_hash);

    const std::string tag = run.output_dir + "/student_split" + std::to_string(plan.seed);
    dpiqa::StudentTrainResult res =
        dpiqa::train_student(student, *tm.teacher, ds, train, val, sched, run.lambda, 1.0,
                             tag + ".ckpt", tag + "_log.jsonl", meta, cache_dir, cp.content_hash);

    dpiqa::ImageStore store(ds, run.image_size);
    dpiqa::PredictFn teacher_predict = tm.predict();
    dpiqa::PredictFn student_predict = [&](const dpiqa::Tensor& x) {
        return student.predict_scores(x);
    };
    auto [tp, ts] = dpiqa::evaluate_split(teacher_predict, store, plan.test_refs, kEvalBatch);
    auto [sp, ss] = dpiqa::evaluate_split(student_predict, store, plan.test_refs, kEvalBatch);

    ordered_json j;
    j["dataset_id"] = ds.id;
    j["split_seed"] = plan.seed;
    j["teacher"] = ordered_json{
        {"checkpoint", dpiqa::hash_hex(cp.content_hash)}, {"plcc", tp}, {"srcc", ts}};
    j["student"] = ordered_json{{"checkpoint", dpiqa::hash_hex(dpiqa::checkpoint_hash(tag + ".ckpt"))},
                                {"plcc", sp},
                                {"srcc", ss},
                                {"initial_distill", res.initial_distill},
                                {"final_distill", res.final_distill}};
    emit(j, run.output_dir + "/distill_report.json");
    return 0;
}

int cmd_predict(const dpiqa::RunConfig& run, const std::string& ckpt,
                const std::vector<std::string>& images, bool saliency) {
    LoadedModel lm = load_model(ckpt);
    fs::create_directories(run.output_dir);
    ordered_json records = ordered_json::array();
    size_t ok = 0;
    for (const auto& path : images) {
        ordered_json rec{{"image", path}};
        try {
            dpiqa::ImageU8 raw = dpiqa::load_image(path);
            dpiqa::Tensor x =
                dpiqa::stack_images({dpiqa::preprocess_image(raw, lm.image_size)});
            {
                dpiqa::NoGradGuard guard;
                rec["score"] = lm.predict()(x).data()[0];
            }
            if (saliency) {
                dpiqa::Tensor map = dpiqa::saliency_map(lm.score_fn(), x);
                const std::string png =
                    run.output_dir + "/" + fs::path(path).stem().string() + "_saliency.png";
                dpiqa::save_saliency_png(png, map);
                rec["saliency"] = png;
            }
            ++ok;
        } catch (const dpiqa::Error& e) {
            rec["error"] = e.what();
        }
        records.push_back(rec);
    }
    ordered_json j{{"checkpoint", dpiqa::hash_hex(lm.hash)},
                   {"role", lm.role},
                   {"predictions", records}};
    emit(j, run.output_dir + "/predictions.json");
    return ok == 0 ? 2 : 0;
}

int cmd_eval(const dpiqa::RunConfig& run, const std::string& ckpt, const std::string& manifest,
             const std::string& manifest_b, int64_t splits) {
    LoadedModel lm = load_model(ckpt);
    dpiqa::Dataset a = dpiqa::load_manifest(manifest);
    fs::create_directories(run.output_dir);
    dpiqa::PredictFn predict = lm.predict();

    dpiqa::EvalReport report;
    report.checkpoint = dpiqa::hash_hex(lm.hash);
    if (manifest_b.empty()) {
        report.dataset_id = a.id;
        report.mode = "within";
        const auto seeds = limit_seeds(run.split_seeds, splits);
        const auto plans = dpiqa::make_splits(static_cast<int64_t>(a.records.size()), seeds);
        dpiqa::ImageStore store(a, lm.image_size);
        for (const auto& plan : plans) {
            auto [p, s] = dpiqa::evaluate_split(predict, store, plan.test_refs, kEvalBatch);
            report.splits.push_back({plan.seed, p, s});
        }
    } else {
        dpiqa::Dataset b = dpiqa::load_manifest(manifest_b);
        report.dataset_id = b.id;
        report.mode = "cross_dataset";
        auto [p, s] = dpiqa::cross_dataset_eval(predict, a.id, b, lm.image_size, kEvalBatch);
        report.splits.push_back({0, p, s});
    }
    report.finalize();
    std::cout << report.to_json();
    dpiqa::save_report(run.output_dir + "/eval_report.json", report);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diffusion-prior blind image quality assessment workbench"};
    app.require_subcommand(1);
    std::string config_path;
    bool no_env = false;
    app.add_option("--config", config_path, "key=value run configuration file");
    app.add_flag("--no-env", no_env, "ignore DPIQA_* environment overrides");

    std::string manifest, manifest_b, teacher_ckpt, ckpt, cache_dir, output_dir;
    std::vector<std::string> images;
    int64_t splits = 0, max_steps = -1;
    int64_t seed = -1;
    bool saliency = false;

    auto add_shared = [&](CLI::App* sub) {
        sub->add_option("--output-dir", output_dir, "directory for checkpoints and reports");
        sub->add_option("--seed", seed, "training seed override");
        sub->add_option("--max-steps", max_steps, "cap on optimizer steps (smoke runs)");
    };

    CLI::App* sub_train = app.add_subcommand("train-teacher", "train teachers over seeded splits");
    sub_train->add_option("--manifest", manifest, "dataset manifest CSV")->required();
    sub_train->add_option("--splits", splits, "how many of the configured split seeds to run");
    add_shared(sub_train);

    CLI::App* sub_distill = app.add_subcommand("distill", "train a student against a teacher");
    sub_distill->add_option("--manifest", manifest, "dataset manifest CSV")->required();
    sub_distill->add_option("--teacher", teacher_ckpt, "teacher checkpoint")->required();
    sub_distill->add_option("--cache-dir", cache_dir, "on-disk teacher feature cache");
    add_shared(sub_distill);

    CLI::App* sub_predict = app.add_subcommand("predict", "score images with a checkpoint");
    sub_predict->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    sub_predict->add_option("images", images, "image files to score")->required();
    sub_predict->add_flag("--saliency", saliency, "also write pixel-attribution maps");
    add_shared(sub_predict);

    CLI::App* sub_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    sub_eval->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    sub_eval->add_option("--manifest", manifest, "dataset manifest CSV")->required();
    sub_eval->add_option("--manifest-b", manifest_b, "second manifest: zero-shot cross-dataset mode");
    sub_eval->add_option("--splits", splits, "how many of the configured split seeds to score");
    add_shared(sub_eval);

    CLI::App* sub_sal = app.add_subcommand("saliency", "write pixel-attribution maps for images");
    sub_sal->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    sub_sal->add_option("images", images, "image files to explain")->required();
    add_shared(sub_sal);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // bad flags and missing options are validation failures
    }

    try {
        dpiqa::RunConfig run = dpiqa::load_run_config(config_path, !no_env);
        if (!output_dir.empty()) run.output_dir = output_dir;
        if (seed >= 0) run.train_seed = static_cast<uint64_t>(seed);
        if (max_steps >= 0) run.max_steps = max_steps;

        if (sub_train->parsed()) return cmd_train_teacher(run, manifest, splits);
        if (sub_distill->parsed()) return cmd_distill(run, manifest, teacher_ckpt, cache_dir);
        if (sub_predict->parsed()) return cmd_predict(run, ckpt, images, saliency);
        if (sub_eval->parsed()) return cmd_eval(run, ckpt, manifest, manifest_b, splits);
        if (sub_sal->parsed()) return cmd_predict(run, ckpt, images, true);
        return 1;
    } catch (const dpiqa::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 1;
    } catch (const dpiqa::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
