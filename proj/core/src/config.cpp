#include "dpiqa/config.hpp"

#include <cctype>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dpiqa/common.hpp"

extern char** environ;

namespace dpiqa {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

double parse_double(const std::string& key, const std::string& val) {
    try {
        size_t pos = 0;
        const double v = std::stod(val, &pos);
        if (pos != val.size() || !std::isfinite(v)) fail_config(key, ": bad number '", val, "'");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail_config(key, ": bad number '", val, "'");
    }
}

int64_t parse_i64(const std::string& key, const std::string& val) {
    try {
        size_t pos = 0;
        const long long v = std::stoll(val, &pos);
        if (pos != val.size()) fail_config(key, ": bad integer '", val, "'");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail_config(key, ": bad integer '", val, "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& val) {
    try {
        size_t pos = 0;
        const unsigned long long v = std::stoull(val, &pos);
        if (pos != val.size()) fail_config(key, ": bad integer '", val, "'");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail_config(key, ": bad integer '", val, "'");
    }
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& val, Parse parse) {
    std::vector<T> out;
    if (trim(val) == "none" || trim(val).empty()) return out;
    std::istringstream ss(val);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse(key, trim(item)));
    return out;
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
    if (v.empty()) return "none";
    std::ostringstream ss;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) ss << ",";
        ss << v[i];
    }
    return ss.str();
}

void validate_decay_field(const std::string& key, const std::string& field) {
    if (field == "auto" || field == "none") return;
    auto list = parse_list<int64_t>(key, field, parse_i64);
    for (size_t i = 0; i < list.size(); ++i) {
        if (list[i] < 1) fail_config(key, ": decay epoch ", list[i], " must be >= 1");
        if (i > 0 && list[i] <= list[i - 1])
            fail_config(key, ": decay epochs must be strictly increasing");
    }
}

void validate_step_field(const std::string& key, const std::string& field) {
    if (field == "auto") return;
    if (parse_i64(key, field) < 1) fail_config(key, ": validation step must be >= 1");
}

}  // namespace

KVMap parse_kv_text(const std::string& text) {
    KVMap kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            fail_config("config line ", line_no, ": expected key=value, got '", t, "'");
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) fail_config("config line ", line_no, ": empty key");
        kv[key] = trim(t.substr(eq + 1));
    }
    return kv;
}

std::string serialize_kv(const KVMap& kv) {
    std::ostringstream out;
    for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
    return out.str();
}

KVMap load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) fail_config("config: cannot open '", path, "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_kv_text(ss.str());
}

void apply_env_overrides(KVMap& kv, const std::string& prefix) {
    for (char** e = environ; *e != nullptr; ++e) {
        const std::string entry = *e;
        if (entry.compare(0, prefix.size(), prefix) != 0) continue;
        const size_t eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string key = entry.substr(prefix.size(), eq - prefix.size());
        for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        size_t pos;
        while ((pos = key.find("__")) != std::string::npos) key.replace(pos, 2, ".");
        kv[key] = entry.substr(eq + 1);
    }
}

RunConfig RunConfig::from_kv(const KVMap& kv) {
    RunConfig c;
    for (const auto& [key, val] : kv) {
        if (key == "backbone.kind") {
            c.backbone_kind = val;
        } else if (key == "backbone.weights") {
            c.backbone_weights = val;
        } else if (key == "backbone.latent_channels") {
            c.latent_channels = parse_i64(key, val);
        } else if (key == "backbone.channels") {
            c.unet_channels = parse_list<int64_t>(key, val, parse_i64);
        } else if (key == "backbone.image_size") {
            c.image_size = parse_i64(key, val);
        } else if (key == "model.timestep") {
            c.timestep = parse_i64(key, val);
        } else if (key == "model.seed") {
            c.model_seed = parse_u64(key, val);
        } else if (key == "cond.dim") {
            c.cond_dim = parse_i64(key, val);
        } else if (key == "cond.hidden") {
            c.cond_hidden = parse_i64(key, val);
        } else if (key == "cond.template_file") {
            c.template_file = val;
        } else if (key == "cond.encoder_seed") {
            c.encoder_seed = parse_u64(key, val);
        } else if (key == "decoder.unify_channels") {
            c.qfd_unify = parse_i64(key, val);
        } else if (key == "decoder.reduce_channels") {
            c.qfd_reduce = parse_list<int64_t>(key, val, parse_i64);
        } else if (key == "decoder.head_hidden") {
            c.head_hidden = parse_list<int64_t>(key, val, parse_i64);
        } else if (key == "loss.lambda") {
            c.lambda = parse_double(key, val);
        } else if (key == "teacher.lr") {
            c.teacher_lr = parse_double(key, val);
        } else if (key == "teacher.batch") {
            c.teacher_batch = parse_i64(key, val);
        } else if (key == "teacher.epochs") {
            c.teacher_epochs = parse_i64(key, val);
        } else if (key == "teacher.decay_epochs") {
            c.teacher_decay = val;
        } else if (key == "teacher.validation_step") {
            c.teacher_validation_step = val;
        } else if (key == "student.lr") {
            c.student_lr = parse_double(key, val);
        } else if (key == "student.batch") {
            c.student_batch = parse_i64(key, val);
        } else if (key == "student.epochs") {
            c.student_epochs = parse_i64(key, val);
        } else if (key == "student.decay_epochs") {
            c.student_decay = val;
        } else if (key == "student.validation_step") {
            c.student_validation_step = val;
        } else if (key == "student.channels") {
            c.student_channels = parse_list<int64_t>(key, val, parse_i64);
        } else if (key == "student.seed") {
            c.student_seed = parse_u64(key, val);
        } else if (key == "train.decay_factor") {
            c.decay_factor = parse_double(key, val);
        } else if (key == "train.scope") {
            c.train_scope = val;
        } else if (key == "train.seed") {
            c.train_seed = parse_u64(key, val);
        } else if (key == "train.max_steps") {
            c.max_steps = parse_i64(key, val);
        } else if (key == "split.seeds") {
            c.split_seeds = parse_list<uint64_t>(key, val, parse_u64);
        } else if (key == "output.dir") {
            c.output_dir = val;
        } else {
            fail_config("unknown config key '", key, "'");
        }
    }

    if (c.backbone_kind != "mini" && c.backbone_kind != "pretrained")
        fail_config("backbone.kind: must be mini or pretrained, got '", c.backbone_kind, "'");
    if (c.latent_channels < 1) fail_config("backbone.latent_channels: must be >= 1");
    if (c.unet_channels.size() != 4)
        fail_config("backbone.channels: need exactly 4 stage widths, got ",
                    c.unet_channels.size());
    for (auto w : c.unet_channels)
        if (w < 1) fail_config("backbone.channels: widths must be >= 1");
    if (c.image_size < 64 || c.image_size % 64 != 0)
        fail_config("backbone.image_size: must be a positive multiple of 64, got ", c.image_size);
    if (c.timestep < 1) fail_config("model.timestep: must be >= 1");
    if (c.cond_dim < 1) fail_config("cond.dim: must be >= 1");
    if (c.cond_hidden < 0) fail_config("cond.hidden: must be >= 0");
    if (c.qfd_unify < 1) fail_config("decoder.unify_channels: must be >= 1");
    if (c.qfd_reduce.empty() || c.qfd_reduce.back() != 8)
        fail_config("decoder.reduce_channels: must end at 8 channels");
    for (auto w : c.qfd_reduce)
        if (w < 1) fail_config("decoder.reduce_channels: widths must be >= 1");
    if (c.head_hidden.size() != 2)
        fail_config("decoder.head_hidden: need exactly 2 hidden widths, got ",
                    c.head_hidden.size());
    for (auto w : c.head_hidden)
        if (w < 1) fail_config("decoder.head_hidden: widths must be >= 1");
    if (c.lambda < 0.0 || c.lambda > 1.0) fail_config("loss.lambda: must be in [0,1]");
    if (c.teacher_lr <= 0.0) fail_config("teacher.lr: must be > 0");
    if (c.teacher_batch < 2) fail_config("teacher.batch: must be >= 2");
    if (c.teacher_epochs < 1) fail_config("teacher.epochs: must be >= 1");
    validate_decay_field("teacher.decay_epochs", c.teacher_decay);
    validate_step_field("teacher.validation_step", c.teacher_validation_step);
    if (c.student_lr <= 0.0) fail_config("student.lr: must be > 0");
    if (c.student_batch < 2) fail_config("student.batch: must be >= 2");
    if (c.student_epochs < 1) fail_config("student.epochs: must be >= 1");
    validate_decay_field("student.decay_epochs", c.student_decay);
    validate_step_field("student.validation_step", c.student_validation_step);
    if (c.student_channels.size() != 4)
        fail_config("student.channels: need exactly 4 stage widths, got ",
                    c.student_channels.size());
    for (auto w : c.student_channels)
        if (w < 1) fail_config("student.channels: widths must be >= 1");
    if (c.decay_factor <= 0.0 || c.decay_factor > 1.0)
        fail_config("train.decay_factor: must be in (0,1]");
    if (c.train_scope != "full" && c.train_scope != "adapters")
        fail_config("train.scope: must be full or adapters, got '", c.train_scope, "'");
    if (c.max_steps < 0) fail_config("train.max_steps: must be >= 0");
    if (c.split_seeds.empty()) fail_config("split.seeds: need at least one seed");
    if (c.template_file.empty()) fail_config("cond.template_file: must not be empty");
    if (c.output_dir.empty()) fail_config("output.dir: must not be empty");
    return c;
}

KVMap RunConfig::to_kv() const {
    KVMap kv;
    kv["backbone.kind"] = backbone_kind;
    kv["backbone.weights"] = backbone_weights;
    kv["backbone.latent_channels"] = std::to_string(latent_channels);
    kv["backbone.channels"] = fmt_list(unet_channels);
    kv["backbone.image_size"] = std::to_string(image_size);
    kv["model.timestep"] = std::to_string(timestep);
    kv["model.seed"] = std::to_string(model_seed);
    kv["cond.dim"] = std::to_string(cond_dim);
    kv["cond.hidden"] = std::to_string(cond_hidden);
    kv["cond.template_file"] = template_file;
    kv["cond.encoder_seed"] = std::to_string(encoder_seed);
    kv["decoder.unify_channels"] = std::to_string(qfd_unify);
    kv["decoder.reduce_channels"] = fmt_list(qfd_reduce);
    kv["decoder.head_hidden"] = fmt_list(head_hidden);
    kv["loss.lambda"] = fmt_double(lambda);
    kv["teacher.lr"] = fmt_double(teacher_lr);
    kv["teacher.batch"] = std::to_string(teacher_batch);
    kv["teacher.epochs"] = std::to_string(teacher_epochs);
    kv["teacher.decay_epochs"] = teacher_decay;
    kv["teacher.validation_step"] = teacher_validation_step;
    kv["student.lr"] = fmt_double(student_lr);
    kv["student.batch"] = std::to_string(student_batch);
    kv["student.epochs"] = std::to_string(student_epochs);
    kv["student.decay_epochs"] = student_decay;
    kv["student.validation_step"] = student_validation_step;
    kv["student.channels"] = fmt_list(student_channels);
    kv["student.seed"] = std::to_string(student_seed);
    kv["train.decay_factor"] = fmt_double(decay_factor);
    kv["train.scope"] = train_scope;
    kv["train.seed"] = std::to_string(train_seed);
    kv["train.max_steps"] = std::to_string(max_steps);
    kv["split.seeds"] = fmt_list(split_seeds);
    kv["output.dir"] = output_dir;
    return kv;
}

RunConfig load_run_config(const std::string& path, bool use_env) {
    KVMap kv;
    if (!path.empty()) kv = load_config_file(path);
    if (use_env) apply_env_overrides(kv);
    return RunConfig::from_kv(kv);
}

std::vector<int64_t> default_decay_epochs(const std::string& role,
                                          const std::string& dataset_id) {
    check(role == "teacher" || role == "student", "default_decay_epochs: unknown role '", role,
          "'");
    if (role == "teacher") {
        if (dataset_id == "koniq") return {5};
        if (dataset_id == "livefb") return {2};
        return {};  // clive, spaq, everything else: no decay
    }
    if (dataset_id == "clive") return {10, 25};
    if (dataset_id == "koniq") return {5};
    if (dataset_id == "livefb") return {4};
    if (dataset_id == "spaq") return {6};
    return {};
}

int64_t default_validation_step(const std::string& dataset_id) {
    return dataset_id == "clive" ? 50 : 250;
}

std::vector<int64_t> resolve_decay_epochs(const std::string& field, const std::string& role,
                                          const std::string& dataset_id) {
    if (field == "auto") return default_decay_epochs(role, dataset_id);
    validate_decay_field("decay_epochs", field);
    return parse_list<int64_t>("decay_epochs", field, parse_i64);
}

int64_t resolve_validation_step(const std::string& field, const std::string& dataset_id) {
    if (field == "auto") return default_validation_step(dataset_id);
    validate_step_field("validation_step", field);
    return parse_i64("validation_step", field);
}

}  // namespace dpiqa
