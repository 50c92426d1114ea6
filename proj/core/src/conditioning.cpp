#include "dpiqa/conditioning.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace dpiqa {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

void check_list(const std::vector<std::string>& list, const std::string& name,
                bool needs_other) {
    check(!list.empty(), "template: ", name, " list is empty");
    std::set<std::string> seen;
    for (const auto& e : list) {
        check(!e.empty(), "template: ", name, " contains an empty entry");
        check(seen.insert(e).second, "template: duplicate ", name, " entry '", e, "'");
    }
    if (needs_other)
        check(seen.count("other") == 1, "template: ", name, " must contain the entry 'other'");
}

std::string substitute(const std::string& scene, const std::string& distortion,
                       const std::string& quality) {
    std::string s = kPromptPattern;
    const auto replace = [&s](const std::string& slot, const std::string& word) {
        const size_t pos = s.find(slot);
        s = s.substr(0, pos) + word + s.substr(pos + slot.size());
    };
    replace("{scenes}", scene);
    replace("{distortion type}", distortion);
    replace("{quality level}", quality);
    return s;
}

}  // namespace

void validate_template(const PromptTemplate& tpl) {
    check_list(tpl.scenes, "scenes", /*needs_other=*/true);
    check_list(tpl.distortions, "distortions", /*needs_other=*/true);
    check_list(tpl.quality_levels, "quality", /*needs_other=*/false);
}

PromptTemplate load_template_file(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "template: cannot open '", path, "'");
    PromptTemplate tpl;
    std::vector<std::string>* section = nullptr;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t == "[scenes]") {
            section = &tpl.scenes;
        } else if (t == "[distortions]") {
            section = &tpl.distortions;
        } else if (t == "[quality]") {
            section = &tpl.quality_levels;
        } else if (t.front() == '[') {
            fail("template: '", path, "' line ", line_no, ": unknown section ", t);
        } else {
            check(section != nullptr, "template: '", path, "' line ", line_no,
                  ": entry before any section header");
            section->push_back(t);
        }
    }
    validate_template(tpl);
    return tpl;
}

std::vector<std::string> expand_templates(const PromptTemplate& tpl) {
    validate_template(tpl);
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(tpl.k()));
    for (const auto& s : tpl.scenes)
        for (const auto& d : tpl.distortions)
            for (const auto& q : tpl.quality_levels) out.push_back(substitute(s, d, q));
    return out;
}

uint64_t template_hash(const PromptTemplate& tpl) {
    uint64_t h = fnv1a64("template", 8);
    auto mix = [&h](const std::vector<std::string>& words) {
        for (const auto& w : words) {
            h = fnv1a64(w.data(), w.size(), h);
            h = fnv1a64("\x1f", 1, h);  // separator so list boundaries matter
        }
        h = fnv1a64("\x1e", 1, h);
    };
    mix(tpl.scenes);
    mix(tpl.distortions);
    mix(tpl.quality_levels);
    return h;
}

std::vector<std::vector<double>> HashTextEncoder::encode_tokens(
    const std::string& sentence) const {
    std::vector<std::vector<double>> tokens;
    std::istringstream ss(sentence);
    std::string tok;
    while (ss >> tok) {
        const uint64_t h = fnv1a64(tok.data(), tok.size(), seed_ ^ 14695981039346656037ull);
        Rng rng(h);
        tokens.push_back(rng.normal_vec(static_cast<size_t>(d_),
                                        1.0 / std::sqrt(static_cast<double>(d_))));
    }
    return tokens;
}

std::vector<double> embed_sentence(const TextEncoder& enc, const std::string& sentence) {
    const auto tokens = enc.encode_tokens(sentence);
    check(!tokens.empty(), "embed_sentence: no tokens in \"", sentence, "\"");
    const size_t d = static_cast<size_t>(enc.dim());
    std::vector<double> mean(d, 0.0);
    for (const auto& t : tokens) {
        check(t.size() == d, "embed_sentence: encoder returned width ", t.size(), ", expected ",
              d);
        for (size_t i = 0; i < d; ++i) mean[i] += t[i];
    }
    const double inv = 1.0 / static_cast<double>(tokens.size());
    for (auto& v : mean) v *= inv;
    return mean;
}

Tensor build_condition(const TextEncoder& enc, const PromptTemplate& tpl) {
    const auto sentences = expand_templates(tpl);
    const int64_t k = static_cast<int64_t>(sentences.size());
    const int64_t d = enc.dim();
    std::vector<double> rows(static_cast<size_t>(k * d));
    for (int64_t i = 0; i < k; ++i) {
        std::vector<double> e;
        try {
            e = embed_sentence(enc, sentences[static_cast<size_t>(i)]);
        } catch (const Error& err) {
            fail("build_condition: sentence ", i, ": ", err.what());
        }
        std::copy(e.begin(), e.end(), rows.begin() + i * d);
    }
    return Tensor::from_vector({k, d}, std::move(rows));
}

TextAdapter::TextAdapter(int64_t d, int64_t hidden, Rng& rng)
    : lin1(d, hidden, rng), lin2(hidden, d, rng, Init::Zero) {
    register_child("lin1", &lin1);
    register_child("lin2", &lin2);
}

Tensor TextAdapter::forward(const Tensor& base) const {
    check(base.ndim() == 2 && base.dim(1) == lin1.in_features(),
          "text adapter: base width ", base.dim(-1), " does not match adapter width ",
          lin1.in_features());
    return add(base, lin2.forward(silu(lin1.forward(base))));
}

}  // namespace dpiqa
