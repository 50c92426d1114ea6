#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "dpiqa/conditioning.hpp"
#include "test_util.hpp"

using namespace dpiqa;

namespace {

// hand-scripted encoder: fixed vectors per known token
class ScriptedEncoder : public TextEncoder {
public:
    explicit ScriptedEncoder(std::vector<std::vector<double>> tokens)
        : tokens_(std::move(tokens)) {}
    int64_t dim() const override { return 2; }
    std::vector<std::vector<double>> encode_tokens(const std::string&) const override {
        return tokens_;
    }

private:
    std::vector<std::vector<double>> tokens_;
};

PromptTemplate tiny_tpl() {
    PromptTemplate tpl;
    tpl.scenes = {"indoor", "other"};
    tpl.distortions = {"motion", "contrast", "other"};
    tpl.quality_levels = {"bad", "good"};
    return tpl;
}

}  // namespace

TEST_CASE("conditioning: expansion order varies quality fastest") {
    auto tpl = tiny_tpl();
    auto sentences = expand_templates(tpl);
    REQUIRE(sentences.size() == 12);
    CHECK(sentences[0] ==
          "a photo of a indoor with motion distortion, which is of bad quality.");
    CHECK(sentences[1] ==
          "a photo of a indoor with motion distortion, which is of good quality.");
    CHECK(sentences[2] ==
          "a photo of a indoor with contrast distortion, which is of bad quality.");
    CHECK(sentences[6] ==
          "a photo of a other with motion distortion, which is of bad quality.");
    CHECK(sentences[11] ==
          "a photo of a other with other distortion, which is of good quality.");

    PromptTemplate one;
    one.scenes = {"other"};
    one.distortions = {"other"};
    one.quality_levels = {"fair"};
    auto single = expand_templates(one);
    REQUIRE(single.size() == 1);
    CHECK(single[0] == "a photo of a other with other distortion, which is of fair quality.");
}

TEST_CASE("conditioning: template validation") {
    auto tpl = tiny_tpl();
    validate_template(tpl);

    auto no_other = tpl;
    no_other.scenes = {"indoor", "outdoor"};
    CHECK_THROWS_WITH_AS(validate_template(no_other), doctest::Contains("other"), Error);

    auto dup = tpl;
    dup.distortions.push_back("motion");
    CHECK_THROWS_WITH_AS(validate_template(dup), doctest::Contains("duplicate"), Error);

    auto empty = tpl;
    empty.quality_levels.clear();
    CHECK_THROWS_AS(validate_template(empty), Error);
}

TEST_CASE("conditioning: sentence pooling is the token mean") {
    // identical tokens -> that vector
    ScriptedEncoder same({{1.5, -2.0}, {1.5, -2.0}, {1.5, -2.0}});
    auto e1 = embed_sentence(same, "ignored words here");
    CHECK(e1[0] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(e1[1] == doctest::Approx(-2.0).epsilon(1e-15));

    // e and -e cancel
    ScriptedEncoder cancel({{0.7, -0.3}, {-0.7, 0.3}});
    auto e2 = embed_sentence(cancel, "x");
    CHECK(e2[0] == 0.0);
    CHECK(e2[1] == 0.0);

    // unit basis averages to (0.5, 0.5)
    ScriptedEncoder basis({{1.0, 0.0}, {0.0, 1.0}});
    auto e3 = embed_sentence(basis, "x");
    CHECK(e3[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(e3[1] == doctest::Approx(0.5).epsilon(1e-15));

    // no tokens is an error
    ScriptedEncoder none({});
    CHECK_THROWS_AS(embed_sentence(none, "whatever"), Error);
    HashTextEncoder hte(8, 1);
    CHECK_THROWS_AS(embed_sentence(hte, "   "), Error);
}

TEST_CASE("conditioning: hash encoder is deterministic per token") {
    HashTextEncoder enc(16, 42);
    auto a = enc.encode_tokens("quality photo quality");
    REQUIRE(a.size() == 3);
    CHECK(a[0] == a[2]);       // same token, same vector
    CHECK(a[0] != a[1]);       // different tokens differ
    HashTextEncoder enc2(16, 42);
    CHECK(enc2.encode_tokens("quality photo quality") == a);
    HashTextEncoder other_seed(16, 43);
    CHECK(other_seed.encode_tokens("quality")[0] != a[0]);
}

TEST_CASE("conditioning: condition matrix shape, determinism, row semantics") {
    auto tpl = tiny_tpl();
    HashTextEncoder enc(24, 7);
    Tensor c1 = build_condition(enc, tpl);
    CHECK(c1.shape() == Shape{12, 24});
    CHECK(!c1.requires_grad());
    CHECK(all_finite(c1));

    Tensor c2 = build_condition(enc, tpl);
    CHECK(std::memcmp(c1.data(), c2.data(), static_cast<size_t>(c1.numel()) * sizeof(double)) ==
          0);

    // each row is the pooled embedding of its sentence
    auto sentences = expand_templates(tpl);
    auto row5 = embed_sentence(enc, sentences[5]);
    for (int64_t j = 0; j < 24; ++j)
        CHECK(c1.data()[5 * 24 + j] == row5[static_cast<size_t>(j)]);

    // permuting quality levels permutes rows: swapping the two quality
    // entries swaps adjacent row pairs
    auto swapped = tpl;
    std::swap(swapped.quality_levels[0], swapped.quality_levels[1]);
    Tensor cs = build_condition(enc, swapped);
    for (int64_t pair = 0; pair < 6; ++pair) {
        const double* orig = c1.data() + (pair * 2) * 24;
        const double* perm = cs.data() + (pair * 2) * 24;
        CHECK(std::memcmp(orig, perm + 24, 24 * sizeof(double)) == 0);
        CHECK(std::memcmp(orig + 24, perm, 24 * sizeof(double)) == 0);
    }
}

TEST_CASE("conditioning: text adapter is residual with exact zero-init identity") {
    Rng rng(9);
    TextAdapter adapter(6, 10, rng);
    Tensor base = Tensor::randn({5, 6}, rng);
    Tensor out = adapter.forward(base);
    CHECK(out.shape() == base.shape());
    // second layer starts at zero, so the adapter is the identity bit-for-bit
    CHECK(std::memcmp(out.data(), base.data(), static_cast<size_t>(base.numel()) * sizeof(double)) ==
          0);

    // after perturbing the output layer, residual == lin2(silu(lin1(base)))
    Rng rng2(10);
    for (int64_t i = 0; i < adapter.lin2.w.numel(); ++i)
        adapter.lin2.w.data()[i] = rng2.normal() * 0.1;
    Tensor out2 = adapter.forward(base);
    Tensor standalone = adapter.lin2.forward(silu(adapter.lin1.forward(base)));
    for (int64_t i = 0; i < base.numel(); ++i)
        CHECK(out2.data()[i] - base.data()[i] ==
              doctest::Approx(standalone.data()[i]).epsilon(1e-12));

    // zero base with zero biases and an odd nonlinearity stays zero
    Tensor zero = Tensor::zeros({3, 6});
    Tensor out3 = adapter.forward(zero);
    for (int64_t i = 0; i < out3.numel(); ++i) CHECK(out3.data()[i] == 0.0);

    CHECK_THROWS_AS(adapter.forward(Tensor::zeros({3, 7})), Error);
}

TEST_CASE("conditioning: template file parsing accepts comments, rejects junk") {
    TempDir dir;
    auto good = dir.file("tpl.txt");
    write_text(good,
               "# word lists\n"
               "[scenes]\n"
               "indoor\n"
               "other\n"
               "\n"
               "[distortions]\n"
               "blur\n"
               "other\n"
               "[quality]\n"
               "bad\n"
               "good\n");
    PromptTemplate tpl = load_template_file(good);
    CHECK(tpl.scenes == std::vector<std::string>{"indoor", "other"});
    CHECK(tpl.distortions == std::vector<std::string>{"blur", "other"});
    CHECK(tpl.k() == 2 * 2 * 2);

    auto bad_section = dir.file("bad_section.txt");
    write_text(bad_section, "[scenes]\nother\n[styles]\nloud\n");
    CHECK_THROWS_WITH_AS(load_template_file(bad_section), doctest::Contains("section"), Error);

    auto orphan = dir.file("orphan.txt");
    write_text(orphan, "indoor\n[scenes]\nother\n");
    CHECK_THROWS_AS(load_template_file(orphan), Error);

    CHECK_THROWS_AS(load_template_file(dir.file("missing.txt")), Error);
}

TEST_CASE("conditioning: default template file expands against its declared counts") {
    PromptTemplate tpl =
        load_template_file(std::string(DPIQA_REPO_DIR) + "/configs/template_default.txt");
    CHECK(tpl.scenes.size() == 9);
    CHECK(tpl.distortions.size() == 34);
    CHECK(tpl.quality_levels.size() == 5);
    CHECK(tpl.k() == 9 * 34 * 5);
    auto sentences = expand_templates(tpl);
    CHECK(sentences.size() == static_cast<size_t>(tpl.k()));
    CHECK(sentences[0] ==
          "a photo of a animal with jpeg2000 compression distortion, which is of bad quality.");
}
