#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dpiqa/nn.hpp"
#include "dpiqa/tensor.hpp"

namespace dpiqa {

// Sentence lists that expand into the fixed prompt pattern. scenes and
// distortions must each contain the literal entry "other"; no list may be
// empty or contain duplicates.
struct PromptTemplate {
    std::vector<std::string> scenes;
    std::vector<std::string> distortions;
    std::vector<std::string> quality_levels;

    int64_t k() const {
        return static_cast<int64_t>(scenes.size() * distortions.size() * quality_levels.size());
    }
};

inline constexpr const char* kPromptPattern =
    "a photo of a {scenes} with {distortion type} distortion, which is of {quality level} "
    "quality.";

void validate_template(const PromptTemplate& tpl);

// Section file: lines under [scenes] / [distortions] / [quality] headers,
// '#' comments allowed.
PromptTemplate load_template_file(const std::string& path);

// All K = |scenes|*|distortions|*|quality| substitutions, ordered by
// (scene, distortion, quality) with quality varying fastest.
std::vector<std::string> expand_templates(const PromptTemplate& tpl);

// Order-sensitive content hash over the three word lists; checkpoints store
// it so later stages can reject a mismatched template.
uint64_t template_hash(const PromptTemplate& tpl);

// Anything that turns a sentence into per-token vectors of a fixed width.
class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual int64_t dim() const = 0;
    // one vector of length dim() per token
    virtual std::vector<std::vector<double>> encode_tokens(const std::string& sentence) const = 0;
};

// Deterministic stand-in encoder: each whitespace token maps to a fixed
// pseudo-random vector derived from (token bytes, seed). Stateless and
// bit-reproducible across runs and platforms.
class HashTextEncoder : public TextEncoder {
public:
    HashTextEncoder(int64_t d, uint64_t seed) : d_(d), seed_(seed) {}
    int64_t dim() const override { return d_; }
    std::vector<std::vector<double>> encode_tokens(const std::string& sentence) const override;

private:
    int64_t d_;
    uint64_t seed_;
};

// Arithmetic mean over the sentence's token embeddings; a sentence with no
// tokens is an error.
std::vector<double> embed_sentence(const TextEncoder& enc, const std::string& sentence);

// Stacks embed_sentence over the expanded template, in expansion order.
// Result is a constant (K, d) matrix with no gradient path.
Tensor build_condition(const TextEncoder& enc, const PromptTemplate& tpl);

// Residual two-layer correction: base + lin2(silu(lin1(base))). The second
// layer starts at zero so the initial output equals the base exactly.
class TextAdapter : public Module {
public:
    TextAdapter(int64_t d, int64_t hidden, Rng& rng);
    Tensor forward(const Tensor& base) const;
    Linear lin1, lin2;
};

}  // namespace dpiqa
