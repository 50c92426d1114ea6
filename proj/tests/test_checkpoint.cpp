#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dpiqa/checkpoint.hpp"
#include "dpiqa/common.hpp"
#include "dpiqa/nn.hpp"
#include "test_util.hpp"

using namespace dpiqa;

namespace {

void flip_byte(const std::string& path, int64_t offset_from_start) {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(offset_from_start);
    char c;
    f.read(&c, 1);
    c = static_cast<char>(c ^ 0x5a);
    f.seekp(offset_from_start);
    f.write(&c, 1);
}

}  // namespace

TEST_CASE("checkpoint: round trip preserves meta and tensors bit for bit") {
    TempDir dir;
    const auto path = dir.file("model.ckpt");

    KVMap meta = {{"meta.role", "teacher"}, {"teacher.lr", "1e-05"}};
    Rng rng(3);
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({2, 2, 5}, rng);
    save_checkpoint(path, meta, {{"alpha", a}, {"beta.w", b}});

    Checkpoint ckpt = load_checkpoint(path);
    CHECK(ckpt.meta == meta);
    REQUIRE(ckpt.tensors.size() == 2);
    CHECK(ckpt.tensors[0].first == "alpha");
    CHECK(ckpt.tensors[1].first == "beta.w");
    CHECK(ckpt.tensors[0].second.shape() == Shape{3, 4});
    CHECK(std::memcmp(ckpt.tensors[0].second.data(), a.data(),
                      static_cast<size_t>(a.numel()) * sizeof(double)) == 0);
    CHECK(std::memcmp(ckpt.tensors[1].second.data(), b.data(),
                      static_cast<size_t>(b.numel()) * sizeof(double)) == 0);
    CHECK(ckpt.content_hash == checkpoint_hash(path));

    // identical content saved elsewhere hashes identically
    const auto again = dir.file("again.ckpt");
    save_checkpoint(again, meta, {{"alpha", a}, {"beta.w", b}});
    CHECK(checkpoint_hash(again) == ckpt.content_hash);

    // different content hashes differently
    a.data()[0] += 1.0;
    save_checkpoint(again, meta, {{"alpha", a}, {"beta.w", b}});
    CHECK(checkpoint_hash(again) != ckpt.content_hash);

    // no stray temp file remains
    CHECK(!std::filesystem::exists(path + ".tmp"));
}

TEST_CASE("checkpoint: corruption and truncation are detected") {
    TempDir dir;
    const auto path = dir.file("model.ckpt");
    Rng rng(5);
    Tensor a = Tensor::randn({8, 8}, rng);
    save_checkpoint(path, {{"k", "v"}}, {{"a", a}});

    const auto size = static_cast<int64_t>(std::filesystem::file_size(path));
    flip_byte(path, size / 2);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("corrupt"), Error);

    save_checkpoint(path, {{"k", "v"}}, {{"a", a}});
    std::filesystem::resize_file(path, static_cast<uintmax_t>(size / 3));
    CHECK_THROWS_AS(load_checkpoint(path), Error);

    write_text(dir.file("junk.bin"), "this is not a checkpoint at all");
    CHECK_THROWS_WITH_AS(load_checkpoint(dir.file("junk.bin")),
                         doctest::Contains("not a checkpoint"), Error);
    CHECK_THROWS_AS(load_checkpoint(dir.file("absent.ckpt")), Error);
}

TEST_CASE("checkpoint: module state restores exactly and rejects mismatches") {
    TempDir dir;
    const auto path = dir.file("block.ckpt");

    Rng rng(11);
    ResBlock original(4, 6, rng);
    save_module(path, original, {});

    // a differently seeded twin converges to the saved weights bit for bit
    Rng rng2(99);
    ResBlock twin(4, 6, rng2);
    load_module(path, twin);
    auto want = original.named_state();
    auto got = twin.named_state();
    REQUIRE(want.size() == got.size());
    for (size_t i = 0; i < want.size(); ++i) {
        CHECK(want[i].first == got[i].first);
        CHECK(std::memcmp(want[i].second.data(), got[i].second.data(),
                          static_cast<size_t>(want[i].second.numel()) * sizeof(double)) == 0);
    }

    // shape mismatch: same names, different widths
    Rng rng3(1);
    ResBlock wider(4, 8, rng3);
    CHECK_THROWS_WITH_AS(load_module(path, wider), doctest::Contains("shape"), Error);

    // structural mismatch: 4==4 drops the skip conv, so names differ
    Rng rng4(2);
    ResBlock square(4, 4, rng4);
    CHECK_THROWS_AS(load_module(path, square), Error);

    // missing tensor: save a strict subset, then try to restore the block
    auto state = original.named_state();
    state.pop_back();
    save_checkpoint(path, {}, state);
    Rng rng5(3);
    ResBlock fresh(4, 6, rng5);
    CHECK_THROWS_WITH_AS(load_module(path, fresh), doctest::Contains("missing"), Error);
}
