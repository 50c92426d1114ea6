#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpiqa/config.hpp"
#include "dpiqa/nn.hpp"
#include "dpiqa/tensor.hpp"

namespace dpiqa {

// Versioned little-endian container: magic, a key=value metadata block, the
// named tensors, then a trailing content hash. Writes go through a temp
// file and rename, so a crash never leaves a half-written checkpoint.
struct Checkpoint {
    KVMap meta;
    std::vector<std::pair<std::string, Tensor>> tensors;
    uint64_t content_hash = 0;
};

void save_checkpoint(const std::string& path, const KVMap& meta,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);
// verifies magic, version, and the content hash before returning anything
Checkpoint load_checkpoint(const std::string& path);
// the stored content hash (verified); cache keys build on this
uint64_t checkpoint_hash(const std::string& path);

void save_module(const std::string& path, const Module& m, const KVMap& meta);
// Restores every parameter and buffer. The stored names and shapes must
// match the module exactly, in both directions.
void load_module(const std::string& path, Module& m);

}  // namespace dpiqa
