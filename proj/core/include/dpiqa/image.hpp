#pragma once

#include <cstdint>
#include <vector>

#include "dpiqa/tensor.hpp"

namespace dpiqa {

// Decoded 8-bit image, interleaved row-major. channels is 1 (gray), 3 (RGB)
// or 4 (RGBA).
struct ImageU8 {
    int64_t height = 0;
    int64_t width = 0;
    int64_t channels = 0;
    std::vector<uint8_t> pixels;
};

// Content identity key (dimensions + bytes); used for feature-cache lookups.
uint64_t image_hash(const ImageU8& img);

// RGB tensor (3, size, size) with values in [-1,1]: channels collapsed or
// expanded to RGB, linear [0,255] -> [-1,1], then bilinear resize. Pure and
// deterministic. Throws on a zero-pixel image or unsupported channel count.
Tensor preprocess_image(const ImageU8& img, int64_t size = 512);

// (C,H,W) tensors -> one (N,C,H,W) batch.
Tensor stack_images(const std::vector<Tensor>& images);

}  // namespace dpiqa
