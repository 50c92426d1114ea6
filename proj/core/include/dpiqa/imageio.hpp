#pragma once

#include <string>

#include "dpiqa/image.hpp"

namespace dpiqa {

// Decodes a PNG/JPEG file to interleaved RGB (alpha preserved as RGBA,
// grayscale kept single-channel). Throws Error when the file is missing or
// undecodable.
ImageU8 load_image(const std::string& path);

// Writes an 8-bit single-channel PNG (h*w bytes, row-major).
void save_gray_png(const std::string& path, const uint8_t* pixels, int64_t h, int64_t w);

// Writes an interleaved RGB buffer as PNG; test fixtures use this.
void save_rgb_png(const std::string& path, const uint8_t* pixels, int64_t h, int64_t w);

}  // namespace dpiqa
