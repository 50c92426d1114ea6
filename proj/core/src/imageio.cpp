#include "dpiqa/imageio.hpp"

#include <cstring>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "dpiqa/common.hpp"

namespace dpiqa {

namespace {

// in-place BGR(A) <-> RGB(A)
void swap_rb(uint8_t* p, size_t n_pixels, int64_t channels) {
    for (size_t i = 0; i < n_pixels; ++i) {
        std::swap(p[i * static_cast<size_t>(channels)], p[i * static_cast<size_t>(channels) + 2]);
    }
}

}  // namespace

ImageU8 load_image(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    check(!m.empty(), "load_image: cannot read '", path, "'");
    check(m.depth() == CV_8U, "load_image: '", path, "' is not 8-bit");
    const int c = m.channels();
    check(c == 1 || c == 3 || c == 4, "load_image: '", path, "' has ", c, " channels");
    ImageU8 img;
    img.height = m.rows;
    img.width = m.cols;
    img.channels = c;
    img.pixels.resize(static_cast<size_t>(m.rows) * m.cols * c);
    if (m.isContinuous()) {
        std::memcpy(img.pixels.data(), m.data, img.pixels.size());
    } else {
        for (int y = 0; y < m.rows; ++y)
            std::memcpy(img.pixels.data() + static_cast<size_t>(y) * m.cols * c, m.ptr(y),
                        static_cast<size_t>(m.cols) * c);
    }
    if (c >= 3) swap_rb(img.pixels.data(), static_cast<size_t>(m.rows) * m.cols, c);
    return img;
}

void save_gray_png(const std::string& path, const uint8_t* pixels, int64_t h, int64_t w) {
    cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_8UC1, const_cast<uint8_t*>(pixels));
    check(cv::imwrite(path, m), "save_gray_png: cannot write '", path, "'");
}

void save_rgb_png(const std::string& path, const uint8_t* pixels, int64_t h, int64_t w) {
    std::vector<uint8_t> bgr(pixels, pixels + h * w * 3);
    swap_rb(bgr.data(), static_cast<size_t>(h * w), 3);
    cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_8UC3, bgr.data());
    check(cv::imwrite(path, m), "save_rgb_png: cannot write '", path, "'");
}

}  // namespace dpiqa
