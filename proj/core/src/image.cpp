#include "dpiqa/image.hpp"

#include <cstring>

namespace dpiqa {

uint64_t image_hash(const ImageU8& img) {
    const int64_t dims[3] = {img.height, img.width, img.channels};
    uint64_t h = fnv1a64(dims, sizeof(dims));
    return fnv1a64(img.pixels.data(), img.pixels.size(), h);
}

Tensor preprocess_image(const ImageU8& img, int64_t size) {
    check(img.height >= 1 && img.width >= 1, "preprocess_image: image has zero pixels");
    check(img.channels == 1 || img.channels == 3 || img.channels == 4,
          "preprocess_image: unsupported channel count ", img.channels);
    check(static_cast<int64_t>(img.pixels.size()) == img.height * img.width * img.channels,
          "preprocess_image: pixel buffer size mismatch");
    NoGradGuard ng;

    const int64_t H = img.height, W = img.width, C = img.channels;
    std::vector<double> chw(static_cast<size_t>(3 * H * W));
    const uint8_t* p = img.pixels.data();
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            const uint8_t* px = p + (y * W + x) * C;
            for (int64_t c = 0; c < 3; ++c) {
                const uint8_t v = (C == 1) ? px[0] : px[c];  // gray replicates; alpha dropped
                chw[(c * H + y) * W + x] = static_cast<double>(v) / 127.5 - 1.0;
            }
        }
    }
    Tensor t = Tensor::from_vector({1, 3, H, W}, std::move(chw));
    t = resize_bilinear(t, size, size);
    return reshape(t, {3, size, size});
}

Tensor stack_images(const std::vector<Tensor>& images) {
    check(!images.empty(), "stack_images: empty batch");
    const Shape& s = images[0].shape();
    check(s.size() == 3, "stack_images: expects (C,H,W) tensors");
    const int64_t per = images[0].numel();
    std::vector<double> out(static_cast<size_t>(per) * images.size());
    for (size_t i = 0; i < images.size(); ++i) {
        check(images[i].shape() == s, "stack_images: mismatched shapes in batch");
        std::memcpy(out.data() + static_cast<int64_t>(i) * per, images[i].data(),
                    static_cast<size_t>(per) * sizeof(double));
    }
    return Tensor::from_vector({static_cast<int64_t>(images.size()), s[0], s[1], s[2]},
                               std::move(out));
}

}  // namespace dpiqa
