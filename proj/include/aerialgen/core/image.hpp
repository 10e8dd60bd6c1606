#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "aerialgen/core/tensor.hpp"

namespace aerialgen {

// Planar float image [channels x height x width], values nominally in [0, 1].
struct Image {
    int channels = 3;
    int height   = 0;
    int width    = 0;
    std::vector<float> data;

    Image() = default;
    Image(int channels, int height, int width, float fill = 0.0f);

    float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    bool same_shape(const Image& o) const noexcept {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

// 8-bit RGB (or grey) PNG. Values are clamped and rounded on write.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(const std::vector<std::uint8_t>& bytes);

// Box filter for integer shrink factors, bilinear (half-pixel centres) otherwise.
Image resize(const Image& image, int height, int width);
Image clamp01(Image image);
// Rounds through 8-bit, matching a PNG round trip.
Image quantize8(Image image);

// [1, C, H, W] and back.
Tensor image_to_tensor(const Image& image);
Image tensor_to_image(const Tensor& batch, int index);
// Stacks equally shaped images into [N, C, H, W].
Tensor stack_images(const std::vector<Image>& images);

}  // namespace aerialgen
