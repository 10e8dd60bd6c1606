#include "aerialgen/core/layout.hpp"

#include <limits>
#include <string>

#include "aerialgen/core/error.hpp"

namespace aerialgen {

LayoutMap::LayoutMap(int height_, int width_, LayoutClass fill) : height(height_), width(width_) {
    if (height <= 0 || width <= 0) throw ShapeError("layout dimensions must be positive");
    classes.assign(static_cast<std::size_t>(height) * width, class_index(fill));
}

void LayoutMap::validate() const {
    if (height <= 0 || width <= 0 || classes.size() != static_cast<std::size_t>(height) * width) {
        throw ShapeError("layout buffer does not match " + std::to_string(height) + "x" + std::to_string(width));
    }
    for (auto c : classes) {
        if (c >= kNumClasses) throw ShapeError("layout class index " + std::to_string(c) + " out of range");
    }
}

std::array<int, kNumClasses> LayoutMap::histogram() const {
    std::array<int, kNumClasses> h{};
    for (auto c : classes) ++h[c];
    return h;
}

Image render_palette(const LayoutMap& layout) {
    layout.validate();
    Image img(3, layout.height, layout.width);
    for (int y = 0; y < layout.height; ++y) {
        for (int x = 0; x < layout.width; ++x) {
            const Rgb8& rgb = kPalette[layout.at(y, x)];
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[static_cast<std::size_t>(c)] / 255.0f;
        }
    }
    return img;
}

LayoutMap quantize_palette(const Image& image) {
    if (image.channels != 3) throw ShapeError("quantize_palette: expected an RGB image");
    LayoutMap out(image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            float best      = std::numeric_limits<float>::max();
            std::uint8_t id = 0;
            for (int k = 0; k < kNumClasses; ++k) {
                float dist = 0.0f;
                for (int c = 0; c < 3; ++c) {
                    const float diff = image.at(c, y, x) - kPalette[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)] / 255.0f;
                    dist += diff * diff;
                }
                if (dist < best) {
                    best = dist;
                    id   = static_cast<std::uint8_t>(k);
                }
            }
            out.at(y, x) = id;
        }
    }
    return out;
}

LayoutMap resize_nearest(const LayoutMap& layout, int height, int width) {
    if (height == layout.height && width == layout.width) return layout;
    LayoutMap out(height, width);
    for (int y = 0; y < height; ++y) {
        const int sy = static_cast<int>((static_cast<long long>(y) * 2 + 1) * layout.height / (2LL * height));
        for (int x = 0; x < width; ++x) {
            const int sx = static_cast<int>((static_cast<long long>(x) * 2 + 1) * layout.width / (2LL * width));
            out.at(y, x) = layout.at(sy, sx);
        }
    }
    return out;
}

Tensor layout_one_hot(const LayoutMap& layout) {
    Tensor t({1, kNumClasses, layout.height, layout.width});
    const std::size_t plane = static_cast<std::size_t>(layout.height) * layout.width;
    for (std::size_t i = 0; i < plane; ++i) t[layout.classes[i] * plane + i] = 1.0f;
    return t;
}

LayoutMap read_layout_png(const std::filesystem::path& path) { return quantize_palette(read_png(path)); }

void write_layout_png(const std::filesystem::path& path, const LayoutMap& layout) {
    write_png(path, render_palette(layout));
}

}  // namespace aerialgen
