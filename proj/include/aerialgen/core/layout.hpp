#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "aerialgen/core/image.hpp"

namespace aerialgen {

enum class LayoutClass : std::uint8_t { building = 0, parking, playground, forest, water, path, road, others };

inline constexpr int kNumClasses = 8;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "building", "parking", "playground", "forest", "water", "path", "road", "others"};

using Rgb8 = std::array<std::uint8_t, 3>;

inline constexpr std::array<Rgb8, kNumClasses> kPalette = {{
    {0xE0, 0x7A, 0x1F},  // building
    {0x2D, 0x6C, 0xDF},  // parking
    {0xC9, 0xA0, 0xDC},  // playground
    {0x2E, 0x8B, 0x57},  // forest
    {0x4F, 0xB3, 0xD9},  // water
    {0x9A, 0x9A, 0x9A},  // path
    {0x1A, 0x1A, 0x1A},  // road
    {0xF2, 0xEF, 0xE9},  // others
}};

constexpr std::uint8_t class_index(LayoutClass c) { return static_cast<std::uint8_t>(c); }

// Per-pixel class indices, row-major.
struct LayoutMap {
    int height = 0;
    int width  = 0;
    std::vector<std::uint8_t> classes;

    LayoutMap() = default;
    LayoutMap(int height, int width, LayoutClass fill = LayoutClass::others);

    std::uint8_t& at(int y, int x) { return classes[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return classes[static_cast<std::size_t>(y) * width + x]; }
    void validate() const;
    std::array<int, kNumClasses> histogram() const;
    bool operator==(const LayoutMap&) const = default;
};

Image render_palette(const LayoutMap& layout);
// Nearest palette colour per pixel (squared RGB distance, lowest index on ties).
LayoutMap quantize_palette(const Image& image);
LayoutMap resize_nearest(const LayoutMap& layout, int height, int width);

// One-hot [1, 8, H, W].
Tensor layout_one_hot(const LayoutMap& layout);

LayoutMap read_layout_png(const std::filesystem::path& path);
void write_layout_png(const std::filesystem::path& path, const LayoutMap& layout);

}  // namespace aerialgen
