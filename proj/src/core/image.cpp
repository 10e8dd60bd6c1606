#include "aerialgen/core/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "aerialgen/core/error.hpp"

namespace aerialgen {

Image::Image(int channels_, int height_, int width_, float fill)
    : channels(channels_), height(height_), width(width_) {
    if (channels <= 0 || height <= 0 || width <= 0) throw ShapeError("image dimensions must be positive");
    data.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

namespace {

std::uint8_t to_byte(float v) {
    if (!(v > 0.0f)) return 0;
    if (v >= 1.0f) return 255;
    return static_cast<std::uint8_t>(std::lround(v * 255.0f));
}

struct PngWriteBuffer {
    std::vector<std::uint8_t>* out;
};

void png_write_callback(png_structp png, png_bytep data, png_size_t length) {
    auto* buf = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
    buf->out->insert(buf->out->end(), data, data + length);
}

void png_flush_callback(png_structp) {}

struct PngReadBuffer {
    const std::vector<std::uint8_t>* in;
    std::size_t offset;
};

void png_read_callback(png_structp png, png_bytep data, png_size_t length) {
    auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
    if (buf->offset + length > buf->in->size()) png_error(png, "read past end of PNG buffer");
    std::memcpy(data, buf->in->data() + buf->offset, length);
    buf->offset += length;
}

void png_error_callback(png_structp, png_const_charp message) { throw IoError(std::string("png: ") + message); }
void png_warning_callback(png_structp, png_const_charp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw ShapeError("encode_png: expected 1 or 3 channels");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_callback, png_warning_callback);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> out;
    PngWriteBuffer buffer{&out};
    try {
        png_set_write_fn(png, &buffer, png_write_callback, png_flush_callback);
        png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                     image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width) * image.channels);
        for (int y = 0; y < image.height; ++y) {
            for (int x = 0; x < image.width; ++x) {
                for (int c = 0; c < image.channels; ++c) {
                    row[static_cast<std::size_t>(x) * image.channels + c] = to_byte(image.at(c, y, x));
                }
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw IoError("not a PNG stream");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_callback, png_warning_callback);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    PngReadBuffer buffer{&bytes, 0};
    Image image;
    try {
        png_set_read_fn(png, &buffer, png_read_callback);
        png_read_info(png, info);
        const auto color = png_get_color_type(png, info);
        const auto depth = png_get_bit_depth(png, info);
        if (depth == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
        png_read_update_info(png, info);
        const int channels = png_get_channels(png, info);
        const int width    = static_cast<int>(png_get_image_width(png, info));
        const int height   = static_cast<int>(png_get_image_height(png, info));
        if (channels != 1 && channels != 3) throw IoError("unsupported PNG channel count");
        image = Image(channels, height, width);
        std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
        for (int y = 0; y < height; ++y) {
            png_read_row(png, row.data(), nullptr);
            for (int x = 0; x < width; ++x) {
                for (int c = 0; c < channels; ++c) {
                    image.at(c, y, x) = row[static_cast<std::size_t>(x) * channels + c] / 255.0f;
                }
            }
        }
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

Image read_png(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_png(bytes);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_png(const std::filesystem::path& path, const Image& image) {
    const auto bytes = encode_png(image);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

Image resize(const Image& image, int height, int width) {
    if (height <= 0 || width <= 0) throw ShapeError("resize: target must be positive");
    if (height == image.height && width == image.width) return image;
    Image out(image.channels, height, width);
    if (image.height % height == 0 && image.width % width == 0) {
        const int fy = image.height / height;
        const int fx = image.width / width;
        const float inv = 1.0f / static_cast<float>(fy * fx);
        for (int c = 0; c < image.channels; ++c) {
            for (int y = 0; y < height; ++y) {
                for (int x = 0; x < width; ++x) {
                    float acc = 0.0f;
                    for (int i = 0; i < fy; ++i) {
                        for (int j = 0; j < fx; ++j) acc += image.at(c, y * fy + i, x * fx + j);
                    }
                    out.at(c, y, x) = acc * inv;
                }
            }
        }
        return out;
    }
    const float sy = static_cast<float>(image.height) / height;
    const float sx = static_cast<float>(image.width) / width;
    for (int y = 0; y < height; ++y) {
        const float src_y = std::clamp((y + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(image.height - 1));
        const int y0      = static_cast<int>(src_y);
        const int y1      = std::min(y0 + 1, image.height - 1);
        const float ty    = src_y - y0;
        for (int x = 0; x < width; ++x) {
            const float src_x = std::clamp((x + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(image.width - 1));
            const int x0      = static_cast<int>(src_x);
            const int x1      = std::min(x0 + 1, image.width - 1);
            const float tx    = src_x - x0;
            for (int c = 0; c < image.channels; ++c) {
                const float top = image.at(c, y0, x0) * (1 - tx) + image.at(c, y0, x1) * tx;
                const float bot = image.at(c, y1, x0) * (1 - tx) + image.at(c, y1, x1) * tx;
                out.at(c, y, x) = top * (1 - ty) + bot * ty;
            }
        }
    }
    return out;
}

Image clamp01(Image image) {
    for (float& v : image.data) v = std::clamp(v, 0.0f, 1.0f);
    return image;
}

Image quantize8(Image image) {
    for (float& v : image.data) v = to_byte(v) / 255.0f;
    return image;
}

Tensor image_to_tensor(const Image& image) {
    return Tensor({1, image.channels, image.height, image.width}, image.data);
}

Image tensor_to_image(const Tensor& batch, int index) {
    if (batch.rank() != 4 || index < 0 || index >= batch.dim(0)) throw ShapeError("tensor_to_image: bad batch index");
    Image image(batch.dim(1), batch.dim(2), batch.dim(3));
    const std::size_t n = image.data.size();
    std::copy(batch.data() + static_cast<std::size_t>(index) * n, batch.data() + (static_cast<std::size_t>(index) + 1) * n,
              image.data.begin());
    return image;
}

Tensor stack_images(const std::vector<Image>& images) {
    if (images.empty()) throw ShapeError("stack_images: empty list");
    const Image& first = images.front();
    Tensor out({static_cast<int>(images.size()), first.channels, first.height, first.width});
    const std::size_t n = first.data.size();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!images[i].same_shape(first)) throw ShapeError("stack_images: images differ in shape");
        std::copy(images[i].data.begin(), images[i].data.end(), out.data() + i * n);
    }
    return out;
}

}  // namespace aerialgen
