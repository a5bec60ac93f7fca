#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "clearsky/tensor.hpp"

namespace clearsky {

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Reads an 8-bit PNG into a (1,H,W,3) tensor in [0,1]. Grayscale, palette
/// and alpha inputs are expanded/stripped to RGB.
template <class S>
Tensor<S> read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open image: " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8)) {
        std::fclose(fp);
        throw IoError("not a PNG file: " + path);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("corrupt PNG: " + path);
    }
    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    int h = static_cast<int>(png_get_image_height(png, info));
    int w = static_cast<int>(png_get_image_width(png, info));
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    Tensor<S> out(Shape{1, h, w, 3});
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at4(0, y, x, c) = static_cast<S>(row[static_cast<size_t>(x) * 3 + c] / 255.0);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return out;
}

/// Writes a (1,H,W,3) tensor in [0,1] as an 8-bit PNG. Quantization is
/// round-half-even; settings are fixed so identical tensors produce
/// identical bytes.
template <class S>
void write_png(const std::string& path, const Tensor<S>& img) {
    if (img.rank() != 4 || img.dim(0) != 1 || img.dim(3) != 3)
        throw ShapeError("write_png: expects (1,H,W,3), got " + shape_str(img.shape()));
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open for write: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("PNG write failed: " + path);
    }
    int h = img.dim(1), w = img.dim(2);
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = std::min(1.0, std::max(0.0, static_cast<double>(img.at4(0, y, x, c))));
                row[static_cast<size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::nearbyint(v * 255.0));  // round-half-even
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace clearsky
