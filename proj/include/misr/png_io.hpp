#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "misr/common.hpp"

namespace misr {

struct GrayImage16 {
    int width = 0;
    int height = 0;
    std::vector<std::uint16_t> pixels;  // row-major
};

namespace pngdetail {

inline bool host_is_little_endian() {
    const std::uint16_t probe = 1;
    unsigned char bytes[2];
    std::memcpy(bytes, &probe, 2);
    return bytes[0] == 1;
}

struct FileCloser {
    std::FILE* f = nullptr;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

}  // namespace pngdetail

// Reads a grayscale PNG. 16-bit is the canonical depth; 8-bit is accepted
// with a warning and rescaled to the 16-bit range. Anything else is a data
// error.
inline GrayImage16 read_png_gray16(const std::string& path) {
    pngdetail::FileCloser file{std::fopen(path.c_str(), "rb")};
    if (!file.f) throw DataError("cannot open PNG: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng info init failed");
    }
    std::vector<png_bytep> rows;
    GrayImage16 img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("PNG decode failed: " + path);
    }
    png_init_io(png, file.f);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("grayscale PNG required: " + path);
    }
    if (depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
        depth = 8;
    }
    bool scale8 = false;
    if (depth == 8) {
        std::fprintf(stderr, "warning: 8-bit PNG %s rescaled to 16-bit range\n", path.c_str());
        scale8 = true;
    } else if (depth == 16 && pngdetail::host_is_little_endian()) {
        png_set_swap(png);
    }
    png_set_interlace_handling(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 0);
    std::vector<std::uint8_t> row8;
    rows.resize(img.height);
    if (scale8) {
        row8.resize(static_cast<std::size_t>(img.width) * img.height);
        for (int y = 0; y < img.height; ++y)
            rows[y] = row8.data() + static_cast<std::size_t>(y) * img.width;
    } else {
        for (int y = 0; y < img.height; ++y)
            rows[y] = reinterpret_cast<png_bytep>(img.pixels.data() +
                                                  static_cast<std::size_t>(y) * img.width);
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    if (scale8)
        for (std::size_t i = 0; i < img.pixels.size(); ++i)
            img.pixels[i] = static_cast<std::uint16_t>(row8[i]) * 257;  // 255 -> 65535
    return img;
}

// Writes a 16-bit grayscale PNG with fixed compression settings so identical
// pixels give identical bytes.
inline void write_png_gray16(const std::string& path, const GrayImage16& img) {
    require(img.width > 0 && img.height > 0 &&
                img.pixels.size() == static_cast<std::size_t>(img.width) * img.height,
            "write_png_gray16: inconsistent image");
    pngdetail::FileCloser file{std::fopen(path.c_str(), "wb")};
    if (!file.f) throw DataError("cannot create PNG: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG encode failed: " + path);
    }
    png_init_io(png, file.f);
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 16, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (pngdetail::host_is_little_endian()) png_set_swap(png);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(
            img.pixels.data() + static_cast<std::size_t>(y) * img.width));
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace misr
