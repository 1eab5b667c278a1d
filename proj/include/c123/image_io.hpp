#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "c123/raster.hpp"

namespace c123 {

// 8-bit PNG in, [0,1] raster out. Keeps an alpha channel when the file has
// one (channels == 4), otherwise returns RGB.
inline Image read_png(const std::string& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str()))
        throw std::invalid_argument("read_png: cannot open '" + path + "': " + png.message);
    const bool has_alpha = (png.format & PNG_FORMAT_FLAG_ALPHA) != 0;
    png.format = has_alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
        std::string msg = png.message;
        png_image_free(&png);
        throw std::invalid_argument("read_png: decode failed for '" + path + "': " + msg);
    }
    Image out(static_cast<int>(png.height), static_cast<int>(png.width), has_alpha ? 4 : 3);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = buffer[i] / 255.0;
    return out;
}

// 8-bit grayscale PNG in, single-channel [0,1] raster out.
inline Image read_png_gray(const std::string& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str()))
        throw std::invalid_argument("read_png_gray: cannot open '" + path + "': " + png.message);
    png.format = PNG_FORMAT_GRAY;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
        std::string msg = png.message;
        png_image_free(&png);
        throw std::invalid_argument("read_png_gray: decode failed for '" + path + "': " + msg);
    }
    Image out(static_cast<int>(png.height), static_cast<int>(png.width), 1);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = buffer[i] / 255.0;
    return out;
}

inline void write_png_rgb(const std::string& path, const Image& img) {
    if (img.channels != 3) throw std::invalid_argument("write_png_rgb: raster must have 3 channels");
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buffer(img.size());
    for (size_t i = 0; i < img.size(); ++i) {
        double v = img.data[i];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        buffer[i] = static_cast<png_byte>(v * 255.0 + 0.5);
    }
    if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr))
        throw std::runtime_error("write_png_rgb: encode failed for '" + path + "': " + png.message);
}

// Raw little-endian float32 raster, row-major, no header. The shape comes
// from the caller (the paired image file fixes H and W).
inline Image read_f32_raster(const std::string& path, int height, int width) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("read_f32_raster: cannot open '" + path + "'");
    const size_t n = static_cast<size_t>(height) * width;
    std::vector<float> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<size_t>(in.gcount()) != n * sizeof(float))
        throw std::invalid_argument("read_f32_raster: '" + path + "' holds fewer than " +
                                    std::to_string(n) + " float32 values");
    Image out(height, width, 1);
    for (size_t i = 0; i < n; ++i) out.data[i] = raw[i];
    return out;
}

inline void write_f32_raster(const std::string& path, const Image& img) {
    if (img.channels != 1) throw std::invalid_argument("write_f32_raster: raster must have 1 channel");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_f32_raster: cannot open '" + path + "'");
    std::vector<float> raw(img.size());
    for (size_t i = 0; i < img.size(); ++i) raw[i] = static_cast<float>(img.data[i]);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
}

}  // namespace c123
