#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace c123 {

// Dense raster, row-major with the channel index fastest. Values are doubles;
// quantization to float32 / 8-bit happens only at file-format boundaries.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

    double& at(int r, int c, int ch) { return data[(static_cast<size_t>(r) * width + c) * channels + ch]; }
    double at(int r, int c, int ch) const { return data[(static_cast<size_t>(r) * width + c) * channels + ch]; }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
};

inline bool same_shape(const Image& a, const Image& b) {
    return a.height == b.height && a.width == b.width && a.channels == b.channels;
}

inline void require_same_shape(const Image& a, const Image& b, const char* where) {
    if (!same_shape(a, b))
        throw std::invalid_argument(std::string(where) + ": raster shape mismatch");
}

inline bool all_finite(const Image& img) {
    for (double v : img.data)
        if (!std::isfinite(v)) return false;
    return true;
}

inline double mean(const Image& img) {
    double s = 0.0;
    for (double v : img.data) s += v;
    return img.data.empty() ? 0.0 : s / static_cast<double>(img.data.size());
}

inline double mse(const Image& a, const Image& b) {
    require_same_shape(a, b, "mse");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

}  // namespace c123
