#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>

#include "c123/image_io.hpp"
#include "c123/losses.hpp"
#include "c123/raster.hpp"
#include "c123/scene.hpp"

namespace c123 {

// A case directory holds image.png (RGB or RGBA), mask.png (grayscale,
// foreground white; optional when the image has alpha), depth.f32 (raw
// little-endian float32, row-major, optional), prompt.txt (one line), and
// optionally category.txt.
struct LoadedCase {
    CaseInput input;
    std::optional<std::string> category;
};

namespace detail {

inline std::string read_single_line(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open " + path);
    std::string line;
    std::getline(in, line);
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n' || line.back() == ' ' ||
                             line.back() == '\t'))
        line.pop_back();
    size_t start = 0;
    while (start < line.size() && (line[start] == ' ' || line[start] == '\t')) ++start;
    return line.substr(start);
}

inline Image binarize_mask(const Image& gray) {
    Image mask(gray.height, gray.width, 1);
    for (size_t i = 0; i < gray.data.size(); ++i) mask.data[i] = gray.data[i] >= 0.5 ? 1.0 : 0.0;
    return mask;
}

}  // namespace detail

inline LoadedCase load_case_directory(const std::string& dir, const CameraPose& reference_pose) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::invalid_argument("case directory missing: " + dir);

    const std::string image_path = dir + "/image.png";
    const std::string mask_path = dir + "/mask.png";
    const std::string depth_path = dir + "/depth.f32";
    const std::string prompt_path = dir + "/prompt.txt";
    const std::string category_path = dir + "/category.txt";

    if (!fs::exists(image_path)) throw std::invalid_argument("case image missing: " + image_path);
    const Image raw = read_png(image_path);

    LoadedCase out;
    CaseInput& c = out.input;

    if (raw.channels == 4) {
        // Composite over white so the stored ground truth matches how the
        // trainer presents its own renders to the loss.
        c.image = Image(raw.height, raw.width, 3);
        Image alpha(raw.height, raw.width, 1);
        for (int r = 0; r < raw.height; ++r)
            for (int col = 0; col < raw.width; ++col) {
                const double a = raw.at(r, col, 3);
                alpha.at(r, col, 0) = a;
                for (int ch = 0; ch < 3; ++ch)
                    c.image.at(r, col, ch) = raw.at(r, col, ch) * a + (1.0 - a);
            }
        c.mask = detail::binarize_mask(alpha);
    } else {
        c.image = raw;
    }

    if (fs::exists(mask_path)) {
        c.mask = detail::binarize_mask(read_png_gray(mask_path));
    } else if (raw.channels != 4) {
        throw std::invalid_argument("case mask missing and image has no alpha: " + mask_path);
    }

    if (fs::exists(depth_path))
        c.depth = read_f32_raster(depth_path, c.image.height, c.image.width);

    if (!fs::exists(prompt_path)) throw std::invalid_argument("case prompt missing: " + prompt_path);
    c.prompt = detail::read_single_line(prompt_path);
    if (c.prompt.empty()) throw std::invalid_argument("case prompt empty: " + prompt_path);

    if (fs::exists(category_path)) {
        const std::string cat = detail::read_single_line(category_path);
        if (!cat.empty()) out.category = cat;
    }

    c.reference_pose = reference_pose;
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string(e.what()) + " (case " + dir + ")");
    }
    return out;
}

// Deterministic bilinear resample used to bring case rasters to the training
// resolution. The mask stays binary via a 0.5 threshold after filtering.
inline Image bilinear_resample(const Image& src, int height, int width) {
    if (src.empty()) throw std::invalid_argument("bilinear_resample: empty image");
    if (height < 1 || width < 1) throw std::invalid_argument("bilinear_resample: bad target size");
    Image out(height, width, src.channels);
    const double sr = static_cast<double>(src.height) / height;
    const double sc = static_cast<double>(src.width) / width;
    for (int r = 0; r < height; ++r) {
        const double fr = (r + 0.5) * sr - 0.5;
        const int r0 = std::max(0, std::min(src.height - 1, static_cast<int>(std::floor(fr))));
        const int r1 = std::min(src.height - 1, r0 + 1);
        const double wr = std::min(1.0, std::max(0.0, fr - r0));
        for (int col = 0; col < width; ++col) {
            const double fc = (col + 0.5) * sc - 0.5;
            const int c0 = std::max(0, std::min(src.width - 1, static_cast<int>(std::floor(fc))));
            const int c1 = std::min(src.width - 1, c0 + 1);
            const double wc = std::min(1.0, std::max(0.0, fc - c0));
            for (int ch = 0; ch < src.channels; ++ch) {
                const double top = src.at(r0, c0, ch) * (1.0 - wc) + src.at(r0, c1, ch) * wc;
                const double bot = src.at(r1, c0, ch) * (1.0 - wc) + src.at(r1, c1, ch) * wc;
                out.at(r, col, ch) = top * (1.0 - wr) + bot * wr;
            }
        }
    }
    return out;
}

// Bring every raster of the case to the given square resolution.
inline void resample_case(CaseInput& c, int resolution) {
    if (c.image.height == resolution && c.image.width == resolution) return;
    c.image = bilinear_resample(c.image, resolution, resolution);
    c.mask = detail::binarize_mask(bilinear_resample(c.mask, resolution, resolution));
    if (c.has_depth()) c.depth = bilinear_resample(c.depth, resolution, resolution);
}

}  // namespace c123
