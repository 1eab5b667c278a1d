#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "c123/raster.hpp"
#include "c123/scene.hpp"

namespace c123 {

// One reconstruction case: the input photograph with its precomputed mask
// and (relative) depth, the text description, and the camera pose the
// photograph corresponds to.
struct CaseInput {
    Image image;  // H x W x 3 in [0,1], white-composited ground truth
    Image mask;   // H x W binary {0,1}; 1 = foreground
    Image depth;  // H x W, nonnegative, valid where mask = 1; may be empty
    std::string prompt;
    CameraPose reference_pose;

    bool has_depth() const { return !depth.empty(); }

    void validate() const {
        if (image.empty() || image.channels != 3)
            throw std::invalid_argument("CaseInput: image must be H x W x 3");
        if (mask.height != image.height || mask.width != image.width || mask.channels != 1)
            throw std::invalid_argument("CaseInput: mask dimensions must match image");
        if (has_depth() &&
            (depth.height != image.height || depth.width != image.width || depth.channels != 1))
            throw std::invalid_argument("CaseInput: depth dimensions must match image");
        for (double v : mask.data)
            if (v != 0.0 && v != 1.0) throw std::invalid_argument("CaseInput: mask must be binary");
    }
};

struct LossWeights {
    double rgb = 5.0;
    double mask = 0.5;
    double depth = 0.1;
};

// Pixels participate in the depth term only when the ground-truth mask is on
// and the render actually hit something.
inline constexpr double kDepthAlphaThreshold = 1e-3;
inline constexpr double kPearsonEpsilon = 1e-8;

namespace detail {

inline void require_case_match(const RenderedView& view, const CaseInput& c, const char* where) {
    if (view.rgb.height != c.image.height || view.rgb.width != c.image.width)
        throw std::invalid_argument(std::string(where) + ": rendered/case dimension mismatch");
}

// rendered.rgb is composited over view.background; re-express it over white.
inline double white_composited(const RenderedView& view, int r, int c, int ch) {
    const double bg = view.background[ch];
    return view.rgb.at(r, c, ch) + (1.0 - view.alpha.at(r, c, 0)) * (1.0 - bg);
}

}  // namespace detail

// MSE between the white-composited render and the case image, over all
// pixels and channels.
inline double rgb_loss(const RenderedView& view, const CaseInput& c) {
    detail::require_case_match(view, c, "rgb_loss");
    double sum = 0.0;
    for (int r = 0; r < view.rgb.height; ++r)
        for (int col = 0; col < view.rgb.width; ++col)
            for (int ch = 0; ch < 3; ++ch) {
                const double d = detail::white_composited(view, r, col, ch) - c.image.at(r, col, ch);
                sum += d * d;
            }
    return sum / static_cast<double>(view.rgb.size());
}

// MSE between the soft render mask (accumulated alpha) and the binary mask.
inline double mask_loss(const RenderedView& view, const CaseInput& c) {
    detail::require_case_match(view, c, "mask_loss");
    double sum = 0.0;
    for (size_t i = 0; i < view.alpha.data.size(); ++i) {
        const double d = view.alpha.data[i] - c.mask.data[i];
        sum += d * d;
    }
    return sum / static_cast<double>(view.alpha.data.size());
}

enum class DepthLossStatus { kOk, kDegenerate };

// Negative Pearson correlation of rendered depth against the case depth over
// the jointly valid pixel set. Affine-invariant in either signal; degenerate
// sets (fewer than 2 pixels, or zero variance) yield 0 with a flag instead
// of an error.
inline double depth_loss(const RenderedView& view, const CaseInput& c,
                         DepthLossStatus* status = nullptr) {
    detail::require_case_match(view, c, "depth_loss");
    if (!c.has_depth()) throw std::invalid_argument("depth_loss: case has no depth raster");
    if (status) *status = DepthLossStatus::kOk;

    double sx = 0.0, sy = 0.0;
    int n = 0;
    for (size_t i = 0; i < view.depth.data.size(); ++i) {
        if (c.mask.data[i] != 1.0 || view.alpha.data[i] < kDepthAlphaThreshold) continue;
        sx += view.depth.data[i];
        sy += c.depth.data[i];
        ++n;
    }
    if (n < 2) {
        if (status) *status = DepthLossStatus::kDegenerate;
        return 0.0;
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < view.depth.data.size(); ++i) {
        if (c.mask.data[i] != 1.0 || view.alpha.data[i] < kDepthAlphaThreshold) continue;
        const double cx = view.depth.data[i] - mx;
        const double cy = c.depth.data[i] - my;
        sxx += cx * cx;
        syy += cy * cy;
        sxy += cx * cy;
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        if (status) *status = DepthLossStatus::kDegenerate;
        return 0.0;
    }
    return -sxy / (std::sqrt(sxx * syy) + kPearsonEpsilon);
}

struct LossBreakdown {
    double rgb = 0.0;
    double mask = 0.0;
    double depth = 0.0;
    double total = 0.0;
    DepthLossStatus depth_status = DepthLossStatus::kOk;
};

inline LossBreakdown rec_loss(const RenderedView& view, const CaseInput& c, const LossWeights& w) {
    LossBreakdown out;
    out.rgb = rgb_loss(view, c);
    out.mask = mask_loss(view, c);
    out.depth = (w.depth != 0.0 && c.has_depth()) ? depth_loss(view, c, &out.depth_status) : 0.0;
    out.total = w.rgb * out.rgb + w.mask * out.mask + w.depth * out.depth;
    return out;
}

// Analytic adjoints of rec_loss with respect to the rendered rasters. The
// depth-validity gate is treated as a constant mask.
inline RenderAdjoints rec_loss_backward(const RenderedView& view, const CaseInput& c,
                                        const LossWeights& w) {
    detail::require_case_match(view, c, "rec_loss_backward");
    const int h = view.rgb.height, wd = view.rgb.width;
    RenderAdjoints adj;
    adj.d_rgb = Image(h, wd, 3);
    adj.d_alpha = Image(h, wd, 1);
    adj.d_depth = Image(h, wd, 1);

    const double rgb_scale = 2.0 * w.rgb / static_cast<double>(view.rgb.size());
    const double mask_scale = 2.0 * w.mask / static_cast<double>(view.alpha.size());
    for (int r = 0; r < h; ++r)
        for (int col = 0; col < wd; ++col) {
            double d_alpha = mask_scale * (view.alpha.at(r, col, 0) - c.mask.at(r, col, 0));
            for (int ch = 0; ch < 3; ++ch) {
                const double diff = detail::white_composited(view, r, col, ch) - c.image.at(r, col, ch);
                adj.d_rgb.at(r, col, ch) = rgb_scale * diff;
                // d(white composite)/d(alpha) = background - white
                d_alpha += rgb_scale * diff * (view.background[ch] - 1.0);
            }
            adj.d_alpha.at(r, col, 0) = d_alpha;
        }

    if (w.depth != 0.0 && c.has_depth()) {
        double sx = 0.0, sy = 0.0;
        int n = 0;
        std::vector<char> valid(view.depth.data.size(), 0);
        for (size_t i = 0; i < view.depth.data.size(); ++i) {
            if (c.mask.data[i] != 1.0 || view.alpha.data[i] < kDepthAlphaThreshold) continue;
            valid[i] = 1;
            sx += view.depth.data[i];
            sy += c.depth.data[i];
            ++n;
        }
        if (n >= 2) {
            const double mx = sx / n, my = sy / n;
            double sxx = 0.0, syy = 0.0, sxy = 0.0;
            for (size_t i = 0; i < view.depth.data.size(); ++i) {
                if (!valid[i]) continue;
                const double cx = view.depth.data[i] - mx;
                const double cy = c.depth.data[i] - my;
                sxx += cx * cx;
                syy += cy * cy;
                sxy += cx * cy;
            }
            if (sxx > 0.0 && syy > 0.0) {
                const double s = std::sqrt(sxx * syy);
                const double denom = s + kPearsonEpsilon;
                for (size_t i = 0; i < view.depth.data.size(); ++i) {
                    if (!valid[i]) continue;
                    const double cx = view.depth.data[i] - mx;
                    const double cy = c.depth.data[i] - my;
                    // d rho / d x_i for rho = sxy / (sqrt(sxx*syy) + eps)
                    const double drho = cy / denom - sxy * cx * (syy / s) / (denom * denom);
                    adj.d_depth.data[i] = -w.depth * drho;
                }
            }
        }
    }
    return adj;
}

}  // namespace c123
