#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "c123/errors.hpp"
#include "c123/guidance.hpp"
#include "c123/raster.hpp"

namespace c123 {

enum class ScheduleKind { kExp, kLinear, kLog };

// Stage-2 blending schedule. The default linear/log forms are the monotone
// ones (3D weight decreasing over the stage); `uncorrected` switches to the
// mirrored/unshifted variants for ablation runs.
struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::kExp;
    long total_iterations = 1;  // T, length of stage 2
    bool uncorrected = false;
    bool clamp = true;

    void validate() const {
        if (total_iterations < 1)
            throw std::invalid_argument("ScheduleSpec: total_iterations must be >= 1");
    }
};

struct PriorWeights {
    double w3d = 1.0;
    double w2d = 0.0;
};

inline PriorWeights prior_weights(const ScheduleSpec& spec, long iteration) {
    spec.validate();
    if (iteration < 0 || iteration > spec.total_iterations)
        throw std::invalid_argument("prior_weights: iteration outside [0, total_iterations]");
    const double frac = static_cast<double>(iteration) / static_cast<double>(spec.total_iterations);
    PriorWeights w;
    switch (spec.kind) {
        case ScheduleKind::kExp:
            w.w3d = std::exp(-frac);
            w.w2d = 1.0 - w.w3d;
            break;
        case ScheduleKind::kLinear:
            w.w3d = spec.uncorrected ? frac : 1.0 - frac;
            w.w2d = 1.0 - w.w3d;
            break;
        case ScheduleKind::kLog:
            if (spec.uncorrected) {
                if (iteration == 0 && !spec.clamp)
                    throw NumericError("prior_weights: uncorrected log schedule undefined at iteration 0");
                w.w3d = std::log2(frac);
                if (spec.clamp) w.w3d = std::clamp(w.w3d, 0.0, 1.0);
            } else {
                w.w3d = 1.0 - std::log2(1.0 + frac);
            }
            w.w2d = 1.0 - w.w3d;
            break;
    }
    return w;
}

// Convex blend of the two guidance gradients, each scaled by its own w(t).
inline Image blend_prior_gradients(const GuidanceGradient& grad_3d, const GuidanceGradient& grad_2d,
                                   const PriorWeights& weights) {
    require_same_shape(grad_3d.grad, grad_2d.grad, "blend_prior_gradients");
    Image out(grad_3d.grad.height, grad_3d.grad.width, grad_3d.grad.channels);
    const double s3 = weights.w3d * grad_3d.weight;
    const double s2 = weights.w2d * grad_2d.weight;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = s3 * grad_3d.grad.data[i] + s2 * grad_2d.grad.data[i];
    return out;
}

}  // namespace c123
