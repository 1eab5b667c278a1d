#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "c123/errors.hpp"
#include "c123/raster.hpp"
#include "c123/scene.hpp"

namespace c123 {

// Conditioning for a noise prediction: either a text prompt (2D prior) or a
// reference image with relative camera extrinsics (3D prior).
struct TextCondition {
    std::string prompt;
};

struct ImagePoseCondition {
    const Image* reference = nullptr;
    Mat3 rotation;
    Vec3 translation;
};

using Condition = std::variant<TextCondition, ImagePoseCondition>;

// One noise-prediction query. The first block is what a real adapter sees
// (and what the wire protocol carries); the trailing fields are visible only
// to in-process test doubles, which are defined in terms of the injected
// noise and the clean latent.
struct PredictRequest {
    const Image* z_t = nullptr;
    Condition condition;
    int t_diff = 0;

    const Image* injected_noise = nullptr;
    const Image* clean_latent = nullptr;
    const CameraPose* view_pose = nullptr;
    Vec3 background{1.0, 1.0, 1.0};
};

class NoisePredictor {
  public:
    virtual ~NoisePredictor() = default;
    virtual Image predict_noise(const PredictRequest& request) = 0;
    // Diffusion timeline exposed by the backend.
    virtual int total_diffusion_steps() const = 0;
    virtual double alpha_bar(int t_diff) const = 0;  // cumulative signal coefficient, decreasing
    virtual bool is_oracle() const { return false; }
};

enum class GradientSource { k2D, k3D, kOracle };

// Image-space SDS gradient. `grad` holds the unweighted noise residual
// (predicted minus injected); `weight` is the w(t) factor, applied once at
// the point of use so stacked weightings cannot double-apply it.
struct GuidanceGradient {
    Image grad;
    double weight = 1.0;
    int t_diff = 0;
    GradientSource source = GradientSource::k2D;

    Image effective() const {
        Image out = grad;
        for (double& v : out.data) v *= weight;
        return out;
    }
};

// Uniform integer diffusion-step sampler over the clipped fraction range.
struct DiffusionStepSampler {
    double t_min_frac = 0.02;
    double t_max_frac = 0.98;

    void validate() const {
        if (!(t_min_frac > 0.0 && t_max_frac < 1.0 && t_min_frac < t_max_frac))
            throw std::invalid_argument("DiffusionStepSampler: need 0 < t_min_frac < t_max_frac < 1");
    }

    int sample(std::mt19937_64& rng, int total_steps) const {
        validate();
        const int lo = static_cast<int>(std::ceil(t_min_frac * total_steps));
        const int hi = static_cast<int>(std::floor(t_max_frac * total_steps));
        std::uniform_int_distribution<int> dist(std::max(lo, 1), std::max(hi, std::max(lo, 1)));
        return dist(rng);
    }
};

namespace detail {

// Classic linear-beta diffusion schedule; good enough for every mock.
inline std::vector<double> linear_beta_alpha_bar(int total_steps) {
    std::vector<double> ab(static_cast<size_t>(total_steps) + 1, 1.0);
    const double beta0 = 1e-4, beta1 = 0.02;
    double prod = 1.0;
    for (int t = 1; t <= total_steps; ++t) {
        const double beta =
            total_steps == 1 ? beta0 : beta0 + (beta1 - beta0) * (t - 1) / static_cast<double>(total_steps - 1);
        prod *= 1.0 - beta;
        ab[static_cast<size_t>(t)] = prod;
    }
    return ab;
}

}  // namespace detail

// Shared base for the in-process test doubles: fixed 1000-step timeline with
// a linear-beta cumulative schedule.
class MockPredictorBase : public NoisePredictor {
  public:
    explicit MockPredictorBase(int total_steps = 1000)
        : total_steps_(total_steps), alpha_bar_(detail::linear_beta_alpha_bar(total_steps)) {}

    int total_diffusion_steps() const override { return total_steps_; }

    double alpha_bar(int t_diff) const override {
        if (t_diff < 1 || t_diff > total_steps_)
            throw std::invalid_argument("alpha_bar: t_diff outside [1, total_steps]");
        return alpha_bar_[static_cast<size_t>(t_diff)];
    }

  private:
    int total_steps_;
    std::vector<double> alpha_bar_;
};

// Predicts exactly the injected noise, making every SDS gradient zero.
class EchoPredictor : public MockPredictorBase {
  public:
    using MockPredictorBase::MockPredictorBase;

    Image predict_noise(const PredictRequest& request) override {
        if (!request.injected_noise)
            throw BackendError("EchoPredictor: request carries no injected noise");
        return *request.injected_noise;
    }
};

// Deterministic pose-conditioned double: predicted noise is the injected
// noise plus kappa times the residual between the clean latent and the
// hidden target's render from the same pose and background, so the SDS
// gradient points at the image-space residual against the target.
class OraclePredictor : public MockPredictorBase {
  public:
    OraclePredictor(SceneModel target, double kappa, RenderOptions render_options = {})
        : target_(std::move(target)), kappa_(kappa), render_options_(render_options) {}

    bool is_oracle() const override { return true; }

    Image predict_noise(const PredictRequest& request) override {
        if (!request.injected_noise || !request.clean_latent || !request.view_pose)
            throw BackendError("OraclePredictor: request carries no test-double metadata");
        const Image& z = *request.clean_latent;
        RenderOptions opts = render_options_;
        opts.background = request.background;
        const RenderedView target_view = render(target_, *request.view_pose, z.height, opts);
        Image out = *request.injected_noise;
        for (size_t i = 0; i < out.data.size(); ++i)
            out.data[i] += kappa_ * (z.data[i] - target_view.rgb.data[i]);
        return out;
    }

    const SceneModel& target() const { return target_; }

  private:
    SceneModel target_;
    double kappa_;
    RenderOptions render_options_;
};

inline std::unique_ptr<NoisePredictor> make_oracle_backend(SceneModel target, double kappa = 1.0,
                                                           RenderOptions render_options = {}) {
    return std::make_unique<OraclePredictor>(std::move(target), kappa, render_options);
}

namespace detail {

inline GuidanceGradient sds_grad(const RenderedView& view, Condition condition,
                                 NoisePredictor& backend, int t_diff, const Image& noise,
                                 double w_scale, GradientSource source) {
    require_same_shape(noise, view.rgb, "sds_grad: noise");
    const int total = backend.total_diffusion_steps();
    if (t_diff < 1 || t_diff > total)
        throw std::invalid_argument("sds_grad: t_diff outside [1, total_diffusion_steps]");

    // Identity latent encoder: the latent is the rendered rgb raster.
    const Image& z = view.rgb;
    const double ab = backend.alpha_bar(t_diff);
    const double signal = std::sqrt(ab), noise_coeff = std::sqrt(1.0 - ab);
    Image z_t(z.height, z.width, z.channels);
    for (size_t i = 0; i < z.data.size(); ++i)
        z_t.data[i] = signal * z.data[i] + noise_coeff * noise.data[i];

    PredictRequest request;
    request.z_t = &z_t;
    request.condition = std::move(condition);
    request.t_diff = t_diff;
    request.injected_noise = &noise;
    request.clean_latent = &z;
    request.view_pose = &view.pose;
    request.background = view.background;

    Image predicted;
    try {
        predicted = backend.predict_noise(request);
    } catch (const BackendError&) {
        throw;
    } catch (const std::exception& e) {
        throw BackendError(std::string("noise predictor failed: ") + e.what());
    }
    if (!same_shape(predicted, z_t))
        throw BackendError("noise predictor returned a raster of the wrong shape");
    if (!all_finite(predicted)) throw NumericError("noise predictor returned non-finite values");

    GuidanceGradient out;
    out.grad = Image(z.height, z.width, z.channels);
    for (size_t i = 0; i < z.data.size(); ++i) out.grad.data[i] = predicted.data[i] - noise.data[i];
    out.weight = w_scale;
    out.t_diff = t_diff;
    out.source = backend.is_oracle() ? GradientSource::kOracle : source;
    return out;
}

}  // namespace detail

// Text-conditioned SDS gradient (2D prior).
inline GuidanceGradient sds_grad_2d(const RenderedView& view, const std::string& prompt,
                                    NoisePredictor& backend, int t_diff, const Image& noise,
                                    double w_scale = 1.0) {
    return detail::sds_grad(view, TextCondition{prompt}, backend, t_diff, noise, w_scale,
                            GradientSource::k2D);
}

// Image-and-pose-conditioned SDS gradient (3D prior). The condition carries
// the reference image and the relative extrinsics from the reference camera
// to the rendered view's camera.
inline GuidanceGradient sds_grad_3d(const RenderedView& view, const Image& reference_image,
                                    const CameraPose& reference_pose, NoisePredictor& backend,
                                    int t_diff, const Image& noise, double w_scale = 1.0) {
    const RelativePose rel = relative_pose(view.pose, reference_pose);
    ImagePoseCondition cond;
    cond.reference = &reference_image;
    cond.rotation = rel.rotation;
    cond.translation = rel.translation;
    return detail::sds_grad(view, cond, backend, t_diff, noise, w_scale, GradientSource::k3D);
}

}  // namespace c123
