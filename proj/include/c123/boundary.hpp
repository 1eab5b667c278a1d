#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "c123/errors.hpp"
#include "c123/raster.hpp"
#include "c123/scene.hpp"

namespace c123 {

// Embeds rasters and prompts into a shared space where cosine similarity is
// meaningful. Real deployments adapt a CLIP-style encoder over the wire;
// tests use the downsampling double below. Outputs are unit vectors.
class EmbeddingModel {
  public:
    virtual ~EmbeddingModel() = default;
    virtual std::vector<double> embed_image(const Image& image) = 0;
    virtual std::vector<double> embed_text(const std::string& prompt) = 0;
    virtual int dim() const = 0;
};

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("cosine_similarity: mismatched or empty vectors");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    if (denom == 0.0) throw NumericError("cosine_similarity: zero-norm embedding");
    return dot / denom;
}

// When and how structure formation is declared finished.
struct BoundaryConfig {
    int h = 20;                 // detection cadence, iterations between probes
    int window = 5;             // sliding window L over consecutive increments
    double delta = 2.5e-4;      // transition threshold on the changing rate
    int warmup_detections = 6;  // probes required before a transition may fire (default L+1)
    bool signed_rate = true;    // a falling similarity also counts as plateaued
    std::vector<CameraPose> views;

    void validate() const {
        if (h < 1) throw std::invalid_argument("BoundaryConfig: h must be >= 1");
        if (window < 1) throw std::invalid_argument("BoundaryConfig: window must be >= 1");
        if (!(delta > 0.0)) throw std::invalid_argument("BoundaryConfig: delta must be > 0");
        if (views.empty()) throw std::invalid_argument("BoundaryConfig: no detection views");
    }
};

// Eight azimuths on the equator at the training camera radius.
inline std::vector<CameraPose> default_detection_views(double radius, double fov_deg) {
    std::vector<CameraPose> views;
    for (int k = 0; k < 8; ++k)
        views.push_back(pose_from_spherical(45.0 * k, 0.0, radius, fov_deg));
    return views;
}

// Similarity probes in detection order, indexed by strictly increasing
// detection count.
class SimilarityHistory {
  public:
    void record(int detection_index, double similarity) {
        if (!indices_.empty() && detection_index <= indices_.back())
            throw std::invalid_argument("SimilarityHistory: detection indices must increase");
        indices_.push_back(detection_index);
        values_.push_back(similarity);
    }

    size_t size() const { return values_.size(); }
    double value(size_t i) const { return values_.at(i); }
    int detection_index(size_t i) const { return indices_.at(i); }
    const std::vector<double>& values() const { return values_; }

  private:
    std::vector<int> indices_;
    std::vector<double> values_;
};

// Mean cosine similarity between the prompt embedding and renders from the
// detection views. Rendering is deterministic and consumes no RNG state.
inline double multiview_similarity(const SceneModel& scene, const std::string& prompt,
                                   const BoundaryConfig& config, EmbeddingModel& embedder,
                                   int resolution, const RenderOptions& opts = {}) {
    config.validate();
    std::vector<double> target;
    try {
        target = embedder.embed_text(prompt);
    } catch (const std::invalid_argument&) {
        throw;
    } catch (const std::exception& e) {
        throw BackendError(std::string("embedding backend failed: ") + e.what());
    }
    double total = 0.0;
    for (const CameraPose& pose : config.views) {
        const RenderedView view = render(scene, pose, resolution, opts);
        std::vector<double> img;
        try {
            img = embedder.embed_image(view.rgb);
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception& e) {
            throw BackendError(std::string("embedding backend failed: ") + e.what());
        }
        total += cosine_similarity(img, target);
    }
    return total / static_cast<double>(config.views.size());
}

// Mean of the last `window` consecutive relative increments:
// (1/L) * sum over i of (S[i] - S[i-1]) / S[i-1]. Needs window+1 probes;
// nullopt while the history is shorter.
inline std::optional<double> changing_rate(const SimilarityHistory& history, int window) {
    if (window < 1) throw std::invalid_argument("changing_rate: window must be >= 1");
    const size_t need = static_cast<size_t>(window) + 1;
    if (history.size() < need) return std::nullopt;
    const size_t n = history.size();
    double sum = 0.0;
    for (size_t i = n - static_cast<size_t>(window); i < n; ++i) {
        const double prev = history.value(i - 1);
        if (prev == 0.0) throw NumericError("changing_rate: similarity-degenerate (zero S)");
        sum += (history.value(i) - prev) / prev;
    }
    return sum / static_cast<double>(window);
}

// True once enough probes exist and the similarity has plateaued. A
// degenerate window (zero similarity) never fires the transition.
inline bool should_transition(const SimilarityHistory& history, const BoundaryConfig& config) {
    if (history.size() < static_cast<size_t>(config.warmup_detections)) return false;
    std::optional<double> rate;
    try {
        rate = changing_rate(history, config.window);
    } catch (const NumericError&) {
        return false;
    }
    if (!rate) return false;
    const double r = config.signed_rate ? *rate : std::abs(*rate);
    return r < config.delta;
}

// Embedding test double: average-pools the grayscale image onto an 8x8 grid
// and L2-normalizes, giving a 64-dim vector that tracks coarse structure.
// The "text" side embeds a designated target raster so similarities compare
// the scene against a concrete goal image.
class DownsampleEmbedder : public EmbeddingModel {
  public:
    static constexpr int kGrid = 8;

    DownsampleEmbedder() = default;
    explicit DownsampleEmbedder(Image text_target) : text_target_(std::move(text_target)) {}

    int dim() const override { return kGrid * kGrid; }

    std::vector<double> embed_image(const Image& image) override {
        if (image.empty()) throw std::invalid_argument("DownsampleEmbedder: empty image");
        if (image.height < kGrid || image.width < kGrid)
            throw std::invalid_argument("DownsampleEmbedder: image smaller than the pooling grid");
        std::vector<double> out(static_cast<size_t>(kGrid * kGrid), 0.0);
        for (int gy = 0; gy < kGrid; ++gy) {
            const int r0 = gy * image.height / kGrid;
            const int r1 = (gy + 1) * image.height / kGrid;
            for (int gx = 0; gx < kGrid; ++gx) {
                const int c0 = gx * image.width / kGrid;
                const int c1 = (gx + 1) * image.width / kGrid;
                double sum = 0.0;
                for (int r = r0; r < r1; ++r)
                    for (int c = c0; c < c1; ++c) sum += gray(image, r, c);
                out[static_cast<size_t>(gy * kGrid + gx)] =
                    sum / static_cast<double>((r1 - r0) * (c1 - c0));
            }
        }
        normalize(out);
        return out;
    }

    std::vector<double> embed_text(const std::string&) override {
        if (text_target_.empty())
            throw std::invalid_argument("DownsampleEmbedder: no target raster configured");
        return embed_image(text_target_);
    }

  private:
    static double gray(const Image& image, int r, int c) {
        if (image.channels == 1) return image.at(r, c, 0);
        double sum = 0.0;
        for (int ch = 0; ch < std::min(image.channels, 3); ++ch) sum += image.at(r, c, ch);
        return sum / static_cast<double>(std::min(image.channels, 3));
    }

    static void normalize(std::vector<double>& v) {
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) {
            const double uniform = 1.0 / std::sqrt(static_cast<double>(v.size()));
            std::fill(v.begin(), v.end(), uniform);
            return;
        }
        for (double& x : v) x /= norm;
    }

    Image text_target_;
};

}  // namespace c123
