#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "c123/c123.hpp"

namespace testsupport {

// Scratch directory removed on destruction.
class TempDir {
  public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "c123_XXXXXX").string();
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
        path_ = buf.data();
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::string& path() const { return path_; }
    std::string sub(const std::string& name) const { return path_ + "/" + name; }

  private:
    std::string path_;
};

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Counts predictions made through an inner backend.
class CountingPredictor : public c123::NoisePredictor {
  public:
    explicit CountingPredictor(c123::NoisePredictor& inner) : inner_(inner) {}

    c123::Image predict_noise(const c123::PredictRequest& request) override {
        ++calls;
        return inner_.predict_noise(request);
    }
    int total_diffusion_steps() const override { return inner_.total_diffusion_steps(); }
    double alpha_bar(int t) const override { return inner_.alpha_bar(t); }
    bool is_oracle() const override { return inner_.is_oracle(); }

    long calls = 0;

  private:
    c123::NoisePredictor& inner_;
};

// Predicts the injected noise plus a constant offset per channel.
class ConstantOffsetPredictor : public c123::MockPredictorBase {
  public:
    explicit ConstantOffsetPredictor(double offset) : offset_(offset) {}

    c123::Image predict_noise(const c123::PredictRequest& request) override {
        if (!request.injected_noise) throw c123::BackendError("no injected noise");
        c123::Image out = *request.injected_noise;
        for (double& v : out.data) v += offset_;
        return out;
    }

  private:
    double offset_;
};

// Feeds the boundary detector a scripted similarity sequence: the n-th
// detection reads trace[n] (last value repeating past the end). Exploits the
// probe call pattern of one embed_text per detection: the text embedding is
// e0 and every image embedding is a unit vector whose cosine against e0 is
// the scripted value.
class TraceEmbedder : public c123::EmbeddingModel {
  public:
    explicit TraceEmbedder(std::vector<double> trace) : trace_(std::move(trace)) {}

    std::vector<double> embed_text(const std::string&) override {
        current_ = trace_[std::min(detections_, trace_.size() - 1)];
        ++detections_;
        std::vector<double> e(dim(), 0.0);
        e[0] = 1.0;
        return e;
    }

    std::vector<double> embed_image(const c123::Image&) override {
        std::vector<double> e(dim(), 0.0);
        e[0] = current_;
        e[1] = std::sqrt(std::max(0.0, 1.0 - current_ * current_));
        return e;
    }

    int dim() const override { return 4; }

  private:
    std::vector<double> trace_;
    size_t detections_ = 0;
    double current_ = 1.0;
};

// Smooth asymmetric blob with position-dependent colors; representable
// exactly by a grid of the same size, so oracle reconstructions can in
// principle reach the cap.
inline c123::SceneModel make_target_scene(int grid_size, double bbox_half) {
    c123::SceneModel scene = c123::SceneModel::zeros(grid_size, bbox_half);
    const int d = grid_size;
    const double spacing = 2.0 * bbox_half / (d - 1);
    for (int z = 0; z < d; ++z)
        for (int y = 0; y < d; ++y)
            for (int x = 0; x < d; ++x) {
                const double px = -bbox_half + x * spacing;
                const double py = -bbox_half + y * spacing;
                const double pz = -bbox_half + z * spacing;
                const double dx = px - 0.15 * bbox_half, dy = py, dz = pz;
                const double r2 = dx * dx + dy * dy + dz * dz;
                const double sigma = 8.0 * std::exp(-6.0 * r2 / (bbox_half * bbox_half));
                const size_t idx = static_cast<size_t>((z * d + y) * d + x);
                scene.density_grid[idx] =
                    static_cast<float>(c123::inverse_softplus(std::max(sigma, 1e-4)));
                scene.color_grid[idx * 3 + 0] = static_cast<float>(1.5 * std::sin(2.0 * px));
                scene.color_grid[idx * 3 + 1] = static_cast<float>(1.5 * std::cos(2.0 * py));
                scene.color_grid[idx * 3 + 2] = static_cast<float>(1.5 * std::sin(2.0 * pz + 1.0));
            }
    return scene;
}

// Case rasters fabricated from a target scene's reference render on white.
inline c123::CaseInput make_case_from_scene(const c123::SceneModel& target,
                                            const c123::CameraPose& reference_pose, int resolution,
                                            const std::string& prompt) {
    c123::RenderOptions opts;
    opts.background = c123::Vec3{1.0, 1.0, 1.0};
    const c123::RenderedView view = c123::render(target, reference_pose, resolution, opts);
    c123::CaseInput c;
    c.image = view.rgb;
    c.mask = c123::Image(resolution, resolution, 1);
    for (size_t i = 0; i < c.mask.data.size(); ++i)
        c.mask.data[i] = view.alpha.data[i] >= 0.5 ? 1.0 : 0.0;
    c.depth = view.depth;
    c.prompt = prompt;
    c.reference_pose = reference_pose;
    return c;
}

// Independent scalar simulation of the detector on a closed-form trace:
// returns the first detection index k where the windowed mean of relative
// increments drops below delta (with the warmup guard), or -1.
inline int simulate_trace_first_fire(const std::vector<double>& trace, int window, double delta,
                                     int warmup) {
    std::vector<double> history;
    for (size_t n = 0; n < trace.size(); ++n) {
        history.push_back(trace[n]);
        if (history.size() < static_cast<size_t>(warmup)) continue;
        if (history.size() < static_cast<size_t>(window) + 1) continue;
        double sum = 0.0;
        for (size_t i = history.size() - window; i < history.size(); ++i)
            sum += (history[i] - history[i - 1]) / history[i - 1];
        if (sum / window < delta) return static_cast<int>(n) + 1;  // detections are 1-indexed
    }
    return -1;
}

}  // namespace testsupport
