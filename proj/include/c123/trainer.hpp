#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "c123/boundary.hpp"
#include "c123/errors.hpp"
#include "c123/guidance.hpp"
#include "c123/image_io.hpp"
#include "c123/losses.hpp"
#include "c123/raster.hpp"
#include "c123/scene.hpp"
#include "c123/schedule.hpp"

namespace c123 {

// Adam with float32 parameters and double moment state. Updates are computed
// in double and rounded once on the way back into the grid.
struct AdamParams {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-15;
};

struct AdamState {
    long step = 0;
    std::vector<double> m, v;

    void init(size_t n) {
        step = 0;
        m.assign(n, 0.0);
        v.assign(n, 0.0);
    }
};

inline void adam_step(std::vector<float>& params, const std::vector<double>& grads,
                      AdamState& state, const AdamParams& hp) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: size mismatch");
    state.step += 1;
    const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        const double p = static_cast<double>(params[i]) - hp.learning_rate * mhat / (std::sqrt(vhat) + hp.eps);
        params[i] = static_cast<float>(p);
    }
}

enum class Stage { kInit3D, kDynamic };
enum class ViewKind { kReference, kNovel };

// When the INIT3D -> DYNAMIC switch happens: detected at runtime, forced to
// iteration 0, or suppressed for the whole run (the two ablation arms).
enum class BoundaryMode { kAuto, kStart, kEnd };

inline const char* stage_name(Stage s) { return s == Stage::kInit3D ? "INIT3D" : "DYNAMIC"; }
inline const char* view_kind_name(ViewKind k) { return k == ViewKind::kReference ? "REFERENCE" : "NOVEL"; }

struct StageState {
    Stage stage = Stage::kInit3D;
    long iteration = 0;               // completed global steps
    long transition_iteration = -1;   // global step after which DYNAMIC began; -1 while unset
    SimilarityHistory history;
};

struct TrainConfig {
    long total_iterations = 10000;
    unsigned long long seed = 0;
    int resolution = 64;
    int grid_size = 32;
    double bbox_half = 1.0;
    RenderOptions render;
    // Training steps draw a fresh uniform gray background so the field
    // cannot satisfy the losses by painting the backdrop; evaluation and
    // detection renders stay on fixed white.
    bool random_background = true;

    double p_ref = 0.25;
    double camera_radius = 2.0;
    double camera_fov_deg = 60.0;
    double novel_elevation_min = -10.0;
    double novel_elevation_max = 45.0;

    LossWeights loss;
    AdamParams adam;
    BoundaryConfig boundary;
    BoundaryMode boundary_mode = BoundaryMode::kAuto;

    ScheduleKind schedule_kind = ScheduleKind::kExp;
    bool schedule_uncorrected = false;
    bool schedule_clamp = true;

    DiffusionStepSampler step_sampler;
    double guidance_weight = 1.0;

    long checkpoint_interval = 500;
    long upgrade_iteration = -1;
    std::function<void(SceneModel&)> upgrade_hook;

    double init_density_inside = 0.1;
    double init_density_outside = 0.001;

    void validate() const {
        if (total_iterations < 0) throw std::invalid_argument("TrainConfig: total_iterations must be >= 0");
        if (!(p_ref > 0.0 && p_ref < 1.0))
            throw std::invalid_argument("TrainConfig: p_ref must lie in (0, 1)");
        if (resolution < 8) throw std::invalid_argument("TrainConfig: resolution must be >= 8");
        if (grid_size < 2) throw std::invalid_argument("TrainConfig: grid_size must be >= 2");
        if (bbox_half <= 0.0) throw std::invalid_argument("TrainConfig: bbox_half must be > 0");
        if (novel_elevation_min > novel_elevation_max)
            throw std::invalid_argument("TrainConfig: elevation range inverted");
        if (checkpoint_interval < 1) throw std::invalid_argument("TrainConfig: checkpoint_interval must be >= 1");
        step_sampler.validate();
    }
};

struct Backends {
    NoisePredictor* guidance_3d = nullptr;
    NoisePredictor* guidance_2d = nullptr;
    EmbeddingModel* embedder = nullptr;
};

struct ViewSample {
    ViewKind kind = ViewKind::kReference;
    CameraPose pose;
};

// Reference view with probability p_ref, otherwise a novel view with azimuth
// uniform over [0, 360) and elevation uniform over the configured range.
// Draw order is fixed: one uniform for the branch, then azimuth, elevation.
inline ViewSample sample_view(const TrainConfig& cfg, const CameraPose& reference_pose,
                              std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < cfg.p_ref) return {ViewKind::kReference, reference_pose};
    std::uniform_real_distribution<double> az(0.0, 360.0);
    std::uniform_real_distribution<double> el(cfg.novel_elevation_min, cfg.novel_elevation_max);
    const double a = az(rng);
    const double e = el(rng);
    return {ViewKind::kNovel, pose_from_spherical(a, e, cfg.camera_radius, cfg.camera_fov_deg)};
}

// Faint centered blob: activated density init_density_inside within a sphere
// of half the bbox half-extent, init_density_outside elsewhere, colors mid
// gray. Gives novel-view guidance a nonzero gradient from step one.
inline SceneModel make_initial_scene(const TrainConfig& cfg) {
    SceneModel scene = SceneModel::zeros(cfg.grid_size, cfg.bbox_half);
    const int d = cfg.grid_size;
    const double spacing = 2.0 * cfg.bbox_half / (d - 1);
    const double r_inside = 0.5 * cfg.bbox_half;
    const float raw_inside = static_cast<float>(inverse_softplus(cfg.init_density_inside));
    const float raw_outside = static_cast<float>(inverse_softplus(cfg.init_density_outside));
    for (int z = 0; z < d; ++z)
        for (int y = 0; y < d; ++y)
            for (int x = 0; x < d; ++x) {
                const Vec3 p{-cfg.bbox_half + x * spacing, -cfg.bbox_half + y * spacing,
                             -cfg.bbox_half + z * spacing};
                const size_t idx = static_cast<size_t>((z * d + y) * d + x);
                scene.density_grid[idx] = norm(p) <= r_inside ? raw_inside : raw_outside;
            }
    return scene;
}

struct TrainResult {
    SceneModel scene;
    StageState state;
    long init3d_steps = 0;
    long dynamic_steps = 0;
    long upgrade_invocations = 0;
    std::string log_path;
    std::string checkpoint_path;
    std::vector<std::string> render_paths;
};

namespace detail {

inline std::string checkpoint_name(long iteration) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "checkpoint_%06ld.ckpt", iteration);
    return buf;
}

inline Image draw_noise(std::mt19937_64& rng, int resolution) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Image noise(resolution, resolution, 3);
    for (double& v : noise.data) v = gauss(rng);
    return noise;
}

inline void require_finite_grids(const SceneModel& scene, const std::string& out_dir,
                                 const char* when) {
    for (float v : scene.density_grid)
        if (!std::isfinite(v)) {
            save_checkpoint(scene, out_dir + "/checkpoint_abort.ckpt");
            throw NumericError(std::string("non-finite density after ") + when);
        }
    for (float v : scene.color_grid)
        if (!std::isfinite(v)) {
            save_checkpoint(scene, out_dir + "/checkpoint_abort.ckpt");
            throw NumericError(std::string("non-finite color after ") + when);
        }
}

}  // namespace detail

// Full two-stage optimization. Writes run.ndjson (one record per step),
// periodic and final checkpoints, and final renders from the detection views
// plus the reference pose into out_dir. Deterministic for a fixed config:
// one seeded generator drives every random draw, detection renders consume
// no randomness, and all artifacts are byte-stable across reruns.
inline TrainResult run(const CaseInput& case_input, const TrainConfig& cfg_in,
                       const Backends& backends, const std::string& out_dir) {
    TrainConfig cfg = cfg_in;
    cfg.validate();
    case_input.validate();
    if (!backends.guidance_3d) throw std::invalid_argument("run: no 3D guidance backend");
    if (cfg.boundary.views.empty())
        cfg.boundary.views = default_detection_views(cfg.camera_radius, cfg.camera_fov_deg);
    cfg.boundary.validate();

    std::filesystem::create_directories(out_dir);

    TrainResult result;
    result.scene = make_initial_scene(cfg);
    StageState& state = result.state;
    if (cfg.boundary_mode == BoundaryMode::kStart) {
        state.stage = Stage::kDynamic;
        state.transition_iteration = 0;
    }

    AdamState adam_density, adam_color;
    adam_density.init(result.scene.density_grid.size());
    adam_color.init(result.scene.color_grid.size());

    std::mt19937_64 rng(cfg.seed);

    result.log_path = out_dir + "/run.ndjson";
    std::ofstream log(result.log_path, std::ios::binary | std::ios::trunc);
    if (!log) throw std::invalid_argument("run: cannot open log " + result.log_path);

    ScheduleSpec schedule;
    schedule.kind = cfg.schedule_kind;
    schedule.uncorrected = cfg.schedule_uncorrected;
    schedule.clamp = cfg.schedule_clamp;
    schedule.total_iterations = std::max<long>(1, cfg.total_iterations - std::max<long>(state.transition_iteration, 0));

    GridGrads grads = GridGrads::zeros(result.scene);

    for (long i = 1; i <= cfg.total_iterations; ++i) {
        const ViewSample view = sample_view(cfg, case_input.reference_pose, rng);
        RenderOptions step_opts = cfg.render;
        if (cfg.random_background) {
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            const double gray = unit(rng);
            step_opts.background = Vec3{gray, gray, gray};
        }
        const RenderedView rendered = render(result.scene, view.pose, cfg.resolution, step_opts);

        nlohmann::json rec;
        rec["iter"] = i;
        rec["stage"] = stage_name(state.stage);
        rec["view"] = view_kind_name(view.kind);
        rec["azimuth"] = view.pose.azimuth_deg;
        rec["elevation"] = view.pose.elevation_deg;

        RenderAdjoints adjoints;
        if (view.kind == ViewKind::kReference) {
            const LossBreakdown losses = rec_loss(rendered, case_input, cfg.loss);
            adjoints = rec_loss_backward(rendered, case_input, cfg.loss);
            rec["loss_rgb"] = losses.rgb;
            rec["loss_mask"] = losses.mask;
            rec["loss_depth"] = losses.depth;
            rec["loss_total"] = losses.total;
            if (losses.depth_status == DepthLossStatus::kDegenerate) rec["depth_degenerate"] = true;
        } else {
            const Image noise = detail::draw_noise(rng, cfg.resolution);
            const int t3 = cfg.step_sampler.sample(rng, backends.guidance_3d->total_diffusion_steps());
            const GuidanceGradient g3 =
                sds_grad_3d(rendered, case_input.image, case_input.reference_pose,
                            *backends.guidance_3d, t3, noise, cfg.guidance_weight);
            rec["t3d"] = t3;
            Image img_grad;
            if (state.stage == Stage::kInit3D) {
                img_grad = g3.effective();
                rec["w3d"] = 1.0;
                rec["w2d"] = 0.0;
            } else {
                if (!backends.guidance_2d) throw std::invalid_argument("run: no 2D guidance backend");
                const int t2 = cfg.step_sampler.sample(rng, backends.guidance_2d->total_diffusion_steps());
                const GuidanceGradient g2 = sds_grad_2d(rendered, case_input.prompt,
                                                        *backends.guidance_2d, t2, noise,
                                                        cfg.guidance_weight);
                const long stage2_clock = i - state.transition_iteration - 1;
                const PriorWeights w = prior_weights(schedule, stage2_clock);
                img_grad = blend_prior_gradients(g3, g2, w);
                rec["t2d"] = t2;
                rec["w3d"] = w.w3d;
                rec["w2d"] = w.w2d;
            }
            const double scale = 1.0 / static_cast<double>(img_grad.data.size());
            for (double& v : img_grad.data) v *= scale;
            adjoints.d_rgb = std::move(img_grad);
        }

        std::fill(grads.density.begin(), grads.density.end(), 0.0);
        std::fill(grads.color.begin(), grads.color.end(), 0.0);
        render_backward(result.scene, view.pose, cfg.resolution, step_opts, adjoints, grads);
        if (!grads.all_finite()) {
            save_checkpoint(result.scene, out_dir + "/checkpoint_abort.ckpt");
            log.flush();
            throw NumericError("non-finite gradient at iteration " + std::to_string(i));
        }

        adam_step(result.scene.density_grid, grads.density, adam_density, cfg.adam);
        adam_step(result.scene.color_grid, grads.color, adam_color, cfg.adam);
        detail::require_finite_grids(result.scene, out_dir, "optimizer update");

        state.iteration = i;
        if (state.stage == Stage::kInit3D) ++result.init3d_steps; else ++result.dynamic_steps;

        if (i == cfg.upgrade_iteration) {
            ++result.upgrade_invocations;
            if (cfg.upgrade_hook) cfg.upgrade_hook(result.scene);
        }

        if (state.stage == Stage::kInit3D && cfg.boundary_mode == BoundaryMode::kAuto &&
            i % cfg.boundary.h == 0) {
            if (!backends.embedder) throw std::invalid_argument("run: no embedding backend");
            const long k = i / cfg.boundary.h;
            RenderOptions detect_opts = cfg.render;
            detect_opts.background = Vec3{1.0, 1.0, 1.0};
            const double sim = multiview_similarity(result.scene, case_input.prompt, cfg.boundary,
                                                    *backends.embedder, cfg.resolution, detect_opts);
            state.history.record(static_cast<int>(k), sim);
            rec["detection"] = k;
            rec["similarity"] = sim;
            try {
                if (const auto rate = changing_rate(state.history, cfg.boundary.window)) rec["rate"] = *rate;
            } catch (const NumericError&) {
                rec["rate_degenerate"] = true;
            }
            if (should_transition(state.history, cfg.boundary)) {
                state.stage = Stage::kDynamic;
                state.transition_iteration = i;
                schedule.total_iterations = std::max<long>(1, cfg.total_iterations - i);
                rec["transition"] = true;
                save_checkpoint(result.scene, out_dir + "/checkpoint_transition.ckpt");
            }
        }

        if (i % cfg.checkpoint_interval == 0)
            save_checkpoint(result.scene, out_dir + "/" + detail::checkpoint_name(i));

        log << rec.dump() << '\n';
        log.flush();
    }

    result.checkpoint_path = out_dir + "/checkpoint_final.ckpt";
    save_checkpoint(result.scene, result.checkpoint_path);

    RenderOptions eval_opts = cfg.render;
    eval_opts.background = Vec3{1.0, 1.0, 1.0};
    for (size_t k = 0; k < cfg.boundary.views.size(); ++k) {
        const RenderedView v = render(result.scene, cfg.boundary.views[k], cfg.resolution, eval_opts);
        char name[32];
        std::snprintf(name, sizeof(name), "render_eval_%02zu.png", k);
        const std::string path = out_dir + "/" + name;
        write_png_rgb(path, v.rgb);
        result.render_paths.push_back(path);
    }
    const RenderedView ref_view =
        render(result.scene, case_input.reference_pose, cfg.resolution, eval_opts);
    const std::string ref_path = out_dir + "/render_reference.png";
    write_png_rgb(ref_path, ref_view.rgb);
    result.render_paths.push_back(ref_path);

    return result;
}

}  // namespace c123
