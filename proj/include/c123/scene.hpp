#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "c123/raster.hpp"
#include "c123/vecmath.hpp"

namespace c123 {

// Raw-parameter voxel radiance field. Both lattices have side `grid_size`
// and span the cube [-bbox_half, bbox_half]^3 with vertices at the cube
// corners. Parameters are stored unactivated as float32 (the checkpoint
// format); density passes through softplus, color through a logistic squash,
// so the activated field is nonnegative / in [0,1]^3 for any raw values.
struct SceneModel {
    int grid_size = 0;                // D, lattice side, >= 2
    double bbox_half = 1.0;           // half-extent of the world-space cube
    std::vector<float> density_grid;  // D^3, index (z*D + y)*D + x
    std::vector<float> color_grid;    // D^3*3, channel fastest

    static SceneModel zeros(int grid_size, double bbox_half) {
        if (grid_size < 2) throw std::invalid_argument("SceneModel: grid_size must be >= 2");
        if (bbox_half <= 0.0) throw std::invalid_argument("SceneModel: bbox_half must be > 0");
        SceneModel s;
        s.grid_size = grid_size;
        s.bbox_half = bbox_half;
        s.density_grid.assign(static_cast<size_t>(grid_size) * grid_size * grid_size, 0.0f);
        s.color_grid.assign(s.density_grid.size() * 3, 0.0f);
        return s;
    }

    size_t voxel_count() const { return density_grid.size(); }
    size_t parameter_count() const { return density_grid.size() + color_grid.size(); }
};

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_derivative(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
// Raw value whose activated density equals `d` (> 0).
inline double inverse_softplus(double d) { return d > 30.0 ? d : std::log(std::expm1(d)); }

// Spherical camera: azimuth 0 puts the center on +x, elevation 0 on the
// equator, world up is +z, and the camera looks at the origin. `rotation`
// is camera-to-world with camera axes (+x right, +y up, -z forward).
struct CameraPose {
    double azimuth_deg = 0.0;
    double elevation_deg = 0.0;
    double radius = 2.0;
    double fov_deg = 60.0;
    Mat3 rotation;
    Vec3 center;
};

inline CameraPose pose_from_spherical(double azimuth_deg, double elevation_deg, double radius,
                                      double fov_deg) {
    if (radius <= 0.0) throw std::invalid_argument("pose_from_spherical: radius must be > 0");
    if (fov_deg <= 0.0 || fov_deg >= 180.0)
        throw std::invalid_argument("pose_from_spherical: fov must lie in (0, 180)");
    const double az = deg_to_rad(azimuth_deg);
    const double el = deg_to_rad(elevation_deg);
    CameraPose pose;
    pose.azimuth_deg = azimuth_deg;
    pose.elevation_deg = elevation_deg;
    pose.radius = radius;
    pose.fov_deg = fov_deg;
    pose.center = Vec3{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)} * radius;

    Vec3 forward = normalized(-pose.center);
    Vec3 up_hint{0.0, 0.0, 1.0};
    Vec3 right = cross(forward, up_hint);
    if (dot(right, right) < 1e-12) {
        // Looking straight along +-z; any horizontal right vector works.
        up_hint = Vec3{1.0, 0.0, 0.0};
        right = cross(forward, up_hint);
    }
    right = normalized(right);
    Vec3 up = cross(right, forward);
    pose.rotation = Mat3::from_columns(right, up, -forward);
    return pose;
}

// Relative extrinsics mapping reference-camera coordinates into view-camera
// coordinates: X_view = R * X_ref + T.
struct RelativePose {
    Mat3 rotation;
    Vec3 translation;
};

inline RelativePose relative_pose(const CameraPose& view, const CameraPose& reference) {
    RelativePose rel;
    rel.rotation = view.rotation.transposed() * reference.rotation;
    rel.translation = view.rotation.transposed() * (reference.center - view.center);
    return rel;
}

struct RenderOptions {
    int samples_per_ray = 96;
    Vec3 background{1.0, 1.0, 1.0};
};

struct RenderedView {
    Image rgb;    // H x W x 3, composited over `background`
    Image depth;  // H x W, opacity-weighted expected termination depth
    Image alpha;  // H x W, accumulated opacity
    CameraPose pose;
    Vec3 background{1.0, 1.0, 1.0};
    int resolution = 0;
};

// Eq.-style soft mask: the accumulated alpha channel, no binarization.
inline Image render_mask(const RenderedView& view) { return view.alpha; }

// Adjoint rasters for render_backward. Empty rasters mean a zero adjoint.
struct RenderAdjoints {
    Image d_rgb;    // dL/d(composited rgb), H x W x 3
    Image d_alpha;  // dL/d(alpha), H x W
    Image d_depth;  // dL/d(depth), H x W
};

// Gradients of a scalar with respect to the raw grids, accumulated in double.
struct GridGrads {
    std::vector<double> density;
    std::vector<double> color;

    static GridGrads zeros(const SceneModel& scene) {
        GridGrads g;
        g.density.assign(scene.density_grid.size(), 0.0);
        g.color.assign(scene.color_grid.size(), 0.0);
        return g;
    }

    bool all_finite() const {
        for (double v : density)
            if (!std::isfinite(v)) return false;
        for (double v : color)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

namespace detail {

// Slab intersection with the scene cube. Returns false on a miss.
inline bool intersect_bbox(const Vec3& origin, const Vec3& dir, double half, double& t0, double& t1) {
    t0 = 0.0;
    t1 = std::numeric_limits<double>::infinity();
    for (int axis = 0; axis < 3; ++axis) {
        const double o = origin[axis], d = dir[axis];
        if (std::abs(d) < 1e-12) {
            if (o < -half || o > half) return false;
            continue;
        }
        double ta = (-half - o) / d;
        double tb = (half - o) / d;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 >= t1) return false;
    }
    return t1 > t0 && t1 > 0.0;
}

struct TrilinearStencil {
    size_t corner[8];
    double weight[8];
};

// Stencil of the 8 lattice corners around world point p, with interpolation
// weights. Coordinates are clamped to the lattice, so points marginally
// outside the cube (ray endpoints) stay valid.
inline TrilinearStencil trilinear_stencil(const SceneModel& scene, const Vec3& p) {
    const int d = scene.grid_size;
    const double scale = (d - 1) / (2.0 * scene.bbox_half);
    double u[3] = {(p.x + scene.bbox_half) * scale, (p.y + scene.bbox_half) * scale,
                   (p.z + scene.bbox_half) * scale};
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        u[a] = std::clamp(u[a], 0.0, static_cast<double>(d - 1));
        i0[a] = std::min(static_cast<int>(u[a]), d - 2);
        f[a] = u[a] - i0[a];
    }
    TrilinearStencil st;
    int k = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx, ++k) {
                const size_t idx = (static_cast<size_t>(i0[2] + dz) * d + (i0[1] + dy)) * d + (i0[0] + dx);
                st.corner[k] = idx;
                st.weight[k] = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
            }
    return st;
}

inline double sample_density_raw(const SceneModel& scene, const TrilinearStencil& st) {
    double v = 0.0;
    for (int k = 0; k < 8; ++k) v += st.weight[k] * scene.density_grid[st.corner[k]];
    return v;
}

inline Vec3 sample_color_raw(const SceneModel& scene, const TrilinearStencil& st) {
    Vec3 v;
    for (int k = 0; k < 8; ++k) {
        const size_t base = st.corner[k] * 3;
        v.x += st.weight[k] * scene.color_grid[base];
        v.y += st.weight[k] * scene.color_grid[base + 1];
        v.z += st.weight[k] * scene.color_grid[base + 2];
    }
    return v;
}

// Camera ray through the center of pixel (row, col) at a square resolution.
inline Vec3 pixel_ray_direction(const CameraPose& pose, int row, int col, int resolution) {
    const double tan_half = std::tan(deg_to_rad(pose.fov_deg) * 0.5);
    const double ndc_x = ((col + 0.5) / resolution * 2.0 - 1.0) * tan_half;
    const double ndc_y = (1.0 - (row + 0.5) / resolution * 2.0) * tan_half;
    return normalized(pose.rotation * Vec3{ndc_x, ndc_y, -1.0});
}

inline void validate_render_args(const SceneModel& scene, const CameraPose& pose, int resolution,
                                 const RenderOptions& opts) {
    if (resolution < 8) throw std::invalid_argument("render: resolution must be >= 8");
    if (scene.grid_size < 2) throw std::invalid_argument("render: scene grid_size must be >= 2");
    if (opts.samples_per_ray < 1) throw std::invalid_argument("render: samples_per_ray must be >= 1");
    const double h = scene.bbox_half;
    if (std::abs(pose.center.x) <= h && std::abs(pose.center.y) <= h && std::abs(pose.center.z) <= h)
        throw std::invalid_argument("render: camera center lies inside the scene bbox");
}

// Exponent clamp keeping exp(-sigma*dt) strictly positive so the
// transmittance recurrence stays divisible in the backward pass.
inline constexpr double kMaxOpticalStep = 60.0;

}  // namespace detail

// Emission-absorption ray march over a fixed per-ray sample count
// (midpoints of equal segments of the bbox interval, so the operation is a
// pure function of its arguments). Pixels whose ray misses the bbox keep
// alpha 0 and the background color.
inline RenderedView render(const SceneModel& scene, const CameraPose& pose, int resolution,
                           const RenderOptions& opts = {}) {
    detail::validate_render_args(scene, pose, resolution, opts);
    RenderedView view;
    view.rgb = Image(resolution, resolution, 3);
    view.depth = Image(resolution, resolution, 1);
    view.alpha = Image(resolution, resolution, 1);
    view.pose = pose;
    view.background = opts.background;
    view.resolution = resolution;

    const int S = opts.samples_per_ray;
    for (int r = 0; r < resolution; ++r) {
        for (int c = 0; c < resolution; ++c) {
            const Vec3 dir = detail::pixel_ray_direction(pose, r, c, resolution);
            double t0, t1;
            double acc = 0.0, depth_sum = 0.0;
            Vec3 fg;
            if (detail::intersect_bbox(pose.center, dir, scene.bbox_half, t0, t1)) {
                const double dt = (t1 - t0) / S;
                double transmittance = 1.0;
                for (int i = 0; i < S; ++i) {
                    const double t = t0 + (i + 0.5) * dt;
                    const Vec3 p = pose.center + dir * t;
                    const auto st = detail::trilinear_stencil(scene, p);
                    const double sigma = softplus(detail::sample_density_raw(scene, st));
                    const double optical = std::min(sigma * dt, detail::kMaxOpticalStep);
                    const double a = -std::expm1(-optical);
                    const double w = transmittance * a;
                    if (w > 0.0) {
                        const Vec3 raw_c = detail::sample_color_raw(scene, st);
                        fg = fg + Vec3{logistic(raw_c.x), logistic(raw_c.y), logistic(raw_c.z)} * w;
                        acc += w;
                        depth_sum += w * t;
                    }
                    transmittance *= 1.0 - a;
                }
            }
            view.rgb.at(r, c, 0) = fg.x + (1.0 - acc) * opts.background.x;
            view.rgb.at(r, c, 1) = fg.y + (1.0 - acc) * opts.background.y;
            view.rgb.at(r, c, 2) = fg.z + (1.0 - acc) * opts.background.z;
            view.alpha.at(r, c, 0) = acc;
            view.depth.at(r, c, 0) = depth_sum / std::max(acc, 1e-8);
        }
    }
    return view;
}

// Reverse-mode companion of render(). Re-marches each ray, then pushes the
// pixel adjoints (d_rgb over the composited rgb, d_alpha, d_depth) back into
// raw-grid gradients. Repeating the forward recurrence here instead of
// storing per-sample state keeps memory flat in the sample count.
inline void render_backward(const SceneModel& scene, const CameraPose& pose, int resolution,
                            const RenderOptions& opts, const RenderAdjoints& adjoints,
                            GridGrads& grads) {
    detail::validate_render_args(scene, pose, resolution, opts);
    if (!adjoints.d_rgb.empty() && (adjoints.d_rgb.height != resolution || adjoints.d_rgb.width != resolution ||
                                    adjoints.d_rgb.channels != 3))
        throw std::invalid_argument("render_backward: d_rgb shape mismatch");
    if (!adjoints.d_alpha.empty() && (adjoints.d_alpha.height != resolution || adjoints.d_alpha.width != resolution))
        throw std::invalid_argument("render_backward: d_alpha shape mismatch");
    if (!adjoints.d_depth.empty() && (adjoints.d_depth.height != resolution || adjoints.d_depth.width != resolution))
        throw std::invalid_argument("render_backward: d_depth shape mismatch");
    if (grads.density.size() != scene.density_grid.size() ||
        grads.color.size() != scene.color_grid.size())
        throw std::invalid_argument("render_backward: grads not sized for scene (GridGrads::zeros)");

    const int S = opts.samples_per_ray;
    std::vector<double> sample_t(S), sample_w(S), sample_T(S), sample_raw_d(S), sample_optical(S);
    std::vector<Vec3> sample_raw_c(S), sample_act_c(S);
    std::vector<detail::TrilinearStencil> stencils(S);

    for (int r = 0; r < resolution; ++r) {
        for (int c = 0; c < resolution; ++c) {
            const Vec3 g_rgb = adjoints.d_rgb.empty()
                                   ? Vec3{}
                                   : Vec3{adjoints.d_rgb.at(r, c, 0), adjoints.d_rgb.at(r, c, 1),
                                          adjoints.d_rgb.at(r, c, 2)};
            const double g_alpha = adjoints.d_alpha.empty() ? 0.0 : adjoints.d_alpha.at(r, c, 0);
            const double g_depth = adjoints.d_depth.empty() ? 0.0 : adjoints.d_depth.at(r, c, 0);
            if (g_rgb.x == 0.0 && g_rgb.y == 0.0 && g_rgb.z == 0.0 && g_alpha == 0.0 && g_depth == 0.0)
                continue;

            const Vec3 dir = detail::pixel_ray_direction(pose, r, c, resolution);
            double t0, t1;
            if (!detail::intersect_bbox(pose.center, dir, scene.bbox_half, t0, t1)) continue;

            // Forward replay.
            const double dt = (t1 - t0) / S;
            double transmittance = 1.0, acc = 0.0, depth_sum = 0.0;
            for (int i = 0; i < S; ++i) {
                const double t = t0 + (i + 0.5) * dt;
                const Vec3 p = pose.center + dir * t;
                stencils[i] = detail::trilinear_stencil(scene, p);
                sample_raw_d[i] = detail::sample_density_raw(scene, stencils[i]);
                const double sigma = softplus(sample_raw_d[i]);
                sample_optical[i] = std::min(sigma * dt, detail::kMaxOpticalStep);
                const double a = -std::expm1(-sample_optical[i]);
                sample_t[i] = t;
                sample_T[i] = transmittance;
                sample_w[i] = transmittance * a;
                sample_raw_c[i] = detail::sample_color_raw(scene, stencils[i]);
                sample_act_c[i] = Vec3{logistic(sample_raw_c[i].x), logistic(sample_raw_c[i].y),
                                       logistic(sample_raw_c[i].z)};
                acc += sample_w[i];
                depth_sum += sample_w[i] * t;
                transmittance *= 1.0 - a;
            }

            // Pixel-level adjoints. The depth quotient's derivative vanishes
            // where the max() floor is active.
            const double acc_floor = std::max(acc, 1e-8);
            const double g_depth_sum = g_depth / acc_floor;
            double g_acc = g_alpha - dot(g_rgb, opts.background);
            if (acc > 1e-8) g_acc -= g_depth * depth_sum / (acc * acc);

            // Reverse sweep over samples: w_j = T_j * a_j and every later
            // weight carries a (1 - a_i) factor, hence the suffix term.
            double suffix = 0.0;
            for (int i = S - 1; i >= 0; --i) {
                const Vec3 act = sample_act_c[i];
                const double g_w = dot(g_rgb, act) + g_acc + g_depth_sum * sample_t[i];
                const double one_minus_a = std::exp(-sample_optical[i]);
                const double g_a = sample_T[i] * g_w - suffix / one_minus_a;
                suffix += g_w * sample_w[i];

                if (sample_w[i] > 0.0) {
                    const Vec3 g_raw_c{g_rgb.x * sample_w[i] * act.x * (1.0 - act.x),
                                       g_rgb.y * sample_w[i] * act.y * (1.0 - act.y),
                                       g_rgb.z * sample_w[i] * act.z * (1.0 - act.z)};
                    for (int k = 0; k < 8; ++k) {
                        const size_t base = stencils[i].corner[k] * 3;
                        grads.color[base] += stencils[i].weight[k] * g_raw_c.x;
                        grads.color[base + 1] += stencils[i].weight[k] * g_raw_c.y;
                        grads.color[base + 2] += stencils[i].weight[k] * g_raw_c.z;
                    }
                }
                const double da_dsigma = dt * one_minus_a * (sample_optical[i] < detail::kMaxOpticalStep ? 1.0 : 0.0);
                const double g_raw_d = g_a * da_dsigma * softplus_derivative(sample_raw_d[i]);
                if (g_raw_d != 0.0) {
                    for (int k = 0; k < 8; ++k)
                        grads.density[stencils[i].corner[k]] += stencils[i].weight[k] * g_raw_d;
                }
            }
        }
    }
}

// --- checkpoint persistence -------------------------------------------------
//
// Single file: one-line UTF-8 header "C123-SCENE v1 D=<int> HALF=<float>"
// followed by the density grid then the color grid as little-endian float32,
// row-major ((z*D + y)*D + x, color channel fastest).

inline void save_checkpoint(const SceneModel& scene, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + path + "'");
    char header[96];
    std::snprintf(header, sizeof(header), "C123-SCENE v1 D=%d HALF=%.9g\n", scene.grid_size,
                  scene.bbox_half);
    out.write(header, static_cast<std::streamsize>(std::strlen(header)));
    out.write(reinterpret_cast<const char*>(scene.density_grid.data()),
              static_cast<std::streamsize>(scene.density_grid.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(scene.color_grid.data()),
              static_cast<std::streamsize>(scene.color_grid.size() * sizeof(float)));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for '" + path + "'");
}

inline SceneModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("load_checkpoint: cannot open '" + path + "'");
    std::string header;
    if (!std::getline(in, header)) throw std::invalid_argument("load_checkpoint: missing header in '" + path + "'");
    int d = 0;
    double half = 0.0;
    if (std::sscanf(header.c_str(), "C123-SCENE v1 D=%d HALF=%lf", &d, &half) != 2 || d < 2 || half <= 0.0)
        throw std::invalid_argument("load_checkpoint: malformed header in '" + path + "': " + header);
    SceneModel scene = SceneModel::zeros(d, half);
    in.read(reinterpret_cast<char*>(scene.density_grid.data()),
            static_cast<std::streamsize>(scene.density_grid.size() * sizeof(float)));
    in.read(reinterpret_cast<char*>(scene.color_grid.data()),
            static_cast<std::streamsize>(scene.color_grid.size() * sizeof(float)));
    if (static_cast<size_t>(in.gcount()) != scene.color_grid.size() * sizeof(float))
        throw std::invalid_argument("load_checkpoint: truncated grid data in '" + path + "'");
    return scene;
}

}  // namespace c123
