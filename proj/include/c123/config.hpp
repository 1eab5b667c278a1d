#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "c123/boundary.hpp"
#include "c123/schedule.hpp"
#include "c123/trainer.hpp"

namespace c123 {

// Everything a reconstruction run needs beyond the case directory: the
// trainer configuration plus reference-pose placement and backend endpoints.
// Parsed from `key = value` lines; serialized back as an exact snapshot
// (doubles printed with %.17g so a re-run from the snapshot reproduces the
// original run bitwise).
struct RunConfig {
    TrainConfig train;
    double background = 1.0;
    double ref_azimuth = 0.0;
    double ref_elevation = 0.0;
    int boundary_num_views = 8;
    double boundary_elevation = 0.0;
    std::string backend_3d = "mock:echo";
    std::string backend_2d = "mock:echo";
    std::string backend_embed = "mock:downsample";
    std::string backend_perceptual;

    // Derived fields are rebuilt from the scalar keys so a parsed config is
    // self-consistent before use.
    void finalize() {
        train.render.background = Vec3{background, background, background};
        train.boundary.views.clear();
        for (int k = 0; k < boundary_num_views; ++k)
            train.boundary.views.push_back(pose_from_spherical(
                360.0 * k / boundary_num_views, boundary_elevation, train.camera_radius,
                train.camera_fov_deg));
    }

    CameraPose reference_pose() const {
        return pose_from_spherical(ref_azimuth, ref_elevation, train.camera_radius,
                                   train.camera_fov_deg);
    }
};

namespace detail {

inline double parse_double(const std::string& v, const std::string& where) {
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw std::invalid_argument(where + ": not a number: '" + v + "'");
    return out;
}

inline long parse_long(const std::string& v, const std::string& where) {
    char* end = nullptr;
    const long out = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw std::invalid_argument(where + ": not an integer: '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& v, const std::string& where) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument(where + ": not a boolean: '" + v + "'");
}

inline std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return s.substr(a, b - a);
}

}  // namespace detail

inline void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value,
                             const std::string& where) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_long;
    TrainConfig& t = cfg.train;
    if (key == "seed") t.seed = static_cast<unsigned long long>(parse_long(value, where));
    else if (key == "total_iterations") t.total_iterations = parse_long(value, where);
    else if (key == "learning_rate") t.adam.learning_rate = parse_double(value, where);
    else if (key == "adam_beta1") t.adam.beta1 = parse_double(value, where);
    else if (key == "adam_beta2") t.adam.beta2 = parse_double(value, where);
    else if (key == "adam_eps") t.adam.eps = parse_double(value, where);
    else if (key == "p_ref") t.p_ref = parse_double(value, where);
    else if (key == "resolution") t.resolution = static_cast<int>(parse_long(value, where));
    else if (key == "grid_size") t.grid_size = static_cast<int>(parse_long(value, where));
    else if (key == "bbox_half") t.bbox_half = parse_double(value, where);
    else if (key == "samples_per_ray") t.render.samples_per_ray = static_cast<int>(parse_long(value, where));
    else if (key == "background") cfg.background = parse_double(value, where);
    else if (key == "random_background") t.random_background = parse_bool(value, where);
    else if (key == "camera_radius") t.camera_radius = parse_double(value, where);
    else if (key == "camera_fov") t.camera_fov_deg = parse_double(value, where);
    else if (key == "ref_azimuth") cfg.ref_azimuth = parse_double(value, where);
    else if (key == "ref_elevation") cfg.ref_elevation = parse_double(value, where);
    else if (key == "novel_elevation_min") t.novel_elevation_min = parse_double(value, where);
    else if (key == "novel_elevation_max") t.novel_elevation_max = parse_double(value, where);
    else if (key == "loss.rgb") t.loss.rgb = parse_double(value, where);
    else if (key == "loss.mask") t.loss.mask = parse_double(value, where);
    else if (key == "loss.depth") t.loss.depth = parse_double(value, where);
    else if (key == "init_density_inside") t.init_density_inside = parse_double(value, where);
    else if (key == "init_density_outside") t.init_density_outside = parse_double(value, where);
    else if (key == "boundary.h") t.boundary.h = static_cast<int>(parse_long(value, where));
    else if (key == "boundary.window") t.boundary.window = static_cast<int>(parse_long(value, where));
    else if (key == "boundary.delta") t.boundary.delta = parse_double(value, where);
    else if (key == "boundary.warmup_detections") t.boundary.warmup_detections = static_cast<int>(parse_long(value, where));
    else if (key == "boundary.signed_rate") t.boundary.signed_rate = parse_bool(value, where);
    else if (key == "boundary.num_views") cfg.boundary_num_views = static_cast<int>(parse_long(value, where));
    else if (key == "boundary.elevation") cfg.boundary_elevation = parse_double(value, where);
    else if (key == "boundary.mode") {
        if (value == "auto") t.boundary_mode = BoundaryMode::kAuto;
        else if (value == "start") t.boundary_mode = BoundaryMode::kStart;
        else if (value == "end") t.boundary_mode = BoundaryMode::kEnd;
        else throw std::invalid_argument(where + ": boundary.mode must be auto|start|end");
    } else if (key == "schedule.kind") {
        if (value == "exp") t.schedule_kind = ScheduleKind::kExp;
        else if (value == "linear") t.schedule_kind = ScheduleKind::kLinear;
        else if (value == "log") t.schedule_kind = ScheduleKind::kLog;
        else throw std::invalid_argument(where + ": schedule.kind must be exp|linear|log");
    }
    else if (key == "schedule.uncorrected") t.schedule_uncorrected = parse_bool(value, where);
    else if (key == "schedule.clamp") t.schedule_clamp = parse_bool(value, where);
    else if (key == "guidance.w_scale") t.guidance_weight = parse_double(value, where);
    else if (key == "guidance.t_min_frac") t.step_sampler.t_min_frac = parse_double(value, where);
    else if (key == "guidance.t_max_frac") t.step_sampler.t_max_frac = parse_double(value, where);
    else if (key == "checkpoint_interval") t.checkpoint_interval = parse_long(value, where);
    else if (key == "upgrade_iteration") t.upgrade_iteration = parse_long(value, where);
    else if (key == "backend.guidance_3d") cfg.backend_3d = value;
    else if (key == "backend.guidance_2d") cfg.backend_2d = value;
    else if (key == "backend.embed") cfg.backend_embed = value;
    else if (key == "backend.perceptual") cfg.backend_perceptual = value;
    else throw std::invalid_argument(where + ": unknown key '" + key + "'");
}

inline RunConfig parse_config_text(const std::string& text, const std::string& source) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string trimmed = detail::trim(line);
        if (trimmed.empty() || trimmed[0] == '#') continue;
        const size_t eq = trimmed.find('=');
        const std::string where = source + ":" + std::to_string(line_no);
        if (eq == std::string::npos)
            throw std::invalid_argument(where + ": expected 'key = value', got '" + trimmed + "'");
        const std::string key = detail::trim(trimmed.substr(0, eq));
        const std::string value = detail::trim(trimmed.substr(eq + 1));
        if (key.empty()) throw std::invalid_argument(where + ": empty key");
        apply_config_key(cfg, key, value, where);
    }
    cfg.finalize();
    return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

// Exact snapshot of every key. Doubles use %.17g so parsing the snapshot
// reproduces the values bit for bit.
inline std::string serialize_config(const RunConfig& cfg) {
    const TrainConfig& t = cfg.train;
    std::string out;
    char buf[128];
    const auto put_d = [&](const char* key, double v) {
        std::snprintf(buf, sizeof(buf), "%s = %.17g\n", key, v);
        out += buf;
    };
    const auto put_l = [&](const char* key, long v) {
        std::snprintf(buf, sizeof(buf), "%s = %ld\n", key, v);
        out += buf;
    };
    const auto put_b = [&](const char* key, bool v) {
        out += key;
        out += v ? " = true\n" : " = false\n";
    };
    const auto put_s = [&](const char* key, const std::string& v) {
        out += key;
        out += " = ";
        out += v;
        out += '\n';
    };

    put_l("seed", static_cast<long>(t.seed));
    put_l("total_iterations", t.total_iterations);
    put_d("learning_rate", t.adam.learning_rate);
    put_d("adam_beta1", t.adam.beta1);
    put_d("adam_beta2", t.adam.beta2);
    put_d("adam_eps", t.adam.eps);
    put_d("p_ref", t.p_ref);
    put_l("resolution", t.resolution);
    put_l("grid_size", t.grid_size);
    put_d("bbox_half", t.bbox_half);
    put_l("samples_per_ray", t.render.samples_per_ray);
    put_d("background", cfg.background);
    put_b("random_background", t.random_background);
    put_d("camera_radius", t.camera_radius);
    put_d("camera_fov", t.camera_fov_deg);
    put_d("ref_azimuth", cfg.ref_azimuth);
    put_d("ref_elevation", cfg.ref_elevation);
    put_d("novel_elevation_min", t.novel_elevation_min);
    put_d("novel_elevation_max", t.novel_elevation_max);
    put_d("loss.rgb", t.loss.rgb);
    put_d("loss.mask", t.loss.mask);
    put_d("loss.depth", t.loss.depth);
    put_d("init_density_inside", t.init_density_inside);
    put_d("init_density_outside", t.init_density_outside);
    put_l("boundary.h", t.boundary.h);
    put_l("boundary.window", t.boundary.window);
    put_d("boundary.delta", t.boundary.delta);
    put_l("boundary.warmup_detections", t.boundary.warmup_detections);
    put_b("boundary.signed_rate", t.boundary.signed_rate);
    put_l("boundary.num_views", cfg.boundary_num_views);
    put_d("boundary.elevation", cfg.boundary_elevation);
    put_s("boundary.mode", t.boundary_mode == BoundaryMode::kAuto
                               ? "auto"
                               : (t.boundary_mode == BoundaryMode::kStart ? "start" : "end"));
    put_s("schedule.kind", t.schedule_kind == ScheduleKind::kExp
                               ? "exp"
                               : (t.schedule_kind == ScheduleKind::kLinear ? "linear" : "log"));
    put_b("schedule.uncorrected", t.schedule_uncorrected);
    put_b("schedule.clamp", t.schedule_clamp);
    put_d("guidance.w_scale", t.guidance_weight);
    put_d("guidance.t_min_frac", t.step_sampler.t_min_frac);
    put_d("guidance.t_max_frac", t.step_sampler.t_max_frac);
    put_l("checkpoint_interval", t.checkpoint_interval);
    put_l("upgrade_iteration", t.upgrade_iteration);
    put_s("backend.guidance_3d", cfg.backend_3d);
    put_s("backend.guidance_2d", cfg.backend_2d);
    put_s("backend.embed", cfg.backend_embed);
    if (!cfg.backend_perceptual.empty()) put_s("backend.perceptual", cfg.backend_perceptual);
    return out;
}

}  // namespace c123
