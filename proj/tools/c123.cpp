#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "c123/c123.hpp"

namespace {

int cmd_reconstruct(const std::string& case_dir, const std::string& out_dir,
                    const std::string& config_path, const std::string& backend_3d,
                    const std::string& backend_2d, const std::string& backend_embed,
                    std::optional<long long> seed) {
    using namespace c123;
    RunConfig cfg = config_path.empty() ? RunConfig{} : parse_config_file(config_path);
    if (seed) cfg.train.seed = static_cast<unsigned long long>(*seed);
    if (!backend_3d.empty()) cfg.backend_3d = backend_3d;
    if (!backend_2d.empty()) cfg.backend_2d = backend_2d;
    if (!backend_embed.empty()) cfg.backend_embed = backend_embed;
    cfg.finalize();
    cfg.train.validate();

    LoadedCase loaded = load_case_directory(case_dir, cfg.reference_pose());
    resample_case(loaded.input, cfg.train.resolution);

    const auto g3 = make_noise_backend(cfg.backend_3d);
    const auto g2 = make_noise_backend(cfg.backend_2d);
    const auto embed = make_embedding_backend(cfg.backend_embed, loaded.input.image);

    std::filesystem::create_directories(out_dir);
    {
        std::ofstream snapshot(out_dir + "/config_resolved.txt", std::ios::binary | std::ios::trunc);
        if (!snapshot) throw std::invalid_argument("cannot write " + out_dir + "/config_resolved.txt");
        snapshot << serialize_config(cfg);
    }

    Backends backends;
    backends.guidance_3d = g3.get();
    backends.guidance_2d = g2.get();
    backends.embedder = embed.get();

    log_info("reconstructing " + case_dir + " -> " + out_dir);
    const TrainResult result = run(loaded.input, cfg.train, backends, out_dir);
    log_info("finished: " + std::to_string(result.init3d_steps) + " INIT3D steps, " +
             std::to_string(result.dynamic_steps) + " DYNAMIC steps, transition at " +
             std::to_string(result.state.transition_iteration));
    return 0;
}

int cmd_render(const std::string& checkpoint, double azimuth, double elevation,
               const std::string& out_png, int resolution, double radius, double fov,
               int samples) {
    using namespace c123;
    const SceneModel scene = load_checkpoint(checkpoint);
    RenderOptions opts;
    opts.samples_per_ray = samples;
    opts.background = Vec3{1.0, 1.0, 1.0};
    const CameraPose pose = pose_from_spherical(azimuth, elevation, radius, fov);
    const RenderedView view = render(scene, pose, resolution, opts);
    write_png_rgb(out_png, view.rgb);
    log_info("wrote " + out_png);
    return 0;
}

int cmd_evaluate(const std::string& results_dir, const std::string& cases_dir,
                 const std::string& embed_spec, const std::string& perceptual_spec) {
    using namespace c123;
    const auto embed = make_embedding_backend(embed_spec, Image{});
    std::unique_ptr<PerceptualModel> perceptual;
    if (!perceptual_spec.empty()) perceptual = make_perceptual_backend(perceptual_spec);

    const DatasetReport report =
        evaluate_dataset(results_dir, cases_dir, *embed, perceptual.get());

    const std::string json_path = results_dir + "/report.json";
    std::ofstream json_out(json_path, std::ios::binary | std::ios::trunc);
    if (!json_out) throw std::invalid_argument("cannot write " + json_path);
    json_out << dataset_report_json(report).dump(2) << '\n';

    const std::string csv_path = results_dir + "/report.csv";
    std::ofstream csv_out(csv_path, std::ios::binary | std::ios::trunc);
    if (!csv_out) throw std::invalid_argument("cannot write " + csv_path);
    csv_out << dataset_report_csv(report);

    log_info("evaluated " + std::to_string(report.per_case.size()) + " cases -> " + json_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage single-image-to-3D reconstruction over a voxel radiance field"};
    app.require_subcommand(1);

    auto* rec = app.add_subcommand("reconstruct", "optimize a scene for one case directory");
    std::string case_dir, out_dir, config_path, backend_3d, backend_2d, backend_embed;
    std::optional<long long> seed;
    rec->add_option("--case", case_dir, "case directory")->required();
    rec->add_option("--out", out_dir, "output directory")->required();
    rec->add_option("--config", config_path, "key = value config file");
    rec->add_option("--backend-3d", backend_3d, "3D guidance backend spec");
    rec->add_option("--backend-2d", backend_2d, "2D guidance backend spec");
    rec->add_option("--embed", backend_embed, "embedding backend spec");
    rec->add_option("--seed", seed, "rng seed override");

    auto* ren = app.add_subcommand("render", "render a checkpoint from a spherical pose");
    std::string checkpoint, out_png;
    double azimuth = 0.0, elevation = 0.0, radius = 2.0, fov = 60.0;
    int resolution = 64, samples = 96;
    ren->add_option("--checkpoint", checkpoint, "scene checkpoint")->required();
    ren->add_option("--azimuth", azimuth, "azimuth degrees");
    ren->add_option("--elevation", elevation, "elevation degrees");
    ren->add_option("--out", out_png, "output png")->required();
    ren->add_option("--resolution", resolution, "image resolution");
    ren->add_option("--radius", radius, "camera distance");
    ren->add_option("--fov", fov, "vertical field of view degrees");
    ren->add_option("--samples", samples, "samples per ray");

    auto* eva = app.add_subcommand("evaluate", "aggregate metrics over reconstructed cases");
    std::string results_dir, cases_dir, embed_spec = "mock:downsample", perceptual_spec;
    eva->add_option("--results", results_dir, "directory of per-case run outputs")->required();
    eva->add_option("--cases", cases_dir, "directory of case directories")->required();
    eva->add_option("--embed", embed_spec, "embedding backend spec");
    eva->add_option("--perceptual", perceptual_spec, "perceptual backend spec");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (rec->parsed())
            return cmd_reconstruct(case_dir, out_dir, config_path, backend_3d, backend_2d,
                                   backend_embed, seed);
        if (ren->parsed())
            return cmd_render(checkpoint, azimuth, elevation, out_png, resolution, radius, fov,
                              samples);
        return cmd_evaluate(results_dir, cases_dir, embed_spec, perceptual_spec);
    } catch (const c123::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const c123::BackendError& e) {
        std::fprintf(stderr, "backend error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
