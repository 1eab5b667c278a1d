#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "c123/scene.hpp"
#include "support.hpp"

using namespace c123;
using testsupport::TempDir;
using testsupport::make_target_scene;

namespace {

// Closed-form look-at frame for a camera on the origin-centered sphere:
// derived directly from the spherical convention, independent of the
// cross-product construction under test.
Mat3 oracle_rotation(double azimuth_deg, double elevation_deg) {
    const double a = deg_to_rad(azimuth_deg);
    const double e = deg_to_rad(elevation_deg);
    const Vec3 right{-std::sin(a), std::cos(a), 0.0};
    const Vec3 up{-std::sin(e) * std::cos(a), -std::sin(e) * std::sin(a), std::cos(e)};
    const Vec3 back{std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e)};
    return Mat3::from_columns(right, up, back);
}

SceneModel random_scene(int grid_size, double bbox_half, unsigned seed) {
    SceneModel scene = SceneModel::zeros(grid_size, bbox_half);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (float& v : scene.density_grid) v = static_cast<float>(gauss(rng));
    for (float& v : scene.color_grid) v = static_cast<float>(gauss(rng));
    return scene;
}

double sum_rgb(const RenderedView& view) {
    double s = 0.0;
    for (double v : view.rgb.data) s += v;
    return s;
}

}  // namespace

TEST(Activations, SoftplusAndLogistic) {
    for (double d : {1e-4, 0.01, 0.5, 1.0, 8.0, 40.0})
        EXPECT_NEAR(softplus(inverse_softplus(d)), d, 1e-9 * std::max(1.0, d));
    for (double x : {-35.0, -4.0, -0.3, 0.0, 2.0, 31.0}) {
        EXPECT_GE(softplus(x), 0.0);
        EXPECT_GT(logistic(x), 0.0);
        EXPECT_LT(logistic(x), 1.0);
        EXPECT_NEAR(softplus_derivative(x), logistic(x), 1e-15);
    }
}

TEST(Pose, ConventionExamples) {
    const CameraPose front = pose_from_spherical(0.0, 0.0, 2.0, 60.0);
    EXPECT_NEAR(front.center.x, 2.0, 1e-12);
    EXPECT_NEAR(front.center.y, 0.0, 1e-12);
    EXPECT_NEAR(front.center.z, 0.0, 1e-12);
    // Viewing direction is the camera's -z axis = -(third rotation column).
    EXPECT_NEAR(-front.rotation(0, 2), -1.0, 1e-12);
    EXPECT_NEAR(-front.rotation(1, 2), 0.0, 1e-12);
    EXPECT_NEAR(-front.rotation(2, 2), 0.0, 1e-12);

    const CameraPose back = pose_from_spherical(180.0, 0.0, 2.0, 60.0);
    EXPECT_NEAR(back.center.x, -2.0, 1e-12);
    EXPECT_NEAR(back.center.y, 0.0, 1e-12);
    EXPECT_NEAR(-back.rotation(0, 2), 1.0, 1e-12);

    const CameraPose oblique = pose_from_spherical(45.0, 30.0, 2.0, 60.0);
    const double c30 = std::cos(deg_to_rad(30.0)), c45 = std::cos(deg_to_rad(45.0));
    EXPECT_NEAR(oblique.center.x, 2.0 * c30 * c45, 1e-12);
    EXPECT_NEAR(oblique.center.y, 2.0 * c30 * std::sin(deg_to_rad(45.0)), 1e-12);
    EXPECT_NEAR(oblique.center.z, 2.0 * std::sin(deg_to_rad(30.0)), 1e-12);
}

TEST(Pose, MatchesTrigOracleAcrossSphere) {
    for (double az : {0.0, 17.0, 45.0, 90.0, 133.5, 180.0, 247.0, 315.0})
        for (double el : {-80.0, -30.0, 0.0, 12.5, 30.0, 60.0, 85.0}) {
            const CameraPose pose = pose_from_spherical(az, el, 2.0, 60.0);
            const Mat3 want = oracle_rotation(az, el);
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    EXPECT_NEAR(pose.rotation(r, c), want(r, c), 1e-9)
                        << "az=" << az << " el=" << el << " entry " << r << "," << c;
        }
}

TEST(Pose, RotationInvariants) {
    for (double az : {3.0, 78.0, 191.0, 299.0})
        for (double el : {-45.0, 0.0, 52.0}) {
            const CameraPose pose = pose_from_spherical(az, el, 3.5, 40.0);
            const Mat3& r = pose.rotation;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    EXPECT_NEAR(dot(r.col(i), r.col(j)), i == j ? 1.0 : 0.0, 1e-9);
            EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
            EXPECT_NEAR(norm(pose.center), 3.5, 1e-9);
        }
}

TEST(Pose, RejectsDegenerateArguments) {
    EXPECT_THROW(pose_from_spherical(0.0, 0.0, 0.0, 60.0), std::invalid_argument);
    EXPECT_THROW(pose_from_spherical(0.0, 0.0, -1.0, 60.0), std::invalid_argument);
    EXPECT_THROW(pose_from_spherical(0.0, 0.0, 2.0, 0.0), std::invalid_argument);
    EXPECT_THROW(pose_from_spherical(0.0, 0.0, 2.0, 180.0), std::invalid_argument);
}

TEST(Pose, RelativePoseIdentityOnSamePose) {
    const CameraPose p = pose_from_spherical(33.0, -12.0, 2.0, 60.0);
    const RelativePose rel = relative_pose(p, p);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(rel.rotation(r, c), r == c ? 1.0 : 0.0, 1e-12);
    EXPECT_NEAR(norm(rel.translation), 0.0, 1e-12);
}

TEST(Pose, RelativePoseMapsReferenceCoordsIntoViewCoords) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> az(0.0, 360.0), el(-70.0, 70.0), coord(-1.5, 1.5);
    for (int trial = 0; trial < 20; ++trial) {
        const CameraPose view = pose_from_spherical(az(rng), el(rng), 2.0, 60.0);
        const CameraPose ref = pose_from_spherical(az(rng), el(rng), 2.5, 50.0);
        const RelativePose rel = relative_pose(view, ref);
        const Vec3 w{coord(rng), coord(rng), coord(rng)};
        const Vec3 in_ref = ref.rotation.transposed() * (w - ref.center);
        const Vec3 mapped = rel.rotation * in_ref + rel.translation;
        const Vec3 in_view = view.rotation.transposed() * (w - view.center);
        EXPECT_NEAR(mapped.x, in_view.x, 1e-9);
        EXPECT_NEAR(mapped.y, in_view.y, 1e-9);
        EXPECT_NEAR(mapped.z, in_view.z, 1e-9);
    }
}

TEST(Render, ZeroDensityGivesBackground) {
    SceneModel scene = SceneModel::zeros(8, 1.0);
    for (float& v : scene.density_grid) v = -60.0f;  // softplus(-60) ~ 0
    RenderOptions opts;
    opts.background = Vec3{0.2, 0.5, 0.9};
    const RenderedView view = render(scene, pose_from_spherical(30.0, 10.0, 2.0, 60.0), 16, opts);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
            EXPECT_NEAR(view.alpha.at(r, c, 0), 0.0, 1e-12);
            EXPECT_NEAR(view.rgb.at(r, c, 0), 0.2, 1e-12);
            EXPECT_NEAR(view.rgb.at(r, c, 1), 0.5, 1e-12);
            EXPECT_NEAR(view.rgb.at(r, c, 2), 0.9, 1e-12);
            EXPECT_NEAR(view.depth.at(r, c, 0), 0.0, 1e-12);
        }
}

TEST(Render, OpaqueCubeDepthMatchesRayBoxOracle) {
    SceneModel scene = SceneModel::zeros(16, 1.0);
    for (float& v : scene.density_grid) v = 500.0f;
    const CameraPose pose = pose_from_spherical(0.0, 0.0, 2.0, 60.0);
    const int res = 33;  // odd so one pixel's ray passes through the origin
    const RenderedView view = render(scene, pose, res);
    const int mid = res / 2;
    EXPECT_GE(view.alpha.at(mid, mid, 0), 0.99);
    const double voxel = 2.0 * scene.bbox_half / (scene.grid_size - 1);
    EXPECT_NEAR(view.depth.at(mid, mid, 0), pose.radius - scene.bbox_half, 2.0 * voxel);
}

TEST(Render, AntipodalDepthSymmetry) {
    SceneModel scene = SceneModel::zeros(9, 1.0);
    for (float& v : scene.density_grid) v = -40.0f;
    const int d = scene.grid_size;
    scene.density_grid[(static_cast<size_t>(4) * d + 4) * d + 4] = 500.0f;  // lattice center = origin
    const int res = 33;
    const int mid = res / 2;
    const RenderedView a = render(scene, pose_from_spherical(0.0, 0.0, 2.0, 60.0), res);
    const RenderedView b = render(scene, pose_from_spherical(180.0, 0.0, 2.0, 60.0), res);
    ASSERT_GT(a.alpha.at(mid, mid, 0), 0.5);
    ASSERT_GT(b.alpha.at(mid, mid, 0), 0.5);
    EXPECT_NEAR(a.depth.at(mid, mid, 0), b.depth.at(mid, mid, 0), 1e-3);
}

TEST(Render, OutputRangesAndMaskIdentity) {
    const SceneModel scene = make_target_scene(12, 1.0);
    const RenderedView view = render(scene, pose_from_spherical(70.0, 25.0, 2.0, 60.0), 24);
    for (double v : view.alpha.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0 + 1e-12);
    }
    for (double v : view.rgb.data) {
        EXPECT_GE(v, -1e-12);
        EXPECT_LE(v, 1.0 + 1e-12);
    }
    EXPECT_TRUE(all_finite(view.depth));
    const Image mask = render_mask(view);
    ASSERT_EQ(mask.size(), view.alpha.size());
    for (size_t i = 0; i < mask.data.size(); ++i) EXPECT_DOUBLE_EQ(mask.data[i], view.alpha.data[i]);
}

TEST(Render, RejectsDegenerateArguments) {
    const SceneModel scene = SceneModel::zeros(8, 1.0);
    EXPECT_THROW(render(scene, pose_from_spherical(0, 0, 2.0, 60.0), 7), std::invalid_argument);
    EXPECT_THROW(render(scene, pose_from_spherical(0, 0, 0.5, 60.0), 16), std::invalid_argument);
}

TEST(Render, MonotoneOcclusion) {
    SceneModel scene = random_scene(8, 1.0, 23);
    const CameraPose pose = pose_from_spherical(120.0, -15.0, 2.0, 60.0);
    const Image before = render(scene, pose, 16).alpha;
    std::mt19937_64 rng(29);
    std::uniform_int_distribution<size_t> pick(0, scene.density_grid.size() - 1);
    for (int trial = 0; trial < 5; ++trial) {
        SceneModel bumped = scene;
        bumped.density_grid[pick(rng)] += 2.0f;
        const Image after = render(bumped, pose, 16).alpha;
        for (size_t i = 0; i < after.data.size(); ++i)
            EXPECT_GE(after.data[i], before.data[i] - 1e-12) << "pixel " << i;
    }
}

TEST(Render, ResolutionConsistency) {
    const SceneModel scene = make_target_scene(16, 1.0);
    const CameraPose pose = pose_from_spherical(30.0, 20.0, 2.0, 60.0);
    const double mean32 = mean(render(scene, pose, 32).alpha);
    const double mean64 = mean(render(scene, pose, 64).alpha);
    EXPECT_NEAR(mean32, mean64, 0.02);
}

TEST(Render, RotationalConsistencyOnSymmetricScene) {
    SceneModel scene = SceneModel::zeros(32, 1.0);
    const int d = scene.grid_size;
    const double spacing = 2.0 / (d - 1);
    for (int z = 0; z < d; ++z)
        for (int y = 0; y < d; ++y)
            for (int x = 0; x < d; ++x) {
                const double px = -1.0 + x * spacing, py = -1.0 + y * spacing, pz = -1.0 + z * spacing;
                const double r2 = px * px + py * py + pz * pz;
                scene.density_grid[(static_cast<size_t>(z) * d + y) * d + x] =
                    static_cast<float>(inverse_softplus(std::max(6.0 * std::exp(-8.0 * r2), 1e-4)));
            }
    // Raw color 0 everywhere -> uniform 0.5 gray, spherically symmetric.
    std::vector<double> means;
    for (double az : {0.0, 30.0, 45.0, 90.0, 137.0, 180.0, 260.0, 315.0})
        means.push_back(mean(render(scene, pose_from_spherical(az, 0.0, 2.0, 60.0), 32).rgb));
    for (double m : means) EXPECT_NEAR(m, means.front(), 1e-2);
}

TEST(Render, GradientMatchesFiniteDifferences) {
    const SceneModel scene = random_scene(8, 1.0, 37);
    const CameraPose pose = pose_from_spherical(25.0, 15.0, 2.0, 60.0);
    const int res = 16;

    GridGrads grads = GridGrads::zeros(scene);
    RenderAdjoints adjoints;
    adjoints.d_rgb = Image(res, res, 3, 1.0);  // d(sum rgb)/d(rgb) = 1
    render_backward(scene, pose, res, RenderOptions{}, adjoints, grads);

    std::mt19937_64 rng(41);
    std::uniform_int_distribution<size_t> pick_d(0, scene.density_grid.size() - 1);
    std::uniform_int_distribution<size_t> pick_c(0, scene.color_grid.size() - 1);
    const double h = 1e-3;
    int checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const bool density = trial < 10;
        const size_t idx = density ? pick_d(rng) : pick_c(rng);
        SceneModel plus = scene, minus = scene;
        float& vp = density ? plus.density_grid[idx] : plus.color_grid[idx];
        float& vm = density ? minus.density_grid[idx] : minus.color_grid[idx];
        const double v0 = vp;
        vp = static_cast<float>(v0 + h);
        vm = static_cast<float>(v0 - h);
        const double h_eff = static_cast<double>(vp) - static_cast<double>(vm);
        const double fd =
            (sum_rgb(render(plus, pose, res)) - sum_rgb(render(minus, pose, res))) / h_eff;
        const double an = density ? grads.density[idx] : grads.color[idx];
        const double denom = std::max({std::abs(an), std::abs(fd), 1e-12});
        if (std::abs(an) < 1e-12 && std::abs(fd) < 1e-12) continue;  // both vanish: consistent
        EXPECT_LT(std::abs(an - fd) / denom, 1e-3)
            << (density ? "density" : "color") << "[" << idx << "] analytic=" << an << " fd=" << fd;
        ++checked;
    }
    EXPECT_GE(checked, 10);  // the random scene must actually exercise the check
}

TEST(Render, GradientCoversAlphaAndDepthAdjoints) {
    const SceneModel scene = random_scene(8, 1.0, 53);
    const CameraPose pose = pose_from_spherical(340.0, -20.0, 2.0, 60.0);
    const int res = 12;

    std::mt19937_64 rng(59);
    std::normal_distribution<double> gauss(0.0, 1.0);
    RenderAdjoints adjoints;
    adjoints.d_rgb = Image(res, res, 3);
    adjoints.d_alpha = Image(res, res, 1);
    adjoints.d_depth = Image(res, res, 1);
    for (double& v : adjoints.d_rgb.data) v = gauss(rng);
    for (double& v : adjoints.d_alpha.data) v = gauss(rng);
    for (double& v : adjoints.d_depth.data) v = gauss(rng);

    auto scalar = [&](const SceneModel& s) {
        const RenderedView view = render(s, pose, res);
        double total = 0.0;
        for (size_t i = 0; i < view.rgb.data.size(); ++i) total += adjoints.d_rgb.data[i] * view.rgb.data[i];
        for (size_t i = 0; i < view.alpha.data.size(); ++i)
            total += adjoints.d_alpha.data[i] * view.alpha.data[i] +
                     adjoints.d_depth.data[i] * view.depth.data[i];
        return total;
    };

    GridGrads grads = GridGrads::zeros(scene);
    render_backward(scene, pose, res, RenderOptions{}, adjoints, grads);

    std::uniform_int_distribution<size_t> pick_d(0, scene.density_grid.size() - 1);
    const double h = 1e-3;
    for (int trial = 0; trial < 8; ++trial) {
        const size_t idx = pick_d(rng);
        SceneModel plus = scene, minus = scene;
        const double v0 = scene.density_grid[idx];
        plus.density_grid[idx] = static_cast<float>(v0 + h);
        minus.density_grid[idx] = static_cast<float>(v0 - h);
        const double h_eff =
            static_cast<double>(plus.density_grid[idx]) - static_cast<double>(minus.density_grid[idx]);
        const double fd = (scalar(plus) - scalar(minus)) / h_eff;
        const double an = grads.density[idx];
        if (std::abs(an) < 1e-10 && std::abs(fd) < 1e-10) continue;
        EXPECT_LT(std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-12}), 5e-3)
            << "density[" << idx << "] analytic=" << an << " fd=" << fd;
    }
}

TEST(Checkpoint, RoundTripIsBitExact) {
    TempDir tmp;
    const SceneModel scene = make_target_scene(8, 0.75);
    const std::string path = tmp.sub("scene.ckpt");
    save_checkpoint(scene, path);
    const SceneModel loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.grid_size, scene.grid_size);
    EXPECT_DOUBLE_EQ(loaded.bbox_half, scene.bbox_half);
    ASSERT_EQ(loaded.density_grid.size(), scene.density_grid.size());
    ASSERT_EQ(loaded.color_grid.size(), scene.color_grid.size());
    EXPECT_EQ(0, std::memcmp(loaded.density_grid.data(), scene.density_grid.data(),
                             scene.density_grid.size() * sizeof(float)));
    EXPECT_EQ(0, std::memcmp(loaded.color_grid.data(), scene.color_grid.data(),
                             scene.color_grid.size() * sizeof(float)));
}

TEST(Checkpoint, RejectsMissingTruncatedAndForeignFiles) {
    TempDir tmp;
    EXPECT_THROW(load_checkpoint(tmp.sub("absent.ckpt")), std::invalid_argument);

    const SceneModel scene = make_target_scene(8, 1.0);
    const std::string full = tmp.sub("full.ckpt");
    save_checkpoint(scene, full);
    const std::string bytes = testsupport::read_file_bytes(full);

    const std::string cut = tmp.sub("cut.ckpt");
    std::ofstream(cut, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    EXPECT_THROW(load_checkpoint(cut), std::invalid_argument);

    const std::string foreign = tmp.sub("foreign.ckpt");
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    std::ofstream(foreign, std::ios::binary).write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
    EXPECT_THROW(load_checkpoint(foreign), std::invalid_argument);
}
