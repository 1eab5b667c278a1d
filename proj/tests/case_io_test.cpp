#include <gtest/gtest.h>
#include <png.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "c123/case_io.hpp"
#include "support.hpp"

using namespace c123;
using testsupport::TempDir;

namespace {

void write_png_rgba(const std::string& path, const Image& img) {
    ASSERT_EQ(img.channels, 4);
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = PNG_FORMAT_RGBA;
    std::vector<png_byte> buffer(img.size());
    for (size_t i = 0; i < img.size(); ++i) {
        double v = std::clamp(img.data[i], 0.0, 1.0);
        buffer[i] = static_cast<png_byte>(v * 255.0 + 0.5);
    }
    ASSERT_TRUE(png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr));
}

CameraPose front_pose() { return pose_from_spherical(0.0, 0.0, 2.0, 60.0); }

std::string fresh_dir(const TempDir& tmp, const std::string& name) {
    const std::string dir = tmp.sub(name);
    std::filesystem::create_directories(dir);
    return dir;
}

// Quarter-tone checkerboard image with a fully opaque left half and a fully
// transparent right half.
Image rgba_test_image(int res) {
    Image img(res, res, 4);
    for (int r = 0; r < res; ++r)
        for (int c = 0; c < res; ++c) {
            const double tone = ((r + c) % 2 == 0) ? 0.25 : 0.75;
            for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = tone;
            img.at(r, c, 3) = c < res / 2 ? 1.0 : 0.0;
        }
    return img;
}

}  // namespace

TEST(LoadCase, RgbaCompositesOverWhiteAndBinarizesAlpha) {
    TempDir tmp;
    const std::string dir = fresh_dir(tmp, "case");
    const int res = 16;
    write_png_rgba(dir + "/image.png", rgba_test_image(res));
    std::ofstream(dir + "/prompt.txt") << "a checkerboard slab\n";

    const LoadedCase loaded = load_case_directory(dir, front_pose());
    const CaseInput& c = loaded.input;
    ASSERT_EQ(c.image.channels, 3);
    EXPECT_EQ(c.image.height, res);
    ASSERT_EQ(c.mask.channels, 1);
    EXPECT_EQ(c.prompt, "a checkerboard slab");
    EXPECT_FALSE(loaded.category.has_value());
    EXPECT_FALSE(c.has_depth());

    for (int r = 0; r < res; ++r)
        for (int col = 0; col < res; ++col) {
            const double tone = ((r + col) % 2 == 0) ? 0.25 : 0.75;
            if (col < res / 2) {
                EXPECT_EQ(c.mask.at(r, col, 0), 1.0);
                EXPECT_NEAR(c.image.at(r, col, 0), tone, 1.0 / 255.0);
            } else {
                EXPECT_EQ(c.mask.at(r, col, 0), 0.0);
                // Transparent pixels composite to pure white.
                for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(c.image.at(r, col, ch), 1.0, 1e-12);
            }
        }
}

TEST(LoadCase, ExplicitMaskOverridesAlphaAndBinarizes) {
    TempDir tmp;
    const std::string dir = fresh_dir(tmp, "case");
    const int res = 8;
    write_png_rgba(dir + "/image.png", rgba_test_image(res));
    // Gray ramp mask: values below 0.5 must clamp to 0, the rest to 1.
    Image mask_rgb(res, res, 3);
    for (int r = 0; r < res; ++r)
        for (int c = 0; c < res; ++c)
            for (int ch = 0; ch < 3; ++ch) mask_rgb.at(r, c, ch) = r < res / 2 ? 0.3 : 0.9;
    write_png_rgb(dir + "/mask.png", mask_rgb);
    std::ofstream(dir + "/prompt.txt") << "ramp mask\n";
    std::ofstream(dir + "/category.txt") << "  slab \n";

    const LoadedCase loaded = load_case_directory(dir, front_pose());
    ASSERT_TRUE(loaded.category.has_value());
    EXPECT_EQ(*loaded.category, "slab");
    for (int r = 0; r < res; ++r)
        for (int c = 0; c < res; ++c)
            EXPECT_EQ(loaded.input.mask.at(r, c, 0), r < res / 2 ? 0.0 : 1.0);
}

TEST(LoadCase, RgbImageRequiresMaskFile) {
    TempDir tmp;
    const std::string dir = fresh_dir(tmp, "case");
    write_png_rgb(dir + "/image.png", Image(8, 8, 3, 0.5));
    std::ofstream(dir + "/prompt.txt") << "no mask anywhere\n";
    try {
        load_case_directory(dir, front_pose());
        FAIL() << "expected invalid_argument";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("mask.png"), std::string::npos);
    }
}

TEST(LoadCase, DepthRasterRidesAlong) {
    TempDir tmp;
    const std::string dir = fresh_dir(tmp, "case");
    const int res = 8;
    write_png_rgba(dir + "/image.png", rgba_test_image(res));
    std::ofstream(dir + "/prompt.txt") << "with depth\n";
    Image depth(res, res, 1);
    for (size_t i = 0; i < depth.data.size(); ++i) depth.data[i] = 1.0 + 0.01 * i;
    write_f32_raster(dir + "/depth.f32", depth);

    const LoadedCase loaded = load_case_directory(dir, front_pose());
    ASSERT_TRUE(loaded.input.has_depth());
    for (size_t i = 0; i < depth.data.size(); ++i)
        EXPECT_NEAR(loaded.input.depth.data[i], depth.data[i], 1e-6);

    // Truncated depth file is a hard error, not a silent skip.
    std::ofstream(dir + "/depth.f32", std::ios::binary | std::ios::trunc) << "abc";
    EXPECT_THROW(load_case_directory(dir, front_pose()), std::invalid_argument);
}

TEST(LoadCase, ErrorsNameTheMissingFile) {
    TempDir tmp;
    const std::string missing = tmp.path() + "/nowhere";
    try {
        load_case_directory(missing, front_pose());
        FAIL() << "expected invalid_argument";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("case directory missing"), std::string::npos);
    }

    const std::string dir = fresh_dir(tmp, "empty_case");
    try {
        load_case_directory(dir, front_pose());
        FAIL() << "expected invalid_argument";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("image.png"), std::string::npos);
    }

    write_png_rgba(dir + "/image.png", rgba_test_image(8));
    try {
        load_case_directory(dir, front_pose());
        FAIL() << "expected invalid_argument";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("prompt.txt"), std::string::npos);
    }

    std::ofstream(dir + "/prompt.txt") << "   \n";
    try {
        load_case_directory(dir, front_pose());
        FAIL() << "expected invalid_argument";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("prompt empty"), std::string::npos);
    }
}

TEST(Resample, BilinearPreservesConstantsAndIdentity) {
    Image constant(10, 10, 3, 0.6);
    const Image up = bilinear_resample(constant, 23, 17);
    EXPECT_EQ(up.height, 23);
    EXPECT_EQ(up.width, 17);
    for (double v : up.data) EXPECT_NEAR(v, 0.6, 1e-12);

    Image ramp(6, 6, 1);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c) ramp.at(r, c, 0) = 0.1 * r + 0.05 * c;
    const Image same = bilinear_resample(ramp, 6, 6);
    for (size_t i = 0; i < ramp.data.size(); ++i) EXPECT_NEAR(same.data[i], ramp.data[i], 1e-12);

    EXPECT_THROW(bilinear_resample(Image{}, 4, 4), std::invalid_argument);
    EXPECT_THROW(bilinear_resample(ramp, 0, 4), std::invalid_argument);
}

TEST(Resample, DownThenValuesStayInHull) {
    Image src(32, 32, 3);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : src.data) v = u(rng);
    const Image down = bilinear_resample(src, 9, 9);
    for (double v : down.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Resample, CaseResampleKeepsMaskBinaryAndShapesAligned) {
    const SceneModel target = testsupport::make_target_scene(8, 1.0);
    CaseInput input = testsupport::make_case_from_scene(target, front_pose(), 33, "blob");
    ASSERT_TRUE(input.has_depth());

    resample_case(input, 16);
    EXPECT_EQ(input.image.height, 16);
    EXPECT_EQ(input.image.width, 16);
    EXPECT_EQ(input.mask.height, 16);
    EXPECT_EQ(input.depth.height, 16);
    for (double v : input.mask.data) EXPECT_TRUE(v == 0.0 || v == 1.0);
    EXPECT_NO_THROW(input.validate());

    // Already at target size: untouched rasters.
    const Image before = input.image;
    resample_case(input, 16);
    EXPECT_EQ(input.image.data, before.data);
}
