#include <doctest.h>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <set>

#include "amin/data_pipeline.hpp"
#include "amin/errors.hpp"
#include "support.hpp"

using namespace amin;

namespace {

RgbPlanes solid(double r, double g, double b, int n = 8) { return {Plane(n, n, r), Plane(n, n, g), Plane(n, n, b)}; }

}  // namespace

TEST_SUITE("data_pipeline") {

TEST_CASE("GrayImage enforces size and range invariants") {
    CHECK_NOTHROW(GrayImage(Plane(8, 8, 0.5)));
    CHECK_THROWS_AS(GrayImage(Plane(7, 8, 0.5)), SizeError);
    CHECK_THROWS_AS(GrayImage(Plane(8, 8, 1.5)), RangeError);
    CHECK_THROWS_AS(GrayImage(Plane(8, 8, -0.01)), RangeError);
}

TEST_CASE("achromatic points map to neutral chroma") {
    auto white = rgb_to_ycbcr(solid(1, 1, 1));
    CHECK(white.y(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(white.cb(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(white.cr(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    auto black = rgb_to_ycbcr(solid(0, 0, 0));
    CHECK(black.y(0, 0) == 0.0);
    CHECK(black.cb(0, 0) == 0.5);
    CHECK(black.cr(0, 0) == 0.5);
}

TEST_CASE("pure red converts to the hand-evaluated BT.601 triple") {
    auto red = rgb_to_ycbcr(solid(1, 0, 0));
    CHECK(red.y(3, 3) == doctest::Approx(0.299).epsilon(1e-12));
    CHECK(red.cb(3, 3) == doctest::Approx(0.331264).epsilon(1e-12));
    CHECK(red.cr(3, 3) == doctest::Approx(1.0).epsilon(1e-12));

    auto back = ycbcr_to_rgb(Plane(8, 8, 0.299), Plane(8, 8, 0.331264), Plane(8, 8, 1.0));
    CHECK(back.r(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(back.g(0, 0) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(back.b(0, 0) == doctest::Approx(0.0).epsilon(1e-6));

    auto gray = ycbcr_to_rgb(Plane(8, 8, 1.0), Plane(8, 8, 0.5), Plane(8, 8, 0.5));
    CHECK(gray.r(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(gray.g(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(gray.b(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("colour round trip on interior colours") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.2, 0.8);
    RgbPlanes rgb{Plane(16, 16), Plane(16, 16), Plane(16, 16)};
    for (std::size_t i = 0; i < rgb.r.size(); ++i) {
        rgb.r.pixels[i] = u(rng);
        rgb.g.pixels[i] = u(rng);
        rgb.b.pixels[i] = u(rng);
    }
    const auto ycc = rgb_to_ycbcr(rgb);
    const auto back = ycbcr_to_rgb(ycc.y, ycc.cb, ycc.cr);
    for (std::size_t i = 0; i < rgb.r.size(); ++i) {
        CHECK(std::abs(back.r.pixels[i] - rgb.r.pixels[i]) < 1e-6);
        CHECK(std::abs(back.g.pixels[i] - rgb.g.pixels[i]) < 1e-6);
        CHECK(std::abs(back.b.pixels[i] - rgb.b.pixels[i]) < 1e-6);
    }
}

TEST_CASE("crop_augment yields the 6x6 grid covering the frame") {
    ImagePair pair = testing::synthetic_pair(256, 256, 1, "src");
    PatchSet set = crop_augment(pair);
    REQUIRE(set.patches.size() == 36);
    CHECK(set.source_id == "src");
    std::vector<int> covered(256 * 256, 0);
    for (int row = 0; row < 6; ++row) {
        for (int col = 0; col < 6; ++col) {
            const auto& p = set.patches[row * 6 + col];
            CHECK(p.mri.height() == 120);
            CHECK(p.mri.width() == 120);
            const int top = kCropOffsets[row], left = kCropOffsets[col];
            CHECK(p.mri.plane()(0, 0) == pair.mri.plane()(top, left));
            CHECK(p.functional_y.plane()(119, 119) == pair.functional_y.plane()(top + 119, left + 119));
            for (int y = 0; y < 120; ++y)
                for (int x = 0; x < 120; ++x) covered[(top + y) * 256 + left + x] = 1;
        }
    }
    CHECK(std::count(covered.begin(), covered.end(), 1) == 256 * 256);
    // The (row 0, col 5) patch ends exactly on the last column.
    CHECK(kCropOffsets[5] + kCropSize - 1 == 255);
    CHECK(set.patches[5].mri.plane()(0, 119) == pair.mri.plane()(0, 255));
    CHECK(set.patches[0].identifier == "src#r0c0");
}

TEST_CASE("crop_augment rejects other sizes") {
    CHECK_THROWS_AS(crop_augment(testing::synthetic_pair(255, 256, 1)), CropSizeError);
}

TEST_CASE("crop_augment slices chroma with the luma") {
    ImagePair pair = testing::synthetic_pair(256, 256, 2);
    pair.functional_chroma = ChromaPlanes{testing::random_plane(256, 256, 4), testing::random_plane(256, 256, 5)};
    PatchSet set = crop_augment(pair);
    const auto& p = set.patches[7];  // row 1, col 1
    REQUIRE(p.functional_chroma.has_value());
    CHECK(p.functional_chroma->cb(0, 0) == pair.functional_chroma->cb(27, 27));
    CHECK(p.functional_chroma->cr.height == 120);
}

TEST_CASE("load_pair handles gray, RGB and mismatched inputs") {
    const auto dir = testing::scratch_dir("pipeline");
    const Plane a = testing::synthetic_plane(256, 256, 1);
    write_gray_png(dir / "mri.png", a);
    write_gray_png(dir / "func.png", testing::synthetic_plane(256, 256, 2, false));
    write_rgb_png(dir / "func_rgb.png", {testing::synthetic_plane(256, 256, 3, false),
                                         testing::synthetic_plane(256, 256, 4, false),
                                         testing::synthetic_plane(256, 256, 5, false)});
    write_gray_png(dir / "short.png", testing::synthetic_plane(255, 256, 6));

    ImagePair gray = load_pair(dir / "mri.png", dir / "func.png");
    CHECK_FALSE(gray.functional_chroma.has_value());
    CHECK(gray.identifier == "mri");
    CHECK(gray.mri.height() == 256);
    // 8-bit quantisation: the loaded plane is within half a level of the written one.
    CHECK(std::abs(gray.mri.plane()(100, 100) - a(100, 100)) <= 0.5 / 255.0 + 1e-12);

    ImagePair colour = load_pair(dir / "mri.png", dir / "func_rgb.png");
    REQUIRE(colour.functional_chroma.has_value());
    CHECK(colour.functional_chroma->cb.height == 256);
    CHECK(colour.functional_chroma->cr.width == 256);

    CHECK_THROWS_AS(load_pair(dir / "mri.png", dir / "short.png"), PairDimensionError);
    CHECK_THROWS_AS(load_pair(dir / "mri.png", dir / "missing.png"), DecodeError);
}

TEST_CASE("16-bit images are scaled by 1/65535") {
    const auto dir = testing::scratch_dir("pipeline16");
    // Written through the 8-bit path, then compare with a manually produced 16-bit file.
    cv::Mat m(8, 8, CV_16UC1, cv::Scalar(65535));
    m.at<std::uint16_t>(0, 0) = 0;
    m.at<std::uint16_t>(1, 1) = 32768;
    cv::imwrite((dir / "deep.png").string(), m);
    DecodedImage img = read_image(dir / "deep.png");
    CHECK(img.gray(0, 0) == 0.0);
    CHECK(img.gray(2, 2) == 1.0);
    CHECK(img.gray(1, 1) == doctest::Approx(32768.0 / 65535.0).epsilon(1e-15));
}

TEST_CASE("manifest paths resolve against the manifest directory") {
    const auto dir = testing::scratch_dir("manifest");
    const auto manifest = testing::write_dataset(dir, 2, 32, false);
    {
        std::ofstream f(manifest, std::ios::app);
        f << "\n# comment line\n";
    }
    auto entries = read_manifest(manifest);
    REQUIRE(entries.size() == 2);
    CHECK(entries[1].identifier == "pair1_mri");
    CHECK(std::filesystem::exists(entries[0].functional));
}

}  // TEST_SUITE
