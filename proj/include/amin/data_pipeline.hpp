#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "amin/tensor.hpp"

namespace amin {

// Unconstrained 2-D array of doubles (row-major). Metric and loss kernels work on
// planes so they also accept the tiny images used by exhaustive oracles.
struct Plane {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    Plane() = default;
    Plane(int h, int w, double fill = 0.0) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

    double& operator()(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double operator()(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return pixels.size(); }
    bool same_shape(const Plane& o) const { return height == o.height && width == o.width; }
};

inline constexpr int kMinImageSide = 8;

// Validated luma plane: every pixel in [0,1], both sides >= 8.
class GrayImage {
public:
    GrayImage() = default;
    explicit GrayImage(Plane plane);

    int height() const { return plane_.height; }
    int width() const { return plane_.width; }
    const Plane& plane() const { return plane_; }
    operator const Plane&() const { return plane_; }  // NOLINT(google-explicit-constructor)

private:
    Plane plane_;
};

struct ChromaPlanes {
    Plane cb;
    Plane cr;
};

struct ImagePair {
    GrayImage mri;
    GrayImage functional_y;
    std::optional<ChromaPlanes> functional_chroma;
    std::string identifier;
};

struct PatchSet {
    std::vector<ImagePair> patches;
    std::string source_id;
};

struct RgbPlanes {
    Plane r;
    Plane g;
    Plane b;
};

struct YCbCrPlanes {
    Plane y;
    Plane cb;
    Plane cr;
};

// Full-range BT.601, outputs clipped to [0,1].
YCbCrPlanes rgb_to_ycbcr(const RgbPlanes& rgb);
RgbPlanes ycbcr_to_rgb(const Plane& y, const Plane& cb, const Plane& cr);

inline constexpr int kCropSource = 256;
inline constexpr int kCropSize = 120;
inline constexpr std::array<int, 6> kCropOffsets{0, 27, 54, 81, 108, 136};

// 6x6 grid of 120x120 crops from a 256x256 pair, row-major over (row, col) offsets.
PatchSet crop_augment(const ImagePair& pair);

struct DecodedImage {
    std::optional<RgbPlanes> rgb;  // set for colour inputs
    Plane gray;                    // luma for colour inputs, the image itself otherwise
};

DecodedImage read_image(const std::filesystem::path& path);
ImagePair load_pair(const std::filesystem::path& mri_path, const std::filesystem::path& functional_path);

// 8-bit PNG writers; values are clipped to [0,1] and rounded.
void write_gray_png(const std::filesystem::path& path, const Plane& plane);
void write_rgb_png(const std::filesystem::path& path, const RgbPlanes& rgb);

struct ManifestEntry {
    std::filesystem::path mri;
    std::filesystem::path functional;
    std::string identifier;  // MRI file stem
};

// One "<mri>\t<functional>" line per pair; relative paths resolve against the
// manifest's directory. Blank lines and '#' comments are skipped.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

template <typename T>
Tensor<T> to_tensor(const Plane& plane) {
    Tensor<T> t(1, plane.height, plane.width);
    for (std::size_t i = 0; i < plane.size(); ++i) t[i] = static_cast<T>(plane.pixels[i]);
    return t;
}

template <typename T>
Plane to_plane(const Tensor<T>& t) {
    if (t.channels() != 1) throw ShapeError("to_plane: single-channel tensor expected");
    Plane p(t.height(), t.width());
    for (std::size_t i = 0; i < p.size(); ++i) p.pixels[i] = static_cast<double>(t[i]);
    return p;
}

Plane crop_plane(const Plane& src, int top, int left, int height, int width);

}  // namespace amin
