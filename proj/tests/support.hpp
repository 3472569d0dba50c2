#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "amin/autograd.hpp"
#include "amin/data_pipeline.hpp"
#include "amin/model.hpp"
#include <vector>

namespace amin::testing {

// Smooth ramps plus Gaussian blobs: enough structure for SSIM, RMI and edge
// metrics to respond, with a seed-controlled layout.
inline Plane synthetic_plane(int h, int w, std::uint64_t seed, bool anatomical = true) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Plane p(h, w);
    const double gx = u(rng) * 0.4, gy = u(rng) * 0.4;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) p(y, x) = 0.1 + gx * x / w + gy * y / h;
    const int blobs = anatomical ? 6 : 3;
    for (int b = 0; b < blobs; ++b) {
        const double cy = u(rng) * h, cx = u(rng) * w;
        const double r = (anatomical ? 0.05 : 0.12) * std::min(h, w) * (0.5 + u(rng));
        const double amp = (anatomical ? 0.35 : 0.5) * (u(rng) - 0.3);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double d2 = ((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (r * r);
                p(y, x) += amp * (anatomical ? (d2 < 1.0 ? 1.0 : std::exp(-(d2 - 1.0) * 4)) : std::exp(-d2));
            }
        }
    }
    if (anatomical) {
        // Fine texture so the anatomical image carries more gradient than the functional one.
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) p(y, x) += 0.05 * std::sin(0.7 * x + 0.3 * y) + 0.02 * (u(rng) - 0.5);
    }
    for (double& v : p.pixels) v = std::clamp(v, 0.0, 1.0);
    return p;
}

// Same closed-form fill as tests/oracles/derive.py: v[j] = amp * sin(0.37 j + offset).
template <typename T>
void fill_pattern(ag::Var<T>& var, double offset, double amp) {
    Tensor<T>& t = var.mutable_value();
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = static_cast<T>(amp * std::sin(0.37 * static_cast<double>(j) + offset));
}

inline Plane random_plane(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Plane p(h, w);
    for (double& v : p.pixels) v = u(rng);
    return p;
}

inline ImagePair synthetic_pair(int h, int w, std::uint64_t seed, const std::string& id = "synthetic") {
    ImagePair pair;
    pair.mri = GrayImage(synthetic_plane(h, w, seed, true));
    pair.functional_y = GrayImage(synthetic_plane(h, w, seed + 1000, false));
    pair.identifier = id;
    return pair;
}

// Writes n synthetic pairs (gray MRI, RGB functional when rgb is set) and a manifest.
inline std::filesystem::path write_dataset(const std::filesystem::path& dir, int n, int size, bool rgb,
                                           std::uint64_t seed = 7) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.tsv");
    for (int i = 0; i < n; ++i) {
        const std::string stem = "pair" + std::to_string(i);
        const Plane mri = synthetic_plane(size, size, seed + 17 * i, true);
        write_gray_png(dir / (stem + "_mri.png"), mri);
        if (rgb) {
            RgbPlanes c{synthetic_plane(size, size, seed + 17 * i + 1, false),
                        synthetic_plane(size, size, seed + 17 * i + 2, false),
                        synthetic_plane(size, size, seed + 17 * i + 3, false)};
            write_rgb_png(dir / (stem + "_func.png"), c);
        } else {
            write_gray_png(dir / (stem + "_func.png"), synthetic_plane(size, size, seed + 17 * i + 1, false));
        }
        manifest << stem << "_mri.png\t" << stem << "_func.png\n";
    }
    return dir / "manifest.tsv";
}

// Deep copy of parameter values. Copying ModelParams shares the underlying
// nodes, so a plain copy would keep tracking later updates.
template <typename T>
std::vector<Tensor<T>> snapshot_values(const ModelParams<T>& model) {
    std::vector<Tensor<T>> out;
    for (const auto& p : model.parameters()) out.push_back(p.var.value());
    return out;
}

template <typename T>
bool same_values(const std::vector<Tensor<T>>& a, const std::vector<Tensor<T>>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != b[i].size()) return false;
        for (std::size_t j = 0; j < a[i].size(); ++j)
            if (a[i][j] != b[i][j]) return false;
    }
    return true;
}

// Matches splitmix64 in tests/oracles/derive.py.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Three 4x4 images with levels 0.25 / 0.75, one bit of a splitmix64 draw per pixel.
inline std::array<Plane, 3> two_level_triple(std::uint64_t sample) {
    std::uint64_t state = sample;
    std::array<Plane, 3> out{Plane(4, 4), Plane(4, 4), Plane(4, 4)};
    for (auto& p : out) {
        const std::uint64_t bits = splitmix64(state);
        for (int j = 0; j < 16; ++j) p.pixels[j] = ((bits >> j) & 1) ? 0.75 : 0.25;
    }
    return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("amin_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace amin::testing
