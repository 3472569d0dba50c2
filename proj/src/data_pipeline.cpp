#include "amin/data_pipeline.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace amin {

namespace fs = std::filesystem;

GrayImage::GrayImage(Plane plane) : plane_(std::move(plane)) {
    if (plane_.height < kMinImageSide || plane_.width < kMinImageSide) {
        throw SizeError("GrayImage must be at least 8x8, got " + std::to_string(plane_.height) + "x" +
                        std::to_string(plane_.width));
    }
    if (plane_.size() != static_cast<std::size_t>(plane_.height) * plane_.width) {
        throw ShapeError("GrayImage pixel buffer does not match its dimensions");
    }
    for (double v : plane_.pixels) {
        if (!(v >= 0.0 && v <= 1.0)) throw RangeError("GrayImage pixel outside [0,1]");
    }
}

namespace {

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

void require_same(const Plane& a, const Plane& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": plane dimensions differ");
}

}  // namespace

YCbCrPlanes rgb_to_ycbcr(const RgbPlanes& rgb) {
    require_same(rgb.r, rgb.g, "rgb_to_ycbcr");
    require_same(rgb.r, rgb.b, "rgb_to_ycbcr");
    YCbCrPlanes out{Plane(rgb.r.height, rgb.r.width), Plane(rgb.r.height, rgb.r.width),
                    Plane(rgb.r.height, rgb.r.width)};
    for (std::size_t i = 0; i < rgb.r.size(); ++i) {
        const double r = rgb.r.pixels[i], g = rgb.g.pixels[i], b = rgb.b.pixels[i];
        out.y.pixels[i] = clip01(0.299 * r + 0.587 * g + 0.114 * b);
        out.cb.pixels[i] = clip01(0.5 - 0.168736 * r - 0.331264 * g + 0.5 * b);
        out.cr.pixels[i] = clip01(0.5 + 0.5 * r - 0.418688 * g - 0.081312 * b);
    }
    return out;
}

RgbPlanes ycbcr_to_rgb(const Plane& y, const Plane& cb, const Plane& cr) {
    require_same(y, cb, "ycbcr_to_rgb");
    require_same(y, cr, "ycbcr_to_rgb");
    // Exact inverse of the forward matrix (not the rounded textbook constants).
    static const std::array<double, 9> inv = [] {
        const double m[3][3] = {{0.299, 0.587, 0.114}, {-0.168736, -0.331264, 0.5}, {0.5, -0.418688, -0.081312}};
        const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        std::array<double, 9> r{};
        r[0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
        r[1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
        r[2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
        r[3] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
        r[4] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
        r[5] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
        r[6] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
        r[7] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
        r[8] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
        return r;
    }();
    RgbPlanes out{Plane(y.height, y.width), Plane(y.height, y.width), Plane(y.height, y.width)};
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double l = y.pixels[i], u = cb.pixels[i] - 0.5, v = cr.pixels[i] - 0.5;
        out.r.pixels[i] = clip01(inv[0] * l + inv[1] * u + inv[2] * v);
        out.g.pixels[i] = clip01(inv[3] * l + inv[4] * u + inv[5] * v);
        out.b.pixels[i] = clip01(inv[6] * l + inv[7] * u + inv[8] * v);
    }
    return out;
}

Plane crop_plane(const Plane& src, int top, int left, int height, int width) {
    if (top < 0 || left < 0 || top + height > src.height || left + width > src.width) {
        throw ShapeError("crop window outside the source plane");
    }
    Plane out(height, width);
    for (int y = 0; y < height; ++y) {
        std::copy_n(&src.pixels[static_cast<std::size_t>(top + y) * src.width + left], width, &out(y, 0));
    }
    return out;
}

PatchSet crop_augment(const ImagePair& pair) {
    for (const Plane* p : {&pair.mri.plane(), &pair.functional_y.plane()}) {
        if (p->height != kCropSource || p->width != kCropSource) {
            throw CropSizeError("crop_augment needs 256x256 inputs, got " + std::to_string(p->height) + "x" +
                                std::to_string(p->width));
        }
    }
    PatchSet set;
    set.source_id = pair.identifier;
    set.patches.reserve(kCropOffsets.size() * kCropOffsets.size());
    for (std::size_t row = 0; row < kCropOffsets.size(); ++row) {
        for (std::size_t col = 0; col < kCropOffsets.size(); ++col) {
            const int top = kCropOffsets[row], left = kCropOffsets[col];
            ImagePair patch;
            patch.mri = GrayImage(crop_plane(pair.mri.plane(), top, left, kCropSize, kCropSize));
            patch.functional_y = GrayImage(crop_plane(pair.functional_y.plane(), top, left, kCropSize, kCropSize));
            if (pair.functional_chroma) {
                patch.functional_chroma = ChromaPlanes{
                    crop_plane(pair.functional_chroma->cb, top, left, kCropSize, kCropSize),
                    crop_plane(pair.functional_chroma->cr, top, left, kCropSize, kCropSize)};
            }
            patch.identifier = pair.identifier + "#r" + std::to_string(row) + "c" + std::to_string(col);
            set.patches.push_back(std::move(patch));
        }
    }
    return set;
}

namespace {

Plane channel_to_plane(const cv::Mat& channel, double scale) {
    Plane p(channel.rows, channel.cols);
    for (int y = 0; y < channel.rows; ++y) {
        for (int x = 0; x < channel.cols; ++x) {
            const double v = channel.depth() == CV_8U ? channel.at<std::uint8_t>(y, x) : channel.at<std::uint16_t>(y, x);
            p(y, x) = v * scale;
        }
    }
    return p;
}

}  // namespace

DecodedImage read_image(const fs::path& path) {
    if (!fs::exists(path)) throw DecodeError("image not found: " + path.string());
    cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (mat.empty()) throw DecodeError("could not decode image: " + path.string());
    double scale = 0.0;
    if (mat.depth() == CV_8U) {
        scale = 1.0 / 255.0;
    } else if (mat.depth() == CV_16U) {
        scale = 1.0 / 65535.0;
    } else {
        throw DecodeError("unsupported bit depth (need 8 or 16 bit): " + path.string());
    }
    std::vector<cv::Mat> channels;
    cv::split(mat, channels);
    DecodedImage out;
    if (channels.size() == 1 || channels.size() == 2) {
        out.gray = channel_to_plane(channels[0], scale);
    } else if (channels.size() == 3 || channels.size() == 4) {
        // OpenCV decodes to BGR(A); alpha is ignored.
        RgbPlanes rgb{channel_to_plane(channels[2], scale), channel_to_plane(channels[1], scale),
                      channel_to_plane(channels[0], scale)};
        out.gray = rgb_to_ycbcr(rgb).y;
        out.rgb = std::move(rgb);
    } else {
        throw DecodeError("unsupported channel count in " + path.string());
    }
    return out;
}

ImagePair load_pair(const fs::path& mri_path, const fs::path& functional_path) {
    DecodedImage mri = read_image(mri_path);
    DecodedImage func = read_image(functional_path);
    if (!mri.gray.same_shape(func.gray)) {
        throw PairDimensionError("pair dimension mismatch: " + mri_path.string() + " is " +
                                 std::to_string(mri.gray.height) + "x" + std::to_string(mri.gray.width) + ", " +
                                 functional_path.string() + " is " + std::to_string(func.gray.height) + "x" +
                                 std::to_string(func.gray.width));
    }
    ImagePair pair;
    pair.mri = GrayImage(std::move(mri.gray));
    if (func.rgb) {
        YCbCrPlanes ycc = rgb_to_ycbcr(*func.rgb);
        pair.functional_y = GrayImage(std::move(ycc.y));
        pair.functional_chroma = ChromaPlanes{std::move(ycc.cb), std::move(ycc.cr)};
    } else {
        pair.functional_y = GrayImage(std::move(func.gray));
    }
    pair.identifier = mri_path.stem().string();
    return pair;
}

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(clip01(v) * 255.0)); }

void write_mat(const fs::path& path, const cv::Mat& mat) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), mat)) throw DecodeError("could not write image: " + path.string());
}

}  // namespace

void write_gray_png(const fs::path& path, const Plane& plane) {
    cv::Mat mat(plane.height, plane.width, CV_8UC1);
    for (int y = 0; y < plane.height; ++y)
        for (int x = 0; x < plane.width; ++x) mat.at<std::uint8_t>(y, x) = to_byte(plane(y, x));
    write_mat(path, mat);
}

void write_rgb_png(const fs::path& path, const RgbPlanes& rgb) {
    cv::Mat mat(rgb.r.height, rgb.r.width, CV_8UC3);
    for (int y = 0; y < rgb.r.height; ++y) {
        for (int x = 0; x < rgb.r.width; ++x) {
            mat.at<cv::Vec3b>(y, x) = cv::Vec3b(to_byte(rgb.b(y, x)), to_byte(rgb.g(y, x)), to_byte(rgb.r(y, x)));
        }
    }
    write_mat(path, mat);
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DecodeError("cannot open manifest: " + path.string());
    const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DecodeError(path.string() + ":" + std::to_string(lineno) + ": expected <mri>\\t<functional>");
        }
        fs::path mri = line.substr(0, tab);
        fs::path func = line.substr(tab + 1);
        if (mri.is_relative()) mri = base / mri;
        if (func.is_relative()) func = base / func;
        entries.push_back({mri, func, mri.stem().string()});
    }
    return entries;
}

}  // namespace amin
