#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "amin/loss.hpp"
#include "amin/metrics.hpp"
#include "support.hpp"

using namespace amin;

namespace {

// Brute-force counts keyed by gray level, independent of the 256x256 table.
struct Counted {
    std::map<int, int> x, y;
    std::map<std::pair<int, int>, int> joint;
    int n = 0;
};

Counted count_levels(const Plane& x, const Plane& y) {
    Counted c;
    c.n = static_cast<int>(x.pixels.size());
    for (std::size_t i = 0; i < x.pixels.size(); ++i) {
        const int u = static_cast<int>(std::floor(x.pixels[i] * 255));
        const int v = static_cast<int>(std::floor(y.pixels[i] * 255));
        ++c.x[u];
        ++c.y[v];
        ++c.joint[{u, v}];
    }
    return c;
}

double brute_entropy(const Plane& x) {
    const Counted c = count_levels(x, x);
    double h = 0;
    for (const auto& [level, k] : c.x) {
        const double p = static_cast<double>(k) / c.n;
        h -= p * std::log2(p);
    }
    return h;
}

double brute_mi(const Plane& x, const Plane& y) {
    const Counted c = count_levels(x, y);
    double mi = 0;
    for (const auto& [key, k] : c.joint) {
        const double pxy = static_cast<double>(k) / c.n;
        const double px = static_cast<double>(c.x.at(key.first)) / c.n;
        const double py = static_cast<double>(c.y.at(key.second)) / c.n;
        mi += pxy * std::log2(pxy / (px * py));
    }
    return mi;
}

Plane add_noise(const Plane& x, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    Plane out = x;
    for (double& v : out.pixels) v = std::clamp(v + n(rng), 0.0, 1.0);
    return out;
}

Plane permuted(const Plane& x, const std::vector<std::size_t>& order) {
    Plane out(x.height, x.width);
    for (std::size_t i = 0; i < order.size(); ++i) out.pixels[i] = x.pixels[order[i]];
    return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("two-level triples follow the shared generator") {
    const auto t = testing::two_level_triple(0);
    const int expected[16] = {1, 1, 1, 1, 0, 1, 0, 1, 1, 0, 1, 1, 0, 0, 1, 1};
    for (int j = 0; j < 16; ++j) CHECK((t[0].pixels[j] > 0.5) == (expected[j] == 1));
}

TEST_CASE("EN, MI and NMI equal the exhaustive joint-count computation") {
    double sums[3] = {0, 0, 0};
    double worst = 0;
    for (std::uint64_t k = 0; k < 50; ++k) {
        const auto [f, a, b] = testing::two_level_triple(k);
        const double en = metric_en(f);
        const double mi = mutual_information(f, a, b);
        const double nmi = normalized_mi(f, a, b);
        const double hf = brute_entropy(f), ha = brute_entropy(a), hb = brute_entropy(b);
        const double ia = brute_mi(f, a), ib = brute_mi(f, b);
        worst = std::max({worst, std::abs(en - hf), std::abs(mi - (ia + ib)),
                          std::abs(nmi - 2 * (ia / (hf + ha) + ib / (hf + hb)))});
        sums[0] += en;
        sums[1] += mi;
        sums[2] += nmi;
        if (k == 0) {
            CHECK(en == doctest::Approx(0.8960382325345574).epsilon(1e-14));
            CHECK(mi == doctest::Approx(0.1261375880657652).epsilon(1e-13));
            CHECK(nmi == doctest::Approx(0.1330657447122503).epsilon(1e-13));
        }
        if (k == 2) {
            CHECK(mi == doctest::Approx(0.17921757075405878).epsilon(1e-13));
            CHECK(nmi == doctest::Approx(0.18372903144109587).epsilon(1e-13));
        }
    }
    // Summation order differs between the table and the map, so allow a few ulps.
    CHECK(worst < 1e-14);
    CHECK(sums[0] == doctest::Approx(47.3414912592669).epsilon(1e-13));
    CHECK(sums[1] == doctest::Approx(5.579449305260887).epsilon(1e-13));
    CHECK(sums[2] == doctest::Approx(5.884883994785551).epsilon(1e-13));
}

TEST_CASE("joint histogram counts every pixel once") {
    const Plane x = testing::random_plane(8, 8, 3), y = testing::random_plane(8, 8, 4);
    const auto h = joint_histogram(x, y);
    REQUIRE(h.size() == 256u * 256u);
    CHECK(std::accumulate(h.begin(), h.end(), std::uint64_t{0}) == 64u);
    CHECK(gray_level(1.0) == 255);
    CHECK(gray_level(0.0) == 0);
    CHECK(gray_level(0.5) == 127);
    CHECK_THROWS_AS(joint_histogram(x, Plane(8, 9)), SizeError);
}

TEST_CASE("constant images carry no information or gradient") {
    const Plane c(16, 16, 0.4);
    CHECK(metric_en(c) == 0.0);
    CHECK(metric_ag(c) == 0.0);
    Plane half(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 4; x < 8; ++x) half(y, x) = 1.0;
    CHECK(metric_en(half) == 1.0);
}

TEST_CASE("AG is reported on the 0-255 scale") {
    const Plane x = testing::synthetic_plane(24, 24, 5);
    CHECK(metric_ag(x) == doctest::Approx(255.0 * average_gradient(x)).epsilon(1e-14));
}

TEST_CASE("self-information identities") {
    const Plane x = testing::synthetic_plane(32, 32, 6);
    const double h = metric_en(x);
    CHECK(mutual_information(x, x, x) == doctest::Approx(2 * h).epsilon(1e-13));
    CHECK(normalized_mi(x, x, x) == doctest::Approx(2.0).epsilon(1e-13));
}

TEST_CASE("independent noise shares almost no information") {
    const Plane a = testing::random_plane(256, 256, 11), b = testing::random_plane(256, 256, 12);
    Plane a4 = a, b4 = b;
    // Coarse levels keep the plug-in estimator's positive bias small.
    for (double& v : a4.pixels) v = std::floor(v * 4) / 4;
    for (double& v : b4.pixels) v = std::floor(v * 4) / 4;
    CHECK(mutual_information_pair(a4, b4) < 0.01);
}

TEST_CASE("PSNR") {
    const Plane x = testing::synthetic_plane(16, 16, 7);
    CHECK(psnr_fusion(x, x, x) == kPsnrSentinel);
    Plane a(16, 16, 100.0 / 255), f(16, 16, 101.0 / 255);
    CHECK(psnr_fusion(f, a, a) == doctest::Approx(48.1308036086791).epsilon(1e-12));
    const double p1 = psnr_fusion(add_noise(x, 0.02, 1), x, x);
    const double p2 = psnr_fusion(add_noise(x, 0.08, 1), x, x);
    CHECK(p1 > p2);
    CHECK(p2 > 0);
}

TEST_CASE("QABF") {
    const Plane a = testing::synthetic_plane(48, 48, 8);
    const Plane b = testing::synthetic_plane(48, 48, 9, false);
    const Plane f = testing::synthetic_plane(48, 48, 10);
    CHECK(qabf(f, a, b) == doctest::Approx(qabf(f, b, a)).epsilon(1e-12));
    CHECK(qabf(Plane(48, 48, 0.5), a, b) < 1e-3);
    // Perfect preservation gives Qg(1) * Qa(1) with the standard sigmoid constants.
    const double plateau = 0.9994 / (1 + std::exp(-15.0 * 0.5)) * 0.9879 / (1 + std::exp(-22.0 * 0.2));
    CHECK(qabf(a, a, a) == doctest::Approx(plateau).epsilon(1e-12));
    const double q = qabf(f, a, b);
    CHECK(q >= 0.0);
    CHECK(q <= 1.0);
    CHECK_THROWS_AS(qabf(Plane(2, 2), Plane(2, 2), Plane(2, 2)), SizeError);
}

TEST_CASE("VIFF") {
    const Plane a = testing::synthetic_plane(64, 64, 13);
    CHECK(vif_multiscale(a, a) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(viff(a, a, a) == doctest::Approx(1.0).epsilon(1e-9));
    double previous = 1.0;
    for (double sigma : {0.01, 0.03, 0.1, 0.3}) {
        const double v = vif_multiscale(a, add_noise(a, sigma, 2));
        CHECK(v < previous);
        previous = v;
    }
    CHECK(vif_multiscale(a, Plane(64, 64, 0.5)) < 1e-3);
}

TEST_CASE("AFM") {
    const Plane a = testing::synthetic_plane(64, 64, 14);
    const Plane b = testing::synthetic_plane(64, 64, 15, false);
    CHECK(afm(a, a, a) == doctest::Approx(1.0).epsilon(1e-9));
    const double noise = afm(testing::random_plane(64, 64, 16), a, b);
    CHECK(std::abs(noise) < 0.1);
    const double v = afm(testing::synthetic_plane(64, 64, 17), a, b);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
    CHECK(pearson_correlation(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("histogram metrics are stable under a shared pixel permutation") {
    const Plane f = testing::synthetic_plane(32, 32, 18);
    const Plane a = testing::synthetic_plane(32, 32, 19);
    const Plane b = testing::synthetic_plane(32, 32, 20, false);
    std::vector<std::size_t> order(f.pixels.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), std::mt19937_64(21));
    const Plane pf = permuted(f, order), pa = permuted(a, order), pb = permuted(b, order);
    CHECK(metric_en(pf) == doctest::Approx(metric_en(f)).epsilon(1e-14));
    CHECK(mutual_information(pf, pa, pb) == doctest::Approx(mutual_information(f, a, b)).epsilon(1e-14));
    CHECK(normalized_mi(pf, pa, pb) == doctest::Approx(normalized_mi(f, a, b)).epsilon(1e-14));
    CHECK(psnr_fusion(pf, pa, pb) == doctest::Approx(psnr_fusion(f, a, b)).epsilon(1e-12));
}

TEST_CASE("evaluate fills every field with finite values and batches average") {
    std::vector<MetricReport> reports;
    for (std::uint64_t s = 0; s < 3; ++s) {
        const Plane f = testing::random_plane(64, 64, 100 + s);
        const Plane a = testing::random_plane(64, 64, 200 + s);
        const Plane b = testing::random_plane(64, 64, 300 + s);
        reports.push_back(evaluate(f, a, b, "p" + std::to_string(s)));
        for (double v : reports.back().values()) CHECK(std::isfinite(v));
        CHECK(reports.back().en >= 0);
        CHECK(reports.back().en <= 8);
        CHECK(reports.back().nmi > 0);
    }
    const MetricReport mean = average_reports(reports);
    CHECK(mean.pair_id == "mean");
    for (std::size_t m = 0; m < 8; ++m) {
        const double expected = (reports[0].values()[m] + reports[1].values()[m] + reports[2].values()[m]) / 3;
        CHECK(mean.values()[m] == doctest::Approx(expected).epsilon(1e-14));
    }
}

TEST_CASE("metric table columns follow the published order") {
    MetricReport r;
    r.pair_id = "x";
    r.en = 1;
    r.afm = 8;
    std::ostringstream out;
    write_metric_table(out, {r});
    std::istringstream in(out.str());
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "pair\tEN\tAG\tMI\tVIFF\tQABF\tNMI\tPSNR\tAFM");
    CHECK(row.rfind("x\t1.000000\t", 0) == 0);
    CHECK(row.substr(row.size() - 8) == "8.000000");
}

}  // TEST_SUITE
