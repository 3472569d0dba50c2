#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "amin/data_pipeline.hpp"

namespace amin {

// Column order of every emitted table.
inline constexpr std::array<const char*, 8> kMetricNames{"EN", "AG", "MI", "VIFF", "QABF", "NMI", "PSNR", "AFM"};

struct MetricReport {
    double en = 0;
    double ag = 0;
    double mi = 0;
    double viff = 0;
    double qabf = 0;
    double nmi = 0;
    double psnr = 0;
    double afm = 0;
    std::string pair_id;

    std::array<double, 8> values() const { return {en, ag, mi, viff, qabf, nmi, psnr, afm}; }
};

double metric_en(const Plane& fused);
// Average gradient on the 0-255 scale.
double metric_ag(const Plane& fused);

// 256-bin quantisation shared by every histogram metric: floor(x * 255).
int gray_level(double v);
// Row-major 256 x 256 counts of (level(x), level(y)).
std::vector<std::uint64_t> joint_histogram(const Plane& x, const Plane& y);
// I(X;Y) in bits.
double mutual_information_pair(const Plane& x, const Plane& y);

// I(F;A) + I(F;B).
double mutual_information(const Plane& fused, const Plane& a, const Plane& b);
// 2 [ I(F;A)/(H(F)+H(A)) + I(F;B)/(H(F)+H(B)) ]
double normalized_mi(const Plane& fused, const Plane& a, const Plane& b);

inline constexpr double kPsnrSentinel = 100.0;
// Mean of the two MSEs on the 0-255 scale; identical images give the 100 dB sentinel.
double psnr_fusion(const Plane& fused, const Plane& a, const Plane& b);

// Xydeas-Petrovic edge-transfer constants.
struct QabfConstants {
    double gamma_g = 0.9994;
    double kappa_g = -15.0;
    double sigma_g = 0.5;
    double gamma_a = 0.9879;
    double kappa_a = -22.0;
    double sigma_a = 0.8;
};
double qabf(const Plane& fused, const Plane& a, const Plane& b, const QabfConstants& k = {});

// Pixel-domain multi-scale VIF of one reference/distorted pair, four scales
// weighted 0.25 each, GSM noise variance 2 on the 0-255 scale.
double vif_multiscale(const Plane& reference, const Plane& distorted);
// Mean of vif_multiscale(a, fused) and vif_multiscale(b, fused).
double viff(const Plane& fused, const Plane& a, const Plane& b);

// Phase congruency (log-Gabor, 4 scales, 6 orientations).
Plane phase_congruency(const Plane& image);
double pearson_correlation(const Plane& x, const Plane& y);
// corr(PC_F, PC_A) * corr(PC_F, PC_B) * corr(PC_F, max(PC_A, PC_B)).
double afm(const Plane& fused, const Plane& a, const Plane& b);

MetricReport evaluate(const Plane& fused, const Plane& a, const Plane& b, const std::string& pair_id = {});
MetricReport average_reports(const std::vector<MetricReport>& reports, const std::string& label = "mean");

// Tab-separated table: header "pair<TAB>EN<TAB>AG...", one row per report.
void write_metric_table(std::ostream& out, const std::vector<MetricReport>& rows);

}  // namespace amin
