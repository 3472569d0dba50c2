#include "amin/metrics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <numbers>

#include "amin/loss.hpp"

namespace amin {

namespace {

void require_triple(const Plane& f, const Plane& a, const Plane& b, const char* what) {
    if (!f.same_shape(a) || !f.same_shape(b)) throw SizeError(std::string(what) + ": image dimensions differ");
    if (f.size() == 0) throw SizeError(std::string(what) + ": empty image");
}

double entropy_of_counts(const std::vector<std::uint64_t>& counts, double n) {
    double h = 0;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return h;
}

}  // namespace

double metric_en(const Plane& fused) { return entropy(fused); }

double metric_ag(const Plane& fused) { return 255.0 * average_gradient(fused); }

int gray_level(double v) { return std::clamp(static_cast<int>(std::floor(v * 255.0)), 0, 255); }

std::vector<std::uint64_t> joint_histogram(const Plane& x, const Plane& y) {
    if (!x.same_shape(y)) throw SizeError("joint_histogram: image dimensions differ");
    std::vector<std::uint64_t> counts(256 * 256, 0);
    for (std::size_t i = 0; i < x.size(); ++i) ++counts[gray_level(x.pixels[i]) * 256 + gray_level(y.pixels[i])];
    return counts;
}

double mutual_information_pair(const Plane& x, const Plane& y) {
    const auto joint = joint_histogram(x, y);
    std::vector<std::uint64_t> px(256, 0), py(256, 0);
    for (int i = 0; i < 256; ++i) {
        for (int j = 0; j < 256; ++j) {
            px[i] += joint[i * 256 + j];
            py[j] += joint[i * 256 + j];
        }
    }
    const double n = static_cast<double>(x.size());
    // I = H(X) + H(Y) - H(X,Y)
    return entropy_of_counts(px, n) + entropy_of_counts(py, n) - entropy_of_counts(joint, n);
}

double mutual_information(const Plane& fused, const Plane& a, const Plane& b) {
    require_triple(fused, a, b, "mutual_information");
    return mutual_information_pair(fused, a) + mutual_information_pair(fused, b);
}

double normalized_mi(const Plane& fused, const Plane& a, const Plane& b) {
    require_triple(fused, a, b, "normalized_mi");
    const double hf = entropy(fused), ha = entropy(a), hb = entropy(b);
    auto term = [&](const Plane& src, double hs) {
        const double denom = hf + hs;
        return denom > 0 ? mutual_information_pair(fused, src) / denom : 0.0;
    };
    return 2.0 * (term(a, ha) + term(b, hb));
}

double psnr_fusion(const Plane& fused, const Plane& a, const Plane& b) {
    require_triple(fused, a, b, "psnr_fusion");
    auto mse = [&](const Plane& src) {
        double acc = 0;
        for (std::size_t i = 0; i < fused.size(); ++i) {
            const double d = 255.0 * (fused.pixels[i] - src.pixels[i]);
            acc += d * d;
        }
        return acc / static_cast<double>(fused.size());
    };
    const double m = 0.5 * (mse(a) + mse(b));
    if (m == 0.0) return kPsnrSentinel;
    return 10.0 * std::log10(255.0 * 255.0 / m);
}

// ---------------------------------------------------------------------------
// QABF

namespace {

struct EdgeMaps {
    Plane strength;
    Plane orientation;
};

// Sobel responses on the interior (borders excluded so padding cannot fake edges).
EdgeMaps sobel_edges(const Plane& p) {
    const int H = p.height - 2, W = p.width - 2;
    EdgeMaps e{Plane(H, W), Plane(H, W)};
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            auto at = [&](int dy, int dx) { return p(y + 1 + dy, x + 1 + dx); };
            const double gx = (at(-1, 1) + 2 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2 * at(0, -1) + at(1, -1));
            const double gy = (at(1, -1) + 2 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2 * at(-1, 0) + at(-1, 1));
            e.strength(y, x) = std::sqrt(gx * gx + gy * gy);
            e.orientation(y, x) = gx == 0.0 ? std::numbers::pi / 2 : std::atan(gy / gx);
        }
    }
    return e;
}

// Per-pixel preservation Q^{SF} of source edges in the fused image.
Plane edge_preservation(const EdgeMaps& src, const EdgeMaps& fused, const QabfConstants& k) {
    Plane q(src.strength.height, src.strength.width);
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double gs = src.strength.pixels[i], gf = fused.strength.pixels[i];
        double g = 0.0;
        if (gs > 0.0 && gf > 0.0) g = gs > gf ? gf / gs : gs / gf;
        const double a = 1.0 - std::abs(src.orientation.pixels[i] - fused.orientation.pixels[i]) / (std::numbers::pi / 2);
        const double qg = k.gamma_g / (1.0 + std::exp(k.kappa_g * (g - k.sigma_g)));
        const double qa = k.gamma_a / (1.0 + std::exp(k.kappa_a * (a - k.sigma_a)));
        q.pixels[i] = qg * qa;
    }
    return q;
}

}  // namespace

double qabf(const Plane& fused, const Plane& a, const Plane& b, const QabfConstants& k) {
    require_triple(fused, a, b, "qabf");
    if (fused.height < 3 || fused.width < 3) throw SizeError("qabf needs at least 3x3");
    const EdgeMaps ef = sobel_edges(fused), ea = sobel_edges(a), eb = sobel_edges(b);
    const Plane qa = edge_preservation(ea, ef, k);
    const Plane qb = edge_preservation(eb, ef, k);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < qa.size(); ++i) {
        const double wa = ea.strength.pixels[i], wb = eb.strength.pixels[i];
        num += qa.pixels[i] * wa + qb.pixels[i] * wb;
        den += wa + wb;
    }
    return den > 0 ? num / den : 0.0;
}

// ---------------------------------------------------------------------------
// VIFF

namespace {

Plane gaussian_window(int n, double sigma) {
    Plane w(n, n);
    const double r = (n - 1) / 2.0;
    double sum = 0;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            w(y, x) = std::exp(-((y - r) * (y - r) + (x - r) * (x - r)) / (2 * sigma * sigma));
            sum += w(y, x);
        }
    }
    for (double& v : w.pixels) v /= sum;
    return w;
}

Plane filter_valid_plane(const Plane& x, const Plane& k) {
    const int Ho = x.height - k.height + 1, Wo = x.width - k.width + 1;
    Plane out(Ho, Wo);
    for (int y = 0; y < Ho; ++y)
        for (int ky = 0; ky < k.height; ++ky)
            for (int kx = 0; kx < k.width; ++kx) {
                const double kv = k(ky, kx);
                for (int xx = 0; xx < Wo; ++xx) out(y, xx) += kv * x(y + ky, xx + kx);
            }
    return out;
}

Plane subsample2(const Plane& x) {
    Plane out((x.height + 1) / 2, (x.width + 1) / 2);
    for (int y = 0; y < out.height; ++y)
        for (int xx = 0; xx < out.width; ++xx) out(y, xx) = x(2 * y, 2 * xx);
    return out;
}

Plane product(const Plane& a, const Plane& b) {
    Plane out(a.height, a.width);
    for (std::size_t i = 0; i < a.size(); ++i) out.pixels[i] = a.pixels[i] * b.pixels[i];
    return out;
}

constexpr double kVifNoiseVar = 2.0;
constexpr double kVifTiny = 1e-10;
constexpr int kVifScales = 4;

}  // namespace

double vif_multiscale(const Plane& reference, const Plane& distorted) {
    if (!reference.same_shape(distorted)) throw SizeError("vif: image dimensions differ");
    Plane ref = reference, dist = distorted;
    for (double& v : ref.pixels) v *= 255.0;
    for (double& v : dist.pixels) v *= 255.0;

    double weighted = 0, weight_sum = 0;
    for (int scale = 1; scale <= kVifScales; ++scale) {
        const int n = (1 << (kVifScales - scale + 1)) + 1;
        const Plane win = gaussian_window(n, n / 5.0);
        if (scale > 1) {
            if (ref.height < n || ref.width < n) break;
            ref = subsample2(filter_valid_plane(ref, win));
            dist = subsample2(filter_valid_plane(dist, win));
        }
        if (ref.height < n || ref.width < n) break;
        const Plane mu1 = filter_valid_plane(ref, win), mu2 = filter_valid_plane(dist, win);
        const Plane e11 = filter_valid_plane(product(ref, ref), win);
        const Plane e22 = filter_valid_plane(product(dist, dist), win);
        const Plane e12 = filter_valid_plane(product(ref, dist), win);
        double num = 0, den = 0;
        for (std::size_t i = 0; i < mu1.size(); ++i) {
            double s1 = e11.pixels[i] - mu1.pixels[i] * mu1.pixels[i];
            double s2 = e22.pixels[i] - mu2.pixels[i] * mu2.pixels[i];
            const double s12 = e12.pixels[i] - mu1.pixels[i] * mu2.pixels[i];
            s1 = std::max(s1, 0.0);
            s2 = std::max(s2, 0.0);
            double g = s12 / (s1 + kVifTiny);
            double sv = s2 - g * s12;
            if (s1 < kVifTiny) {
                g = 0;
                sv = s2;
                s1 = 0;
            }
            if (s2 < kVifTiny) {
                g = 0;
                sv = 0;
            }
            if (g < 0) {
                sv = s2;
                g = 0;
            }
            sv = std::max(sv, kVifTiny);
            num += std::log10(1.0 + g * g * s1 / (sv + kVifNoiseVar));
            den += std::log10(1.0 + s1 / kVifNoiseVar);
        }
        if (den > 0) {
            weighted += 0.25 * (num / den);
            weight_sum += 0.25;
        }
    }
    // Scales with no reference information are dropped and the weights renormalised.
    return weight_sum > 0 ? weighted / weight_sum : 0.0;
}

double viff(const Plane& fused, const Plane& a, const Plane& b) {
    require_triple(fused, a, b, "viff");
    return 0.5 * (vif_multiscale(a, fused) + vif_multiscale(b, fused));
}

// ---------------------------------------------------------------------------
// Phase congruency / AFM

namespace {

constexpr int kPcScales = 4;
constexpr int kPcOrients = 6;
constexpr double kPcMinWavelength = 3.0;
constexpr double kPcMult = 2.1;
constexpr double kPcSigmaOnf = 0.55;
constexpr double kPcDThetaOnSigma = 1.2;
constexpr double kPcNoiseK = 2.0;
constexpr double kPcCutOff = 0.5;
constexpr double kPcG = 10.0;
constexpr double kPcEpsilon = 1e-4;

using cplx = std::complex<double>;

class Fft2 {
public:
    Fft2(int rows, int cols) : rows_(rows), cols_(cols), n_(static_cast<std::size_t>(rows) * cols) {
        buf_ = fftw_alloc_complex(n_);
        fwd_ = fftw_plan_dft_2d(rows, cols, buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
        inv_ = fftw_plan_dft_2d(rows, cols, buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    ~Fft2() {
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(inv_);
        fftw_free(buf_);
    }
    Fft2(const Fft2&) = delete;
    Fft2& operator=(const Fft2&) = delete;

    std::vector<cplx> forward(const Plane& p) {
        for (std::size_t i = 0; i < n_; ++i) {
            buf_[i][0] = p.pixels[i];
            buf_[i][1] = 0.0;
        }
        fftw_execute(fwd_);
        return copy_out(1.0);
    }
    // Normalised inverse transform of spectrum * filter.
    std::vector<cplx> inverse_filtered(const std::vector<cplx>& spectrum, const std::vector<double>& filter) {
        for (std::size_t i = 0; i < n_; ++i) {
            const cplx v = spectrum[i] * filter[i];
            buf_[i][0] = v.real();
            buf_[i][1] = v.imag();
        }
        fftw_execute(inv_);
        return copy_out(1.0 / static_cast<double>(n_));
    }

private:
    std::vector<cplx> copy_out(double scale) const {
        std::vector<cplx> out(n_);
        for (std::size_t i = 0; i < n_; ++i) out[i] = cplx(buf_[i][0] * scale, buf_[i][1] * scale);
        return out;
    }

    int rows_;
    int cols_;
    std::size_t n_;
    fftw_complex* buf_;
    fftw_plan fwd_;
    fftw_plan inv_;
};

// Frequency coordinate in cycles/pixel for FFT index i of an n-point transform.
double freq(int i, int n) {
    const int k = i <= (n - 1) / 2 ? i : i - n;
    return static_cast<double>(k) / n;
}

double median(std::vector<double> v) {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
    return m;
}

}  // namespace

Plane phase_congruency(const Plane& image) {
    const int rows = image.height, cols = image.width;
    const std::size_t n = image.size();
    if (rows < 3 || cols < 3) throw SizeError("phase_congruency needs at least 3x3");
    Fft2 fft(rows, cols);
    const std::vector<cplx> spectrum = fft.forward(image);

    std::vector<double> radius(n), sin_t(n), cos_t(n);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double y = freq(r, rows), x = freq(c, cols);
            const std::size_t i = static_cast<std::size_t>(r) * cols + c;
            radius[i] = std::sqrt(x * x + y * y);
            const double theta = std::atan2(-y, x);
            sin_t[i] = std::sin(theta);
            cos_t[i] = std::cos(theta);
        }
    }
    radius[0] = 1.0;  // avoid log(0); the DC term is zeroed below

    std::vector<std::vector<double>> log_gabor(kPcScales, std::vector<double>(n));
    for (int s = 0; s < kPcScales; ++s) {
        const double fo = 1.0 / (kPcMinWavelength * std::pow(kPcMult, s));
        const double denom = 2.0 * std::log(kPcSigmaOnf) * std::log(kPcSigmaOnf);
        for (std::size_t i = 0; i < n; ++i) {
            const double lp = 1.0 / (1.0 + std::pow(radius[i] / 0.45, 30.0));
            const double lr = std::log(radius[i] / fo);
            log_gabor[s][i] = std::exp(-(lr * lr) / denom) * lp;
        }
        log_gabor[s][0] = 0.0;
    }

    const double theta_sigma = std::numbers::pi / kPcOrients / kPcDThetaOnSigma;
    std::vector<double> total_energy(n, 0.0), total_sum_an(n, 0.0);
    std::vector<double> filter(n);
    for (int o = 0; o < kPcOrients; ++o) {
        const double angle = o * std::numbers::pi / kPcOrients;
        std::vector<double> spread(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double ds = sin_t[i] * std::cos(angle) - cos_t[i] * std::sin(angle);
            const double dc = cos_t[i] * std::cos(angle) + sin_t[i] * std::sin(angle);
            const double dtheta = std::abs(std::atan2(ds, dc));
            spread[i] = std::exp(-(dtheta * dtheta) / (2 * theta_sigma * theta_sigma));
        }
        std::vector<std::vector<cplx>> responses;
        std::vector<std::vector<double>> filters;
        std::vector<double> sum_an(n, 0.0), sum_e(n, 0.0), sum_o(n, 0.0), max_an(n, 0.0);
        for (int s = 0; s < kPcScales; ++s) {
            for (std::size_t i = 0; i < n; ++i) filter[i] = log_gabor[s][i] * spread[i];
            responses.push_back(fft.inverse_filtered(spectrum, filter));
            filters.push_back(filter);
            for (std::size_t i = 0; i < n; ++i) {
                const double an = std::abs(responses.back()[i]);
                sum_an[i] += an;
                sum_e[i] += responses.back()[i].real();
                sum_o[i] += responses.back()[i].imag();
                max_an[i] = std::max(max_an[i], an);
            }
        }
        std::vector<double> energy(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double xe = std::sqrt(sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]) + kPcEpsilon;
            const double me = sum_e[i] / xe, mo = sum_o[i] / xe;
            for (int s = 0; s < kPcScales; ++s) {
                const double e = responses[s][i].real(), od = responses[s][i].imag();
                energy[i] += e * me + od * mo - std::abs(e * mo - od * me);
            }
        }

        // Noise threshold from the smallest-scale response amplitude statistics.
        std::vector<double> e2(n);
        for (std::size_t i = 0; i < n; ++i) e2[i] = std::norm(responses[0][i]);
        double em_n = 0;
        for (double f : filters[0]) em_n += f * f;
        const double mean_e2n = -median(e2) / std::log(0.5);
        const double noise_power = em_n > 0 ? mean_e2n / em_n : 0.0;
        double est_sum_an2 = 0, est_sum_aiaj = 0;
        for (int s = 0; s < kPcScales; ++s) {
            for (double f : filters[s]) est_sum_an2 += f * f;
            for (int t = s + 1; t < kPcScales; ++t)
                for (std::size_t i = 0; i < n; ++i) est_sum_aiaj += filters[s][i] * filters[t][i];
        }
        const double est_noise_energy2 = 2 * noise_power * est_sum_an2 + 4 * noise_power * est_sum_aiaj;
        const double tau = std::sqrt(est_noise_energy2 / 2);
        const double est_noise_energy = tau * std::sqrt(std::numbers::pi / 2);
        const double est_noise_sigma = std::sqrt((2 - std::numbers::pi / 2) * tau * tau);
        const double threshold = (est_noise_energy + kPcNoiseK * est_noise_sigma) / 1.7;

        for (std::size_t i = 0; i < n; ++i) {
            const double width = sum_an[i] / (max_an[i] + kPcEpsilon) / kPcScales;
            const double weight = 1.0 / (1.0 + std::exp((kPcCutOff - width) * kPcG));
            total_energy[i] += weight * std::max(energy[i] - threshold, 0.0);
            total_sum_an[i] += sum_an[i];
        }
    }
    Plane pc(rows, cols);
    for (std::size_t i = 0; i < n; ++i) pc.pixels[i] = total_energy[i] / (total_sum_an[i] + kPcEpsilon);
    return pc;
}

double pearson_correlation(const Plane& x, const Plane& y) {
    if (!x.same_shape(y)) throw SizeError("pearson_correlation: dimensions differ");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x.pixels[i];
        my += y.pixels[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x.pixels[i] - mx, dy = y.pixels[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        // Degenerate maps: identical flat maps correlate perfectly, anything else not at all.
        return (sxx == 0.0 && syy == 0.0 && x.pixels == y.pixels) ? 1.0 : 0.0;
    }
    return sxy / std::sqrt(sxx * syy);
}

double afm(const Plane& fused, const Plane& a, const Plane& b) {
    require_triple(fused, a, b, "afm");
    const Plane pf = phase_congruency(fused), pa = phase_congruency(a), pb = phase_congruency(b);
    Plane pmax(pa.height, pa.width);
    for (std::size_t i = 0; i < pmax.size(); ++i) pmax.pixels[i] = std::max(pa.pixels[i], pb.pixels[i]);
    return pearson_correlation(pf, pa) * pearson_correlation(pf, pb) * pearson_correlation(pf, pmax);
}

// ---------------------------------------------------------------------------

MetricReport evaluate(const Plane& fused, const Plane& a, const Plane& b, const std::string& pair_id) {
    require_triple(fused, a, b, "evaluate");
    MetricReport r;
    r.pair_id = pair_id;
    r.en = metric_en(fused);
    r.ag = metric_ag(fused);
    r.mi = mutual_information(fused, a, b);
    r.viff = viff(fused, a, b);
    r.qabf = qabf(fused, a, b);
    r.nmi = normalized_mi(fused, a, b);
    r.psnr = psnr_fusion(fused, a, b);
    r.afm = afm(fused, a, b);
    return r;
}

MetricReport average_reports(const std::vector<MetricReport>& reports, const std::string& label) {
    MetricReport m;
    m.pair_id = label;
    if (reports.empty()) return m;
    for (const auto& r : reports) {
        m.en += r.en;
        m.ag += r.ag;
        m.mi += r.mi;
        m.viff += r.viff;
        m.qabf += r.qabf;
        m.nmi += r.nmi;
        m.psnr += r.psnr;
        m.afm += r.afm;
    }
    const double n = static_cast<double>(reports.size());
    m.en /= n;
    m.ag /= n;
    m.mi /= n;
    m.viff /= n;
    m.qabf /= n;
    m.nmi /= n;
    m.psnr /= n;
    m.afm /= n;
    return m;
}

void write_metric_table(std::ostream& out, const std::vector<MetricReport>& rows) {
    out << "pair";
    for (const char* name : kMetricNames) out << '\t' << name;
    out << '\n';
    out << std::fixed << std::setprecision(6);
    for (const auto& r : rows) {
        out << r.pair_id;
        for (double v : r.values()) out << '\t' << v;
        out << '\n';
    }
    out.unsetf(std::ios::floatfield);
}

}  // namespace amin
