#include "amin/loss.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <array>
#include <cmath>

namespace amin {

using ag::Var;

template <typename T>
Tensor<T> ssim_window() {
    Tensor<T> k(1, kSsimWindow, kSsimWindow);
    const int r = kSsimWindow / 2;
    double sum = 0;
    for (int y = 0; y < kSsimWindow; ++y) {
        for (int x = 0; x < kSsimWindow; ++x) {
            const double v = std::exp(-((y - r) * (y - r) + (x - r) * (x - r)) / (2.0 * kSsimSigma * kSsimSigma));
            sum += v;
        }
    }
    for (int y = 0; y < kSsimWindow; ++y) {
        for (int x = 0; x < kSsimWindow; ++x) {
            const double v = std::exp(-((y - r) * (y - r) + (x - r) * (x - r)) / (2.0 * kSsimSigma * kSsimSigma));
            k(0, y, x) = static_cast<T>(v / sum);
        }
    }
    return k;
}

template <typename T>
Var<T> ssim_graph(const Var<T>& x, const Var<T>& y) {
    if (!x.value().same_shape(y.value())) throw ShapeError("ssim: images differ in size");
    if (x.height() < kSsimWindow || x.width() < kSsimWindow) throw SizeError("ssim needs images of at least 11x11");
    static const Tensor<T> window = ssim_window<T>();
    const T c1 = static_cast<T>(kSsimK1 * kSsimK1);
    const T c2 = static_cast<T>(kSsimK2 * kSsimK2);

    Var<T> mu_x = ag::filter_valid(x, window);
    Var<T> mu_y = ag::filter_valid(y, window);
    Var<T> mu_xx = ag::mul(mu_x, mu_x);
    Var<T> mu_yy = ag::mul(mu_y, mu_y);
    Var<T> mu_xy = ag::mul(mu_x, mu_y);
    Var<T> var_x = ag::sub(ag::filter_valid(ag::mul(x, x), window), mu_xx);
    Var<T> var_y = ag::sub(ag::filter_valid(ag::mul(y, y), window), mu_yy);
    Var<T> cov = ag::sub(ag::filter_valid(ag::mul(x, y), window), mu_xy);

    Var<T> num = ag::mul(ag::add_scalar(ag::mul_scalar(mu_xy, T(2)), c1), ag::add_scalar(ag::mul_scalar(cov, T(2)), c2));
    Var<T> den = ag::mul(ag::add_scalar(ag::add(mu_xx, mu_yy), c1), ag::add_scalar(ag::add(var_x, var_y), c2));
    return ag::mean_all(ag::div(num, den));
}

double ssim(const Plane& x, const Plane& y) {
    ag::NoGradGuard no_grad;
    return ssim_graph<double>(ag::constant(to_tensor<double>(x)), ag::constant(to_tensor<double>(y))).value()[0];
}

double average_gradient(const Plane& x) {
    if (x.height < 2 || x.width < 2) throw SizeError("average_gradient needs at least 2x2");
    double acc = 0;
    for (int y = 0; y + 1 < x.height; ++y) {
        for (int c = 0; c + 1 < x.width; ++c) {
            const double dx = x(y, c + 1) - x(y, c);
            const double dy = x(y + 1, c) - x(y, c);
            acc += std::sqrt(dx * dx + dy * dy);
        }
    }
    return acc / (static_cast<double>(x.height - 1) * (x.width - 1));
}

double entropy(const Plane& x) {
    std::array<std::size_t, 256> hist{};
    for (double v : x.pixels) {
        const int level = std::clamp(static_cast<int>(std::floor(v * 255.0)), 0, 255);
        ++hist[level];
    }
    const double n = static_cast<double>(x.size());
    double h = 0;
    for (std::size_t count : hist) {
        if (count == 0) continue;
        const double p = count / n;
        h -= p * std::log2(p);
    }
    return h;
}

namespace {

using Mat = Eigen::MatrixXd;
using Mat9 = Eigen::Matrix<double, kRmiDim, kRmiDim>;

// Rows are the 3x3 neighbourhoods on a stride-3 grid, (dy, dx) row-major.
Mat region_vectors(const Plane& p) {
    const int gh = p.height / kRmiStride, gw = p.width / kRmiStride;
    Mat v(static_cast<Eigen::Index>(gh) * gw, kRmiDim);
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx)
            for (int dy = 0; dy < 3; ++dy)
                for (int dx = 0; dx < 3; ++dx)
                    v(gy * gw + gx, dy * 3 + dx) = p(gy * kRmiStride + dy, gx * kRmiStride + dx);
    return v;
}

double logdet_spd(const Mat9& m) {
    Eigen::LLT<Mat9> llt(m);
    if (llt.info() != Eigen::Success) throw NumericsError("RMI covariance is not positive definite");
    const auto& l = llt.matrixL();
    double acc = 0;
    for (int i = 0; i < kRmiDim; ++i) acc += std::log(l(i, i));
    return 2.0 * acc;
}

struct RmiResult {
    double value = 0;
    Mat grad;  // d value / d fused vectors (n x 9), only when requested
};

RmiResult rmi_core(const Plane& fused, const Plane& src, bool want_grad) {
    if (!fused.same_shape(src)) throw ShapeError("region_mutual_information: images differ in size");
    if (fused.height < 9 || fused.width < 9) throw SizeError("region_mutual_information needs at least 9x9");
    Mat f = region_vectors(fused);
    Mat s = region_vectors(src);
    const double n = static_cast<double>(f.rows());
    f.rowwise() -= f.colwise().mean();
    s.rowwise() -= s.colwise().mean();

    const Mat9 eye = Mat9::Identity();
    const Mat9 cov_s = (s.transpose() * s) / n + kRmiEpsilon * eye;
    const Mat9 cov_f = (f.transpose() * f) / n + kRmiEpsilon * eye;
    const Mat9 cross = (s.transpose() * f) / n;  // rows: source dims, cols: fused dims

    Eigen::LLT<Mat9> cov_f_llt(cov_f);
    if (cov_f_llt.info() != Eigen::Success) throw NumericsError("RMI fused covariance is not positive definite");
    const Mat9 a = cov_f_llt.solve(cross.transpose());  // S_f^-1 S_fs
    Mat9 cond = cov_s - cross * a + kRmiEpsilon * eye;
    cond = 0.5 * (cond + cond.transpose()).eval();

    RmiResult out;
    out.value = 0.5 * (logdet_spd(cov_s) - logdet_spd(cond)) / kRmiDim;
    if (want_grad) {
        // d/dF of -0.5 logdet(cond) / 9 = -(F A - S) cond^-1 A^T / (9 n)
        Eigen::LLT<Mat9> cond_llt(cond);
        const Mat9 g = cond_llt.solve(eye);
        out.grad = -((f * a - s) * g * a.transpose()) / (kRmiDim * n);
    }
    return out;
}

}  // namespace

double region_mutual_information(const Plane& fused, const Plane& src) { return rmi_core(fused, src, false).value; }

template <typename T>
Var<T> rmi_graph(const Var<T>& fused, const Plane& src) {
    if (fused.channels() != 1) throw ShapeError("rmi: single-channel input expected");
    const Plane fused_plane = to_plane(fused.value());
    RmiResult r = rmi_core(fused_plane, src, fused.requires_grad() && ag::grad_enabled());
    if (r.grad.size() == 0) return ag::make_result<T>(Tensor<T>(1, 1, 1, static_cast<T>(r.value)), {fused}, {});
    const int gw = fused_plane.width / kRmiStride;
    return ag::make_result<T>(Tensor<T>(1, 1, 1, static_cast<T>(r.value)), {fused},
                              [grad = std::move(r.grad), gw](ag::Node<T>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->ensure_grad();
        const T up = self.grad[0];
        for (Eigen::Index row = 0; row < grad.rows(); ++row) {
            const int gy = static_cast<int>(row) / gw, gx = static_cast<int>(row) % gw;
            for (int dy = 0; dy < 3; ++dy)
                for (int dx = 0; dx < 3; ++dx)
                    g(0, gy * kRmiStride + dy, gx * kRmiStride + dx) += up * static_cast<T>(grad(row, dy * 3 + dx));
        }
    });
}

AdaptiveWeights compute_weights(const Plane& mri_y, const Plane& func_y, bool normalize) {
    AdaptiveWeights w{average_gradient(mri_y), average_gradient(func_y), entropy(mri_y), entropy(func_y)};
    if (normalize) {
        if (const double s = w.alpha1 + w.alpha2; s > 0) {
            w.alpha1 /= s;
            w.alpha2 /= s;
        }
        if (const double s = w.beta1 + w.beta2; s > 0) {
            w.beta1 /= s;
            w.beta2 /= s;
        }
    }
    return w;
}

AdaptiveWeights resolve_weights(const Plane& mri_y, const Plane& func_y, const LossConfig& config) {
    if (config.fixed_weights) {
        const auto& f = *config.fixed_weights;
        return {f[0], f[1], f[2], f[3]};
    }
    return compute_weights(mri_y, func_y, config.normalize_weights);
}

template <typename T>
LossBreakdown<T> total_loss(const Var<T>& fused, const Plane& mri_y, const Plane& func_y, const AdaptiveWeights& weights) {
    if (fused.channels() != 1 || fused.height() != mri_y.height || fused.width() != mri_y.width ||
        !mri_y.same_shape(func_y)) {
        throw ShapeError("total_loss: fused and source images must share dimensions");
    }
    LossBreakdown<T> out;
    out.weights = weights;
    out.degenerate = weights.all_zero();

    Var<T> mri = ag::constant(to_tensor<T>(mri_y));
    Var<T> func = ag::constant(to_tensor<T>(func_y));
    Var<T> ssim_mri = ssim_graph(fused, mri);
    Var<T> ssim_func = ssim_graph(fused, func);
    Var<T> rmi_mri = rmi_graph(fused, mri_y);
    Var<T> rmi_func = rmi_graph(fused, func_y);

    Var<T> ssim_term = ag::add(ag::mul_scalar(ag::add_scalar(ag::mul_scalar(ssim_mri, T(-1)), T(1)), static_cast<T>(weights.alpha1)),
                               ag::mul_scalar(ag::add_scalar(ag::mul_scalar(ssim_func, T(-1)), T(1)), static_cast<T>(weights.alpha2)));
    Var<T> rmi_term = ag::add(ag::mul_scalar(rmi_mri, static_cast<T>(-weights.beta1)),
                              ag::mul_scalar(rmi_func, static_cast<T>(-weights.beta2)));
    out.total_var = ag::add(ssim_term, rmi_term);
    out.ssim_term = static_cast<double>(ssim_term.value()[0]);
    out.rmi_term = static_cast<double>(rmi_term.value()[0]);
    out.total = static_cast<double>(out.total_var.value()[0]);
    return out;
}

#define AMIN_INSTANTIATE_LOSS(T)                                                                          \
    template Tensor<T> ssim_window<T>();                                                                  \
    template Var<T> ssim_graph<T>(const Var<T>&, const Var<T>&);                                          \
    template Var<T> rmi_graph<T>(const Var<T>&, const Plane&);                                            \
    template struct LossBreakdown<T>;                                                                     \
    template LossBreakdown<T> total_loss<T>(const Var<T>&, const Plane&, const Plane&, const AdaptiveWeights&);

AMIN_INSTANTIATE_LOSS(float)
AMIN_INSTANTIATE_LOSS(double)

}  // namespace amin
