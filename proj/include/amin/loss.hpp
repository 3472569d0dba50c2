#pragma once

#include "amin/config.hpp"
#include "amin/data_pipeline.hpp"
#include "amin/ops.hpp"

namespace amin {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

inline constexpr int kRmiRadius = 1;      // 3x3 neighbourhoods
inline constexpr int kRmiStride = 3;
inline constexpr int kRmiDim = 9;
inline constexpr double kRmiEpsilon = 1e-6;

// Normalised 11x11 Gaussian, sigma 1.5.
template <typename T>
Tensor<T> ssim_window();

// Mean SSIM over all fully-contained 11x11 windows, dynamic range 1.
double ssim(const Plane& x, const Plane& y);
template <typename T>
ag::Var<T> ssim_graph(const ag::Var<T>& x, const ag::Var<T>& y);

// Mean forward-difference gradient magnitude over the (H-1)x(W-1) interior, [0,1] scale.
double average_gradient(const Plane& x);

// Shannon entropy (bits) of the 256-bin histogram of floor(x * 255).
double entropy(const Plane& x);

// Region mutual information lower bound between fused and source, per vector
// dimension: (logdet(S_src) - logdet(S_src - S_sf S_f^-1 S_fs)) / (2 * 9),
// with 3x3 neighbourhoods sampled on a stride-3 grid and 1e-6 diagonal loading.
double region_mutual_information(const Plane& fused, const Plane& src);
// Same quantity with a gradient w.r.t. fused (src is treated as data).
template <typename T>
ag::Var<T> rmi_graph(const ag::Var<T>& fused, const Plane& src);

struct AdaptiveWeights {
    double alpha1 = 0;  // AG(mri)
    double alpha2 = 0;  // AG(functional)
    double beta1 = 0;   // EN(mri)
    double beta2 = 0;   // EN(functional)

    bool all_zero() const { return alpha1 == 0 && alpha2 == 0 && beta1 == 0 && beta2 == 0; }
};

// Depends on the source images only. With normalize, each pair is rescaled to sum to 1.
AdaptiveWeights compute_weights(const Plane& mri_y, const Plane& func_y, bool normalize = false);
// Adaptive weights unless the config pins a fixed quadruple.
AdaptiveWeights resolve_weights(const Plane& mri_y, const Plane& func_y, const LossConfig& config);

template <typename T>
struct LossBreakdown {
    ag::Var<T> total_var;
    double ssim_term = 0;
    double rmi_term = 0;
    double total = 0;
    AdaptiveWeights weights;
    bool degenerate = false;  // all weights zero: the sample contributes nothing
};

// ssim_term = a1 (1 - SSIM(f, mri)) + a2 (1 - SSIM(f, func))
// rmi_term  = -(b1 RMI(f, mri) + b2 RMI(f, func))
// RMI enters negated so that minimising the loss raises mutual information.
template <typename T>
LossBreakdown<T> total_loss(const ag::Var<T>& fused, const Plane& mri_y, const Plane& func_y,
                            const AdaptiveWeights& weights);

}  // namespace amin
