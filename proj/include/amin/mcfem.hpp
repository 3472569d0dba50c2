#pragma once

#include <optional>
#include <string>
#include <vector>

#include "amin/config.hpp"
#include "amin/ops.hpp"
#include "amin/params.hpp"

namespace amin {

template <typename T>
struct CbamParams {
    int channels = 0;
    int hidden = 0;
    // Shared channel MLP, applied to both pooled descriptors (row-vector layout).
    ag::Var<T> mlp_w1;  // (1, C, hidden)
    ag::Var<T> mlp_b1;  // (1, 1, hidden)
    ag::Var<T> mlp_w2;  // (1, hidden, C)
    ag::Var<T> mlp_b2;  // (1, 1, C)
    ag::Var<T> spatial_weight;  // 7x7 conv over [mean, max]: (1, 2, 49)
    ag::Var<T> spatial_bias;    // (1, 1, 1)

    void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
CbamParams<T> make_cbam(int channels, int reduction, Initializer& init);

// sigmoid(MLP(avgpool(x)) + MLP(maxpool(x))), shape (C,1,1).
template <typename T>
ag::Var<T> channel_attention(const CbamParams<T>& params, const ag::Var<T>& x);
// sigmoid(conv7x7([mean_c(x), max_c(x)])), shape (1,H,W).
template <typename T>
ag::Var<T> spatial_attention(const CbamParams<T>& params, const ag::Var<T>& x);
template <typename T>
ag::Var<T> cbam(const CbamParams<T>& params, const ag::Var<T>& x);

// Pre-norm transformer unit over p x p patch tokens:
//   u   = t + MSA(LN1(t))
//   out = u + MLP(LN2(u))
// Tokenisation is a lossless space-to-depth reshape, so d = C * p * p.
template <typename T>
struct TmuParams {
    int dim = 0;
    int heads = 0;
    int patch = 0;
    int hidden = 0;
    ag::Var<T> ln1_gamma, ln1_beta;
    ag::Var<T> qkv_weight, qkv_bias;  // (1, d, 3d), (1, 1, 3d)
    ag::Var<T> out_weight, out_bias;  // (1, d, d), (1, 1, d)
    ag::Var<T> ln2_gamma, ln2_beta;
    ag::Var<T> fc1_weight, fc1_bias;  // (1, d, hidden)
    ag::Var<T> fc2_weight, fc2_bias;  // (1, hidden, d)

    void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
TmuParams<T> make_tmu(int dim, int heads, int patch, int mlp_ratio, Initializer& init);

// Multi-head self-attention on a (1, n, d) token matrix, including the output projection.
template <typename T>
ag::Var<T> multi_head_attention(const TmuParams<T>& params, const ag::Var<T>& tokens);
// Transformer unit on a token matrix.
template <typename T>
ag::Var<T> tmu_tokens(const TmuParams<T>& params, const ag::Var<T>& tokens);
// Transformer unit on a feature map; sizes not divisible by the patch are
// reflect-padded and cropped back.
template <typename T>
ag::Var<T> tmu_forward(const TmuParams<T>& params, const ag::Var<T>& x);

template <typename T>
struct ConvLayer {
    int kernel = 3;
    ag::Var<T> weight;
    ag::Var<T> bias;
};

template <typename T>
struct McfemParams {
    std::optional<CbamParams<T>> cbam;
    std::vector<ConvLayer<T>> branches;  // parallel, each 2 -> branch_width
    ConvLayer<T> pre_fusion;             // 3*branch_width -> token channels
    std::vector<TmuParams<T>> tmus;
    ConvLayer<T> post;                   // token channels -> comp_width
    T negative_slope = T(0.01);

    void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
McfemParams<T> make_mcfem(const ModelConfig& config, Initializer& init);

template <typename T>
ag::Var<T> mcfem_forward(const McfemParams<T>& params, const ag::Var<T>& mri_y, const ag::Var<T>& func_y);

}  // namespace amin
