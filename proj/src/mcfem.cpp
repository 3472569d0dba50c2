#include "amin/mcfem.hpp"

#include <algorithm>
#include <cmath>

namespace amin {

using ag::Var;

template <typename T>
void CbamParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".mlp.w1", mlp_w1});
    out.push_back({prefix + ".mlp.b1", mlp_b1});
    out.push_back({prefix + ".mlp.w2", mlp_w2});
    out.push_back({prefix + ".mlp.b2", mlp_b2});
    out.push_back({prefix + ".spatial.weight", spatial_weight});
    out.push_back({prefix + ".spatial.bias", spatial_bias});
}

template <typename T>
CbamParams<T> make_cbam(int channels, int reduction, Initializer& init) {
    CbamParams<T> p;
    p.channels = channels;
    p.hidden = std::max(1, channels / reduction);
    p.mlp_w1 = init.xavier_uniform<T>(1, channels, p.hidden, channels, p.hidden);
    p.mlp_b1 = Initializer::filled<T>(1, 1, p.hidden, 0.0);
    p.mlp_w2 = init.xavier_uniform<T>(1, p.hidden, channels, p.hidden, channels);
    p.mlp_b2 = Initializer::filled<T>(1, 1, channels, 0.0);
    p.spatial_weight = init.he_uniform<T>(1, 2, 49, 2 * 49);
    p.spatial_bias = Initializer::filled<T>(1, 1, 1, 0.0);
    return p;
}

template <typename T>
Var<T> channel_attention(const CbamParams<T>& params, const Var<T>& x) {
    const int C = x.channels();
    if (C != params.channels) throw ShapeError("channel_attention: channel count mismatch");
    auto mlp = [&](const Var<T>& pooled) {
        Var<T> row = ag::reshape(pooled, 1, 1, C);
        Var<T> hidden = ag::leaky_relu(ag::linear(row, params.mlp_w1, params.mlp_b1), T(0));
        return ag::linear(hidden, params.mlp_w2, params.mlp_b2);
    };
    Var<T> logits = ag::add(mlp(ag::global_avg_pool(x)), mlp(ag::global_max_pool(x)));
    return ag::reshape(ag::sigmoid(logits), C, 1, 1);
}

template <typename T>
Var<T> spatial_attention(const CbamParams<T>& params, const Var<T>& x) {
    Var<T> descriptors = ag::concat_channels(std::vector<Var<T>>{ag::channel_mean(x), ag::channel_max(x)});
    return ag::sigmoid(ag::conv2d(descriptors, params.spatial_weight, params.spatial_bias, 7));
}

template <typename T>
Var<T> cbam(const CbamParams<T>& params, const Var<T>& x) {
    Var<T> refined = ag::mul_channelwise(x, channel_attention(params, x));
    return ag::mul_spatial(refined, spatial_attention(params, refined));
}

template <typename T>
void TmuParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".ln1.gamma", ln1_gamma});
    out.push_back({prefix + ".ln1.beta", ln1_beta});
    out.push_back({prefix + ".attn.qkv.weight", qkv_weight});
    out.push_back({prefix + ".attn.qkv.bias", qkv_bias});
    out.push_back({prefix + ".attn.out.weight", out_weight});
    out.push_back({prefix + ".attn.out.bias", out_bias});
    out.push_back({prefix + ".ln2.gamma", ln2_gamma});
    out.push_back({prefix + ".ln2.beta", ln2_beta});
    out.push_back({prefix + ".mlp.fc1.weight", fc1_weight});
    out.push_back({prefix + ".mlp.fc1.bias", fc1_bias});
    out.push_back({prefix + ".mlp.fc2.weight", fc2_weight});
    out.push_back({prefix + ".mlp.fc2.bias", fc2_bias});
}

template <typename T>
TmuParams<T> make_tmu(int dim, int heads, int patch, int mlp_ratio, Initializer& init) {
    if (dim % heads != 0) throw ConfigError("TMU width must be divisible by the head count");
    TmuParams<T> p;
    p.dim = dim;
    p.heads = heads;
    p.patch = patch;
    p.hidden = dim * mlp_ratio;
    p.ln1_gamma = Initializer::filled<T>(1, 1, dim, 1.0);
    p.ln1_beta = Initializer::filled<T>(1, 1, dim, 0.0);
    p.qkv_weight = init.xavier_uniform<T>(1, dim, 3 * dim, dim, 3 * dim);
    p.qkv_bias = Initializer::filled<T>(1, 1, 3 * dim, 0.0);
    p.out_weight = init.xavier_uniform<T>(1, dim, dim, dim, dim);
    p.out_bias = Initializer::filled<T>(1, 1, dim, 0.0);
    p.ln2_gamma = Initializer::filled<T>(1, 1, dim, 1.0);
    p.ln2_beta = Initializer::filled<T>(1, 1, dim, 0.0);
    p.fc1_weight = init.xavier_uniform<T>(1, dim, p.hidden, dim, p.hidden);
    p.fc1_bias = Initializer::filled<T>(1, 1, p.hidden, 0.0);
    p.fc2_weight = init.xavier_uniform<T>(1, p.hidden, dim, p.hidden, dim);
    p.fc2_bias = Initializer::filled<T>(1, 1, dim, 0.0);
    return p;
}

template <typename T>
Var<T> multi_head_attention(const TmuParams<T>& params, const Var<T>& tokens) {
    const int d = params.dim;
    const int dh = d / params.heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Var<T> qkv = ag::linear(tokens, params.qkv_weight, params.qkv_bias);
    std::vector<Var<T>> heads;
    heads.reserve(params.heads);
    for (int h = 0; h < params.heads; ++h) {
        Var<T> q = ag::slice_cols(qkv, h * dh, dh);
        Var<T> k = ag::slice_cols(qkv, d + h * dh, dh);
        Var<T> v = ag::slice_cols(qkv, 2 * d + h * dh, dh);
        Var<T> weights = ag::softmax_rows(ag::mul_scalar(ag::matmul_bt(q, k), scale));
        heads.push_back(ag::matmul(weights, v));
    }
    return ag::linear(ag::concat_cols(heads), params.out_weight, params.out_bias);
}

template <typename T>
Var<T> tmu_tokens(const TmuParams<T>& params, const Var<T>& tokens) {
    if (tokens.width() != params.dim) throw ShapeError("TMU token width mismatch");
    constexpr T eps = T(1e-5);
    Var<T> u = ag::add(tokens, multi_head_attention(params, ag::layer_norm(tokens, params.ln1_gamma, params.ln1_beta, eps)));
    Var<T> hidden = ag::gelu(ag::linear(ag::layer_norm(u, params.ln2_gamma, params.ln2_beta, eps), params.fc1_weight,
                                        params.fc1_bias));
    return ag::add(u, ag::linear(hidden, params.fc2_weight, params.fc2_bias));
}

template <typename T>
Var<T> tmu_forward(const TmuParams<T>& params, const Var<T>& x) {
    const int p = params.patch;
    const int C = x.channels(), H = x.height(), W = x.width();
    if (C * p * p != params.dim) {
        throw ShapeError("tmu_forward: " + std::to_string(C) + " channels with patch " + std::to_string(p) +
                         " do not match token width " + std::to_string(params.dim));
    }
    const int pad_h = (p - H % p) % p, pad_w = (p - W % p) % p;
    Var<T> padded = (pad_h || pad_w) ? ag::reflect_pad(x, pad_h, pad_w) : x;
    Var<T> out = tmu_tokens(params, ag::to_tokens(padded, p));
    out = ag::from_tokens(out, C, H + pad_h, W + pad_w, p);
    return (pad_h || pad_w) ? ag::crop(out, H, W) : out;
}

template <typename T>
void McfemParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    if (cbam) cbam->collect(prefix + ".cbam", out);
    for (std::size_t i = 0; i < branches.size(); ++i) {
        const std::string name = prefix + ".branch" + std::to_string(i);
        out.push_back({name + ".weight", branches[i].weight});
        out.push_back({name + ".bias", branches[i].bias});
    }
    out.push_back({prefix + ".pre_fusion.weight", pre_fusion.weight});
    out.push_back({prefix + ".pre_fusion.bias", pre_fusion.bias});
    for (std::size_t i = 0; i < tmus.size(); ++i) tmus[i].collect(prefix + ".tmu" + std::to_string(i), out);
    out.push_back({prefix + ".post.weight", post.weight});
    out.push_back({prefix + ".post.bias", post.bias});
}

namespace {

template <typename T>
ConvLayer<T> make_conv(int c_in, int c_out, int k, Initializer& init) {
    return {k, init.he_uniform<T>(c_out, c_in, k * k, c_in * k * k), Initializer::filled<T>(c_out, 1, 1, 0.0)};
}

template <typename T>
Var<T> apply(const ConvLayer<T>& layer, const Var<T>& x) {
    return ag::conv2d(x, layer.weight, layer.bias, layer.kernel);
}

}  // namespace

template <typename T>
McfemParams<T> make_mcfem(const ModelConfig& config, Initializer& init) {
    config.validate();
    McfemParams<T> p;
    p.negative_slope = static_cast<T>(config.leaky_slope);
    constexpr int kInputs = 2;
    if (config.use_cbam) p.cbam = make_cbam<T>(kInputs, config.reduction, init);
    for (int k : config.branch_kernels) p.branches.push_back(make_conv<T>(kInputs, config.branch_width, k, init));
    const int token_channels = config.token_channels();
    p.pre_fusion = make_conv<T>(config.branch_width * static_cast<int>(config.branch_kernels.size()), token_channels, 3,
                                init);
    for (int i = 0; i < config.tmu_count; ++i) {
        p.tmus.push_back(make_tmu<T>(config.embed_dim, config.heads, config.patch, config.mlp_ratio, init));
    }
    p.post = make_conv<T>(token_channels, config.comp_width, 3, init);
    return p;
}

template <typename T>
Var<T> mcfem_forward(const McfemParams<T>& params, const Var<T>& mri_y, const Var<T>& func_y) {
    if (mri_y.channels() != 1 || func_y.channels() != 1 || mri_y.height() != func_y.height() ||
        mri_y.width() != func_y.width()) {
        throw ShapeError("mcfem_forward: inputs must be equal-sized single planes");
    }
    Var<T> x = ag::concat_channels(std::vector<Var<T>>{mri_y, func_y});
    if (params.cbam) x = cbam(*params.cbam, x);
    std::vector<Var<T>> branch_out;
    for (const auto& branch : params.branches) branch_out.push_back(ag::leaky_relu(apply(branch, x), params.negative_slope));
    Var<T> h = apply(params.pre_fusion, ag::concat_channels(branch_out));
    for (const auto& tmu : params.tmus) h = tmu_forward(tmu, h);
    return apply(params.post, h);
}

#define AMIN_INSTANTIATE_MCFEM(T)                                                              \
    template struct CbamParams<T>;                                                             \
    template struct TmuParams<T>;                                                              \
    template struct McfemParams<T>;                                                            \
    template CbamParams<T> make_cbam<T>(int, int, Initializer&);                               \
    template Var<T> channel_attention<T>(const CbamParams<T>&, const Var<T>&);                 \
    template Var<T> spatial_attention<T>(const CbamParams<T>&, const Var<T>&);                 \
    template Var<T> cbam<T>(const CbamParams<T>&, const Var<T>&);                              \
    template TmuParams<T> make_tmu<T>(int, int, int, int, Initializer&);                       \
    template Var<T> multi_head_attention<T>(const TmuParams<T>&, const Var<T>&);               \
    template Var<T> tmu_tokens<T>(const TmuParams<T>&, const Var<T>&);                         \
    template Var<T> tmu_forward<T>(const TmuParams<T>&, const Var<T>&);                        \
    template McfemParams<T> make_mcfem<T>(const ModelConfig&, Initializer&);                   \
    template Var<T> mcfem_forward<T>(const McfemParams<T>&, const Var<T>&, const Var<T>&);

AMIN_INSTANTIATE_MCFEM(float)
AMIN_INSTANTIATE_MCFEM(double)

}  // namespace amin
