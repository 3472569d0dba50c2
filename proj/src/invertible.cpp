#include "amin/invertible.hpp"

#include <cmath>
#include <utility>

namespace amin {

using ag::Var;

double scale_factor_value(double r_out, double clamp) {
    const double s = 1.0 / (1.0 + std::exp(-r_out));
    return std::exp(clamp * 2.0 * (s - 0.5));
}

template <typename T>
void DenseNetParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t i = 0; i < 5; ++i) {
        out.push_back({prefix + ".w" + std::to_string(i + 1), weights[i]});
        out.push_back({prefix + ".b" + std::to_string(i + 1), biases[i]});
    }
}

template <typename T>
DenseNetParams<T> make_dense_net(int c_in, int growth, int c_out, Initializer& init) {
    DenseNetParams<T> p;
    p.c_in = c_in;
    p.growth = growth;
    p.c_out = c_out;
    for (int i = 0; i < 4; ++i) {
        const int in = c_in + i * growth;
        p.weights[i] = init.he_uniform<T>(growth, in, 9, in * 9);
        p.biases[i] = Initializer::filled<T>(growth, 1, 1, 0.0);
    }
    // The fusing 1x1 conv starts at zero so every coupling begins as the identity
    // map (scale 1, shift 0); random init here compounds across stacked blocks.
    const int in = c_in + 4 * growth;
    p.weights[4] = Initializer::filled<T>(c_out, in, 1, 0.0);
    p.biases[4] = Initializer::filled<T>(c_out, 1, 1, 0.0);
    return p;
}

template <typename T>
Var<T> dense_forward(const DenseNetParams<T>& params, const Var<T>& x, T negative_slope) {
    if (x.channels() != params.c_in) {
        throw ShapeError("dense_forward: expected " + std::to_string(params.c_in) + " input channels, got " +
                         std::to_string(x.channels()));
    }
    std::vector<Var<T>> features{x};
    Var<T> stacked = x;
    for (int i = 0; i < 4; ++i) {
        Var<T> r = ag::leaky_relu(ag::conv2d(stacked, params.weights[i], params.biases[i], 3), negative_slope);
        features.push_back(r);
        stacked = ag::concat_channels(features);
    }
    return ag::conv2d(stacked, params.weights[4], params.biases[4], 1);
}

template <typename T>
void CouplingNets<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    if (translation) {
        scale.collect(prefix + ".s_net", out);
        translation->collect(prefix + ".t_net", out);
    } else {
        scale.collect(prefix + ".st_net", out);
    }
}

template <typename T>
void IdbParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    first.collect(prefix + ".first", out);
    second.collect(prefix + ".second", out);
}

namespace {

template <typename T>
CouplingNets<T> make_coupling(int half, int growth, bool separate, Initializer& init) {
    CouplingNets<T> nets;
    if (separate) {
        nets.scale = make_dense_net<T>(half, growth, half, init);
        nets.translation = make_dense_net<T>(half, growth, half, init);
    } else {
        nets.scale = make_dense_net<T>(half, growth, 2 * half, init);
    }
    return nets;
}

// Returns (scale logits, translation) for a conditioning half.
template <typename T>
std::pair<Var<T>, Var<T>> coupling_terms(const CouplingNets<T>& nets, const Var<T>& cond, T slope) {
    if (nets.translation) {
        return {dense_forward(nets.scale, cond, slope), dense_forward(*nets.translation, cond, slope)};
    }
    Var<T> out = dense_forward(nets.scale, cond, slope);
    const int half = out.channels() / 2;
    return {ag::slice_channels(out, 0, half), ag::slice_channels(out, half, half)};
}

template <typename T>
void check_even(const Var<T>& x, int expected) {
    if (x.channels() % 2 != 0) throw ShapeError("invertible block needs an even channel count");
    if (x.channels() != expected) {
        throw ShapeError("invertible block expects " + std::to_string(expected) + " channels, got " +
                         std::to_string(x.channels()));
    }
}

}  // namespace

template <typename T>
IdbParams<T> make_idb(int channels, int growth, bool separate_st_nets, T clamp, T negative_slope, Initializer& init) {
    if (channels % 2 != 0) throw ShapeError("IDB channel count must be even");
    IdbParams<T> p;
    p.channels = channels;
    p.clamp = clamp;
    p.negative_slope = negative_slope;
    p.first = make_coupling<T>(channels / 2, growth, separate_st_nets, init);
    p.second = make_coupling<T>(channels / 2, growth, separate_st_nets, init);
    return p;
}

template <typename T>
Var<T> idb_forward(const IdbParams<T>& params, const Var<T>& x) {
    check_even(x, params.channels);
    const int half = params.channels / 2;
    Var<T> x1 = ag::slice_channels(x, 0, half);
    Var<T> x2 = ag::slice_channels(x, half, half);

    auto [s1, t1] = coupling_terms(params.first, x1, params.negative_slope);
    Var<T> tem = ag::add(ag::mul(x2, ag::scale_factor(s1, params.clamp)), t1);

    auto [s2, t2] = coupling_terms(params.second, tem, params.negative_slope);
    Var<T> y1 = ag::add(ag::mul(x1, ag::scale_factor(s2, params.clamp)), t2);
    return ag::concat_channels(std::vector<Var<T>>{y1, tem});
}

template <typename T>
Var<T> idb_inverse(const IdbParams<T>& params, const Var<T>& y) {
    check_even(y, params.channels);
    const int half = params.channels / 2;
    Var<T> y1 = ag::slice_channels(y, 0, half);
    Var<T> tem = ag::slice_channels(y, half, half);

    auto [s2, t2] = coupling_terms(params.second, tem, params.negative_slope);
    Var<T> x1 = ag::div(ag::sub(y1, t2), ag::scale_factor(s2, params.clamp));

    auto [s1, t1] = coupling_terms(params.first, x1, params.negative_slope);
    Var<T> x2 = ag::div(ag::sub(tem, t1), ag::scale_factor(s1, params.clamp));
    return ag::concat_channels(std::vector<Var<T>>{x1, x2});
}

template <typename T>
void IdnParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".lift.weight", lift_weight});
    out.push_back({prefix + ".lift.bias", lift_bias});
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
}

template <typename T>
IdnParams<T> make_idn(int channels, int growth, int block_count, bool separate_st_nets, T clamp, T negative_slope,
                      Initializer& init) {
    IdnParams<T> p;
    p.channels = channels;
    p.lift_weight = init.he_uniform<T>(channels, 1, 9, 9);
    p.lift_bias = Initializer::filled<T>(channels, 1, 1, 0.0);
    for (int i = 0; i < block_count; ++i) {
        p.blocks.push_back(make_idb<T>(channels, growth, separate_st_nets, clamp, negative_slope, init));
    }
    return p;
}

template <typename T>
Var<T> idn_lift(const IdnParams<T>& params, const Var<T>& y_plane) {
    if (y_plane.channels() != 1) throw ShapeError("IDN input must be a single luma plane");
    return ag::conv2d(y_plane, params.lift_weight, params.lift_bias, 3);
}

template <typename T>
Var<T> idn_blocks_forward(const IdnParams<T>& params, const Var<T>& lifted) {
    Var<T> h = lifted;
    for (const auto& block : params.blocks) h = idb_forward(block, h);
    return h;
}

template <typename T>
Var<T> idn_forward(const IdnParams<T>& params, const Var<T>& y_plane) {
    return idn_blocks_forward(params, idn_lift(params, y_plane));
}

template <typename T>
Var<T> invert_features(const IdnParams<T>& params, const Var<T>& features) {
    if (features.channels() != params.channels) throw ShapeError("invert_features: channel count mismatch");
    Var<T> h = features;
    for (auto it = params.blocks.rbegin(); it != params.blocks.rend(); ++it) h = idb_inverse(*it, h);
    return h;
}

#define AMIN_INSTANTIATE_INVERTIBLE(T)                                                                        \
    template struct DenseNetParams<T>;                                                                        \
    template struct CouplingNets<T>;                                                                          \
    template struct IdbParams<T>;                                                                             \
    template struct IdnParams<T>;                                                                             \
    template DenseNetParams<T> make_dense_net<T>(int, int, int, Initializer&);                                \
    template Var<T> dense_forward<T>(const DenseNetParams<T>&, const Var<T>&, T);                             \
    template IdbParams<T> make_idb<T>(int, int, bool, T, T, Initializer&);                                    \
    template Var<T> idb_forward<T>(const IdbParams<T>&, const Var<T>&);                                       \
    template Var<T> idb_inverse<T>(const IdbParams<T>&, const Var<T>&);                                       \
    template IdnParams<T> make_idn<T>(int, int, int, bool, T, T, Initializer&);                               \
    template Var<T> idn_lift<T>(const IdnParams<T>&, const Var<T>&);                                          \
    template Var<T> idn_blocks_forward<T>(const IdnParams<T>&, const Var<T>&);                                \
    template Var<T> idn_forward<T>(const IdnParams<T>&, const Var<T>&);                                       \
    template Var<T> invert_features<T>(const IdnParams<T>&, const Var<T>&);

AMIN_INSTANTIATE_INVERTIBLE(float)
AMIN_INSTANTIATE_INVERTIBLE(double)

}  // namespace amin
