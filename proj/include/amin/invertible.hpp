#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "amin/ops.hpp"
#include "amin/params.hpp"

namespace amin {

// Densely connected sub-network: four 3x3 conv + LeakyReLU layers, each fed the
// concatenation of the input and all earlier layer outputs, then a linear 1x1
// conv over the full concatenation.
template <typename T>
struct DenseNetParams {
    int c_in = 0;
    int growth = 0;
    int c_out = 0;
    std::array<ag::Var<T>, 5> weights;
    std::array<ag::Var<T>, 5> biases;

    void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
DenseNetParams<T> make_dense_net(int c_in, int growth, int c_out, Initializer& init);

template <typename T>
ag::Var<T> dense_forward(const DenseNetParams<T>& params, const ag::Var<T>& x, T negative_slope = T(0.01));

// Conditioner of one coupling step. With a single network the output carries
// 2*(C/2) channels: scale logits first, translation second. With separate nets
// each emits C/2 channels.
template <typename T>
struct CouplingNets {
    DenseNetParams<T> scale;
    std::optional<DenseNetParams<T>> translation;

    void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct IdbParams {
    int channels = 0;
    T clamp = T(2);
    T negative_slope = T(0.01);
    CouplingNets<T> first;   // conditions on x1, transforms x2 -> tem
    CouplingNets<T> second;  // conditions on tem, transforms x1 -> y1

    void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
IdbParams<T> make_idb(int channels, int growth, bool separate_st_nets, T clamp, T negative_slope, Initializer& init);

template <typename T>
ag::Var<T> idb_forward(const IdbParams<T>& params, const ag::Var<T>& x);
template <typename T>
ag::Var<T> idb_inverse(const IdbParams<T>& params, const ag::Var<T>& y);

template <typename T>
struct IdnParams {
    int channels = 0;
    ag::Var<T> lift_weight;  // 3x3 conv, 1 -> C
    ag::Var<T> lift_bias;
    std::vector<IdbParams<T>> blocks;

    void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
IdnParams<T> make_idn(int channels, int growth, int block_count, bool separate_st_nets, T clamp, T negative_slope,
                      Initializer& init);

template <typename T>
ag::Var<T> idn_lift(const IdnParams<T>& params, const ag::Var<T>& y_plane);
// Lift, then every block in order.
template <typename T>
ag::Var<T> idn_forward(const IdnParams<T>& params, const ag::Var<T>& y_plane);
// Blocks applied to already-lifted features (the invertible part of the IDN).
template <typename T>
ag::Var<T> idn_blocks_forward(const IdnParams<T>& params, const ag::Var<T>& lifted);
// Inverse of idn_blocks_forward: block inverses in reverse order, returning the
// post-lift representation. The lift itself is not inverted.
template <typename T>
ag::Var<T> invert_features(const IdnParams<T>& params, const ag::Var<T>& features);

// Scalar form of the clamped scaling factor, exp(clamp * 2 * (sigmoid(r) - 0.5)).
double scale_factor_value(double r_out, double clamp = 2.0);

}  // namespace amin
