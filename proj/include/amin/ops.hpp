#pragma once

#include <vector>

#include "amin/autograd.hpp"

// Differentiable operators. Feature maps are C x H x W; "matrix" ops work on
// tensors shaped 1 x rows x cols. All ops are instantiated for float and double.

namespace amin::ag {

// Elementwise, shapes must match.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> mul_scalar(const Var<T>& a, T s);
template <typename T> Var<T> square(const Var<T>& a);

template <typename T> Var<T> leaky_relu(const Var<T>& a, T negative_slope);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> gelu(const Var<T>& a);
// clip((x + 3) / 6, 0, 1)
template <typename T> Var<T> hard_sigmoid(const Var<T>& a);
// exp(clamp * 2 * (sigmoid(x) - 0.5)), bounded to [exp(-2 clamp), exp(2 clamp)].
template <typename T> Var<T> scale_factor(const Var<T>& a, T clamp);

// x (C,H,W) * w (C,1,1) broadcast over pixels.
template <typename T> Var<T> mul_channelwise(const Var<T>& x, const Var<T>& w);
// x (C,H,W) * m (1,H,W) broadcast over channels.
template <typename T> Var<T> mul_spatial(const Var<T>& x, const Var<T>& m);

template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_channels(const Var<T>& x, int begin, int count);
template <typename T> Var<T> reshape(const Var<T>& x, int c, int h, int w);
// Reflect padding on the bottom and right edges only.
template <typename T> Var<T> reflect_pad(const Var<T>& x, int pad_bottom, int pad_right);
// Keeps the top-left h x w window.
template <typename T> Var<T> crop(const Var<T>& x, int h, int w);

// Lossless space-to-depth: (C,H,W) -> (1, (H/p)(W/p), C p p), tokens in row-major
// grid order, each token laid out as (c, dy, dx).
template <typename T> Var<T> to_tokens(const Var<T>& x, int patch);
template <typename T> Var<T> from_tokens(const Var<T>& tokens, int channels, int height, int width, int patch);

template <typename T> Var<T> global_avg_pool(const Var<T>& x);  // -> (C,1,1)
template <typename T> Var<T> global_max_pool(const Var<T>& x);  // -> (C,1,1)
template <typename T> Var<T> channel_mean(const Var<T>& x);     // -> (1,H,W)
template <typename T> Var<T> channel_max(const Var<T>& x);      // -> (1,H,W)
template <typename T> Var<T> mean_all(const Var<T>& x);         // -> (1,1,1)
template <typename T> Var<T> sum_all(const Var<T>& x);          // -> (1,1,1)

// Stride-1 convolution with zero padding k/2 (odd k). weight is (C_out, C_in, k*k),
// bias is (C_out,1,1) or undefined.
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int kernel);
// Single-channel "valid" correlation with a fixed kernel (no gradient to the kernel).
template <typename T> Var<T> filter_valid(const Var<T>& x, const Tensor<T>& kernel);

// Matrix ops on (1,n,m) tensors.
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);     // a b
template <typename T> Var<T> matmul_bt(const Var<T>& a, const Var<T>& b);  // a b^T
// x (1,n,din) W (1,din,dout) + b (1,1,dout)
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
template <typename T> Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps);
template <typename T> Var<T> softmax_rows(const Var<T>& x);
template <typename T> Var<T> slice_cols(const Var<T>& x, int begin, int count);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);

}  // namespace amin::ag
