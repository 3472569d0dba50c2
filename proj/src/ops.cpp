#include "amin/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace amin::ag {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": shape mismatch");
}

template <typename T>
Tensor<T>* grad_of(Node<T>& self, std::size_t i) {
    auto& p = self.parents[i];
    return p->requires_grad ? &p->ensure_grad() : nullptr;
}

template <typename T>
const Tensor<T>& value_of(Node<T>& self, std::size_t i) {
    return self.parents[i]->value;
}

template <typename T>
Tensor<T> like(const Tensor<T>& t) {
    return Tensor<T>(t.channels(), t.height(), t.width());
}

// Elementwise unary op whose derivative is expressed through (x, y).
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D dfdx) {
    const auto& x = a.value();
    Tensor<T> y = like(x);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return make_result<T>(std::move(y), {a}, [dfdx](Node<T>& self) {
        const auto& xv = value_of(self, 0);
        if (auto* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < xv.size(); ++i) (*g)[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
        }
    });
}

template <typename T>
T sigmoid_scalar(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
void check_matrix(const Tensor<T>& t, const char* op) {
    if (t.channels() != 1) throw ShapeError(std::string(op) + ": expected a (1,n,m) matrix");
}

// Lays out k x k zero-padded neighbourhoods as rows of a (C k k) x (H W) matrix.
template <typename T>
void im2col(const Tensor<T>& x, int k, MatR<T>& cols) {
    const int C = x.channels(), H = x.height(), W = x.width(), pad = k / 2;
    cols.resize(static_cast<Eigen::Index>(C) * k * k, static_cast<Eigen::Index>(H) * W);
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = cols.row((c * k + ky) * k + kx).data();
                for (int y = 0; y < H; ++y) {
                    const int sy = y + ky - pad;
                    T* out = row + static_cast<std::size_t>(y) * W;
                    if (sy < 0 || sy >= H) {
                        std::fill(out, out + W, T(0));
                        continue;
                    }
                    // Columns [x0, x1) read inside the row; the rest is padding.
                    // Kernels wider than the image can leave the range empty.
                    const int x0 = std::min(W, std::max(0, pad - kx));
                    const int x1 = std::max(x0, std::min(W, W + pad - kx));
                    const T* src = &x(c, sy, 0);
                    std::fill(out, out + x0, T(0));
                    if (x1 > x0) std::copy(src + (x0 + kx - pad), src + (x1 + kx - pad), out + x0);
                    std::fill(out + x1, out + W, T(0));
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const MatR<T>& cols, int k, Tensor<T>& dx) {
    const int C = dx.channels(), H = dx.height(), W = dx.width(), pad = k / 2;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = cols.row((c * k + ky) * k + kx).data();
                for (int y = 0; y < H; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= H) continue;
                    const T* in = row + static_cast<std::size_t>(y) * W;
                    T* dst = &dx(c, sy, 0);
                    const int x0 = std::max(0, pad - kx);
                    const int x1 = std::min(W, W + pad - kx);
                    for (int xx = x0; xx < x1; ++xx) dst[xx + kx - pad] += in[xx];
                }
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same(a.value(), b.value(), "add");
    Tensor<T> y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
    return make_result<T>(std::move(y), {a, b}, [](Node<T>& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (auto* g = grad_of(self, p)) {
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
            }
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same(a.value(), b.value(), "sub");
    Tensor<T> y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
    return make_result<T>(std::move(y), {a, b}, [](Node<T>& self) {
        if (auto* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        }
        if (auto* g = grad_of(self, 1)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same(a.value(), b.value(), "mul");
    Tensor<T> y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
    return make_result<T>(std::move(y), {a, b}, [](Node<T>& self) {
        const auto& av = value_of(self, 0);
        const auto& bv = value_of(self, 1);
        if (auto* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
        }
        if (auto* g = grad_of(self, 1)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
        }
    });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    require_same(a.value(), b.value(), "div");
    Tensor<T> y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
    return make_result<T>(std::move(y), {a, b}, [](Node<T>& self) {
        const auto& bv = value_of(self, 1);
        if (auto* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] / bv[i];
        }
        if (auto* g = grad_of(self, 1)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i] * self.value[i] / bv[i];
        }
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
    return unary<T>(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s) {
    return unary<T>(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> square(const Var<T>& a) {
    return unary<T>(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T negative_slope) {
    return unary<T>(
        a, [negative_slope](T x) { return x > T(0) ? x : negative_slope * x; },
        [negative_slope](T x, T) { return x > T(0) ? T(1) : negative_slope; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    return unary<T>(a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
    return unary<T>(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
    const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    return unary<T>(
        a, [inv_sqrt2](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [inv_sqrt2, inv_sqrt2pi](T x, T) {
            return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
        });
}

template <typename T>
Var<T> hard_sigmoid(const Var<T>& a) {
    return unary<T>(
        a, [](T x) { return std::clamp((x + T(3)) / T(6), T(0), T(1)); },
        [](T x, T) { return (x > T(-3) && x < T(3)) ? T(1) / T(6) : T(0); });
}

template <typename T>
Var<T> scale_factor(const Var<T>& a, T clamp) {
    const T k = T(2) * clamp;
    return unary<T>(
        a, [k](T x) { return std::exp(k * (sigmoid_scalar(x) - T(0.5))); },
        [k](T x, T y) {
            const T s = sigmoid_scalar(x);
            return y * k * s * (T(1) - s);
        });
}

// ---------------------------------------------------------------------------
// Broadcasting

template <typename T>
Var<T> mul_channelwise(const Var<T>& x, const Var<T>& w) {
    const auto& xv = x.value();
    const auto& wv = w.value();
    if (wv.channels() != xv.channels() || wv.height() != 1 || wv.width() != 1) {
        throw ShapeError("mul_channelwise: weight must be (C,1,1)");
    }
    Tensor<T> y = xv;
    const std::size_t P = xv.plane_size();
    for (int c = 0; c < xv.channels(); ++c) {
        for (std::size_t i = 0; i < P; ++i) y[c * P + i] *= wv[c];
    }
    return make_result<T>(std::move(y), {x, w}, [P](Node<T>& self) {
        const auto& xv = value_of(self, 0);
        const auto& wv = value_of(self, 1);
        const int C = xv.channels();
        if (auto* g = grad_of(self, 0)) {
            for (int c = 0; c < C; ++c) {
                for (std::size_t i = 0; i < P; ++i) (*g)[c * P + i] += self.grad[c * P + i] * wv[c];
            }
        }
        if (auto* g = grad_of(self, 1)) {
            for (int c = 0; c < C; ++c) {
                T acc = 0;
                for (std::size_t i = 0; i < P; ++i) acc += self.grad[c * P + i] * xv[c * P + i];
                (*g)[c] += acc;
            }
        }
    });
}

template <typename T>
Var<T> mul_spatial(const Var<T>& x, const Var<T>& m) {
    const auto& xv = x.value();
    const auto& mv = m.value();
    if (mv.channels() != 1 || mv.height() != xv.height() || mv.width() != xv.width()) {
        throw ShapeError("mul_spatial: map must be (1,H,W)");
    }
    Tensor<T> y = xv;
    const std::size_t P = xv.plane_size();
    for (int c = 0; c < xv.channels(); ++c) {
        for (std::size_t i = 0; i < P; ++i) y[c * P + i] *= mv[i];
    }
    return make_result<T>(std::move(y), {x, m}, [P](Node<T>& self) {
        const auto& xv = value_of(self, 0);
        const auto& mv = value_of(self, 1);
        const int C = xv.channels();
        if (auto* g = grad_of(self, 0)) {
            for (int c = 0; c < C; ++c) {
                for (std::size_t i = 0; i < P; ++i) (*g)[c * P + i] += self.grad[c * P + i] * mv[i];
            }
        }
        if (auto* g = grad_of(self, 1)) {
            for (int c = 0; c < C; ++c) {
                for (std::size_t i = 0; i < P; ++i) (*g)[i] += self.grad[c * P + i] * xv[c * P + i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const int H = parts[0].height(), W = parts[0].width();
    int C = 0;
    for (const auto& p : parts) {
        if (p.height() != H || p.width() != W) throw ShapeError("concat_channels: spatial mismatch");
        C += p.channels();
    }
    Tensor<T> y(C, H, W);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.value().size(), y.data() + offset);
        offset += p.value().size();
    }
    return make_result<T>(std::move(y), parts, [](Node<T>& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            const std::size_t n = self.parents[p]->value.size();
            if (auto* g = grad_of(self, p)) {
                for (std::size_t i = 0; i < n; ++i) (*g)[i] += self.grad[offset + i];
            }
            offset += n;
        }
    });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int begin, int count) {
    const auto& xv = x.value();
    if (begin < 0 || count < 0 || begin + count > xv.channels()) throw ShapeError("slice_channels: out of range");
    Tensor<T> y(count, xv.height(), xv.width());
    const std::size_t P = xv.plane_size();
    std::copy(xv.data() + begin * P, xv.data() + (begin + count) * P, y.data());
    return make_result<T>(std::move(y), {x}, [begin, P](Node<T>& self) {
        if (auto* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[begin * P + i] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, int c, int h, int w) {
    if (static_cast<std::size_t>(c) * h * w != x.value().size()) throw ShapeError("reshape: size mismatch");
    Tensor<T> y(c, h, w);
    std::copy(x.value().data(), x.value().data() + x.value().size(), y.data());
    return make_result<T>(std::move(y), {x}, [](Node<T>& self) {
        if (auto* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
        }
    });
}

namespace {
// Reflected source index for a padded coordinate (no edge repeat).
int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}
}  // namespace

template <typename T>
Var<T> reflect_pad(const Var<T>& x, int pad_bottom, int pad_right) {
    const auto& xv = x.value();
    const int C = xv.channels(), H = xv.height(), W = xv.width();
    const int Ho = H + pad_bottom, Wo = W + pad_right;
    Tensor<T> y(C, Ho, Wo);
    for (int c = 0; c < C; ++c)
        for (int yy = 0; yy < Ho; ++yy)
            for (int xx = 0; xx < Wo; ++xx) y(c, yy, xx) = xv(c, reflect_index(yy, H), reflect_index(xx, W));
    return make_result<T>(std::move(y), {x}, [C, H, W, Ho, Wo](Node<T>& self) {
        if (auto* g = grad_of(self, 0)) {
            for (int c = 0; c < C; ++c)
                for (int yy = 0; yy < Ho; ++yy)
                    for (int xx = 0; xx < Wo; ++xx)
                        (*g)(c, reflect_index(yy, H), reflect_index(xx, W)) += self.grad(c, yy, xx);
        }
    });
}

template <typename T>
Var<T> crop(const Var<T>& x, int h, int w) {
    const auto& xv = x.value();
    if (h > xv.height() || w > xv.width()) throw ShapeError("crop: window larger than input");
    const int C = xv.channels();
    Tensor<T> y(C, h, w);
    for (int c = 0; c < C; ++c)
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) y(c, yy, xx) = xv(c, yy, xx);
    return make_result<T>(std::move(y), {x}, [C, h, w](Node<T>& self) {
        if (auto* g = grad_of(self, 0)) {
            for (int c = 0; c < C; ++c)
                for (int yy = 0; yy < h; ++yy)
                    for (int xx = 0; xx < w; ++xx) (*g)(c, yy, xx) += self.grad(c, yy, xx);
        }
    });
}

namespace {
// Index map shared by to_tokens/from_tokens: token-matrix offset for pixel (c,y,x).
inline std::size_t token_offset(int c, int y, int x, int patch, int grid_w, int dim) {
    const int token = (y / patch) * grid_w + (x / patch);
    const int feature = (c * patch + (y % patch)) * patch + (x % patch);
    return static_cast<std::size_t>(token) * dim + feature;
}
}  // namespace

template <typename T>
Var<T> to_tokens(const Var<T>& x, int patch) {
    const auto& xv = x.value();
    const int C = xv.channels(), H = xv.height(), W = xv.width();
    if (patch <= 0 || H % patch != 0 || W % patch != 0) throw ShapeError("to_tokens: size not divisible by patch");
    const int gw = W / patch, n = (H / patch) * gw, dim = C * patch * patch;
    Tensor<T> y(1, n, dim);
    for (int c = 0; c < C; ++c)
        for (int yy = 0; yy < H; ++yy)
            for (int xx = 0; xx < W; ++xx) y[token_offset(c, yy, xx, patch, gw, dim)] = xv(c, yy, xx);
    return make_result<T>(std::move(y), {x}, [C, H, W, patch, gw, dim](Node<T>& self) {
        if (auto* g = grad_of(self, 0)) {
            for (int c = 0; c < C; ++c)
                for (int yy = 0; yy < H; ++yy)
                    for (int xx = 0; xx < W; ++xx)
                        (*g)(c, yy, xx) += self.grad[token_offset(c, yy, xx, patch, gw, dim)];
        }
    });
}

template <typename T>
Var<T> from_tokens(const Var<T>& tokens, int channels, int height, int width, int patch) {
    const auto& tv = tokens.value();
    const int gw = width / patch, dim = channels * patch * patch;
    if (patch <= 0 || height % patch != 0 || width % patch != 0 || tv.channels() != 1 ||
        tv.height() != (height / patch) * gw || tv.width() != dim) {
        throw ShapeError("from_tokens: token matrix does not match target shape");
    }
    Tensor<T> y(channels, height, width);
    for (int c = 0; c < channels; ++c)
        for (int yy = 0; yy < height; ++yy)
            for (int xx = 0; xx < width; ++xx) y(c, yy, xx) = tv[token_offset(c, yy, xx, patch, gw, dim)];
    return make_result<T>(std::move(y), {tokens}, [channels, height, width, patch, gw, dim](Node<T>& self) {
        if (auto* g = grad_of(self, 0)) {
            for (int c = 0; c < channels; ++c)
                for (int yy = 0; yy < height; ++yy)
                    for (int xx = 0; xx < width; ++xx)
                        (*g)[token_offset(c, yy, xx, patch, gw, dim)] += self.grad(c, yy, xx);
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    const auto& xv = x.value();
    const int C = xv.channels();
    const std::size_t P = xv.plane_size();
    Tensor<T> y(C, 1, 1);
    for (int c = 0; c < C; ++c) {
        T acc = 0;
        for (T v : xv.plane(c)) acc += v;
        y[c] = acc / static_cast<T>(P);
    }
    return make_result<T>(std::move(y), {x}, [C, P](Node<T>& self) {
        if (auto* g = grad_of(self, 0)) {
            for (int c = 0; c < C; ++c) {
                const T d = self.grad[c] / static_cast<T>(P);
                for (std::size_t i = 0; i < P; ++i) (*g)[c * P + i] += d;
            }
        }
    });
}

template <typename T>
Var<T> global_max_pool(const Var<T>& x) {
    const auto& xv = x.value();
    const int C = xv.channels();
    const std::size_t P = xv.plane_size();
    Tensor<T> y(C, 1, 1);
    std::vector<std::size_t> arg(C);
    for (int c = 0; c < C; ++c) {
        auto plane = xv.plane(c);
        auto it = std::max_element(plane.begin(), plane.end());
        arg[c] = c * P + static_cast<std::size_t>(it - plane.begin());
        y[c] = *it;
    }
    return make_result<T>(std::move(y), {x}, [arg](Node<T>& self) {
        if (auto* g = grad_of(self, 0)) {
            for (std::size_t c = 0; c < arg.size(); ++c) (*g)[arg[c]] += self.grad[c];
        }
    });
}

template <typename T>
Var<T> channel_mean(const Var<T>& x) {
    const auto& xv = x.value();
    const int C = xv.channels();
    const std::size_t P = xv.plane_size();
    Tensor<T> y(1, xv.height(), xv.width());
    for (int c = 0; c < C; ++c)
        for (std::size_t i = 0; i < P; ++i) y[i] += xv[c * P + i];
    for (std::size_t i = 0; i < P; ++i) y[i] /= static_cast<T>(C);
    return make_result<T>(std::move(y), {x}, [C, P](Node<T>& self) {
        if (auto* g = grad_of(self, 0)) {
            for (int c = 0; c < C; ++c)
                for (std::size_t i = 0; i < P; ++i) (*g)[c * P + i] += self.grad[i] / static_cast<T>(C);
        }
    });
}

template <typename T>
Var<T> channel_max(const Var<T>& x) {
    const auto& xv = x.value();
    const int C = xv.channels();
    const std::size_t P = xv.plane_size();
    Tensor<T> y(1, xv.height(), xv.width());
    std::vector<int> arg(P, 0);
    for (std::size_t i = 0; i < P; ++i) {
        T best = xv[i];
        for (int c = 1; c < C; ++c) {
            if (xv[c * P + i] > best) {
                best = xv[c * P + i];
                arg[i] = c;
            }
        }
        y[i] = best;
    }
    return make_result<T>(std::move(y), {x}, [arg, P](Node<T>& self) {
        if (auto* g = grad_of(self, 0)) {
            for (std::size_t i = 0; i < P; ++i) (*g)[arg[i] * P + i] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
    T acc = 0;
    for (T v : x.value().span()) acc += v;
    return make_result<T>(Tensor<T>(1, 1, 1, acc), {x}, [](Node<T>& self) {
        if (auto* g = grad_of(self, 0)) {
            const T d = self.grad[0];
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += d;
        }
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    const T n = static_cast<T>(x.value().size());
    return mul_scalar(sum_all(x), T(1) / n);
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int kernel) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    const int C = xv.channels(), H = xv.height(), W = xv.width();
    const int Cout = wv.channels();
    if (kernel % 2 != 1 || wv.height() != C || wv.width() != kernel * kernel) {
        throw ShapeError("conv2d: weight (" + std::to_string(wv.channels()) + "," + std::to_string(wv.height()) + "," +
                         std::to_string(wv.width()) + ") incompatible with input channels " + std::to_string(C) +
                         " and kernel " + std::to_string(kernel));
    }
    const bool has_bias = bias.defined();
    if (has_bias && (bias.value().channels() != Cout || bias.value().size() != static_cast<std::size_t>(Cout))) {
        throw ShapeError("conv2d: bias must be (C_out,1,1)");
    }
    const Eigen::Index K = static_cast<Eigen::Index>(C) * kernel * kernel;
    const Eigen::Index HW = static_cast<Eigen::Index>(H) * W;

    Tensor<T> y(Cout, H, W);
    MapR<T> out(y.data(), Cout, HW);
    CMapR<T> wmat(wv.data(), Cout, K);
    if (kernel == 1) {
        out.noalias() = wmat * CMapR<T>(xv.data(), C, HW);
    } else {
        MatR<T> cols;
        im2col(xv, kernel, cols);
        out.noalias() = wmat * cols;
    }
    if (has_bias) {
        for (int c = 0; c < Cout; ++c) out.row(c).array() += bias.value()[c];
    }

    std::vector<Var<T>> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return make_result<T>(std::move(y), std::move(parents), [kernel, C, H, W, Cout, K, HW, has_bias](Node<T>& self) {
        const auto& xv = value_of(self, 0);
        const auto& wv = value_of(self, 1);
        CMapR<T> gout(self.grad.data(), Cout, HW);
        MatR<T> cols;
        auto* gw = grad_of(self, 1);
        auto* gx = grad_of(self, 0);
        if (gw) {
            MapR<T> gwmat(gw->data(), Cout, K);
            if (kernel == 1) {
                gwmat.noalias() += gout * CMapR<T>(xv.data(), C, HW).transpose();
            } else {
                im2col(xv, kernel, cols);
                gwmat.noalias() += gout * cols.transpose();
            }
        }
        if (has_bias) {
            if (auto* gb = grad_of(self, 2)) {
                for (int c = 0; c < Cout; ++c) (*gb)[c] += gout.row(c).sum();
            }
        }
        if (gx) {
            CMapR<T> wmat(wv.data(), Cout, K);
            if (kernel == 1) {
                MapR<T>(gx->data(), C, HW).noalias() += wmat.transpose() * gout;
            } else {
                cols.resize(K, HW);
                cols.noalias() = wmat.transpose() * gout;
                col2im_add(cols, kernel, *gx);
            }
        }
    });
}

template <typename T>
Var<T> filter_valid(const Var<T>& x, const Tensor<T>& kernel) {
    const auto& xv = x.value();
    if (xv.channels() != 1) throw ShapeError("filter_valid: single-channel input expected");
    const int kh = kernel.height(), kw = kernel.width();
    const int Ho = xv.height() - kh + 1, Wo = xv.width() - kw + 1;
    if (Ho <= 0 || Wo <= 0) throw SizeError("filter_valid: input smaller than kernel");
    Tensor<T> y(1, Ho, Wo);
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ky = 0; ky < kh; ++ky) {
            const T* src = &xv(0, oy + ky, 0);
            const T* krow = &kernel(0, ky, 0);
            T* dst = &y(0, oy, 0);
            for (int kx = 0; kx < kw; ++kx) {
                const T kv = krow[kx];
                for (int ox = 0; ox < Wo; ++ox) dst[ox] += kv * src[ox + kx];
            }
        }
    }
    return make_result<T>(std::move(y), {x}, [kernel, Ho, Wo](Node<T>& self) {
        auto* g = grad_of(self, 0);
        if (!g) return;
        const int kh = kernel.height(), kw = kernel.width();
        for (int oy = 0; oy < Ho; ++oy) {
            const T* gin = &self.grad(0, oy, 0);
            for (int ky = 0; ky < kh; ++ky) {
                T* dst = &(*g)(0, oy + ky, 0);
                const T* krow = &kernel(0, ky, 0);
                for (int kx = 0; kx < kw; ++kx) {
                    const T kv = krow[kx];
                    for (int ox = 0; ox < Wo; ++ox) dst[ox + kx] += kv * gin[ox];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Matrix ops

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    check_matrix(av, "matmul");
    check_matrix(bv, "matmul");
    if (av.width() != bv.height()) throw ShapeError("matmul: inner dimension mismatch");
    const int n = av.height(), k = av.width(), m = bv.width();
    Tensor<T> y(1, n, m);
    MapR<T>(y.data(), n, m).noalias() = CMapR<T>(av.data(), n, k) * CMapR<T>(bv.data(), k, m);
    return make_result<T>(std::move(y), {a, b}, [n, k, m](Node<T>& self) {
        CMapR<T> g(self.grad.data(), n, m);
        if (auto* ga = grad_of(self, 0)) {
            MapR<T>(ga->data(), n, k).noalias() += g * CMapR<T>(value_of(self, 1).data(), k, m).transpose();
        }
        if (auto* gb = grad_of(self, 1)) {
            MapR<T>(gb->data(), k, m).noalias() += CMapR<T>(value_of(self, 0).data(), n, k).transpose() * g;
        }
    });
}

template <typename T>
Var<T> matmul_bt(const Var<T>& a, const Var<T>& b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    check_matrix(av, "matmul_bt");
    check_matrix(bv, "matmul_bt");
    if (av.width() != bv.width()) throw ShapeError("matmul_bt: inner dimension mismatch");
    const int n = av.height(), k = av.width(), m = bv.height();
    Tensor<T> y(1, n, m);
    MapR<T>(y.data(), n, m).noalias() = CMapR<T>(av.data(), n, k) * CMapR<T>(bv.data(), m, k).transpose();
    return make_result<T>(std::move(y), {a, b}, [n, k, m](Node<T>& self) {
        CMapR<T> g(self.grad.data(), n, m);
        if (auto* ga = grad_of(self, 0)) {
            MapR<T>(ga->data(), n, k).noalias() += g * CMapR<T>(value_of(self, 1).data(), m, k);
        }
        if (auto* gb = grad_of(self, 1)) {
            MapR<T>(gb->data(), m, k).noalias() += g.transpose() * CMapR<T>(value_of(self, 0).data(), n, k);
        }
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    check_matrix(xv, "linear");
    check_matrix(wv, "linear");
    if (xv.width() != wv.height()) throw ShapeError("linear: input width does not match weight rows");
    const int n = xv.height(), din = xv.width(), dout = wv.width();
    const bool has_bias = bias.defined();
    if (has_bias && bias.value().size() != static_cast<std::size_t>(dout)) throw ShapeError("linear: bias size");
    Tensor<T> y(1, n, dout);
    MapR<T> out(y.data(), n, dout);
    out.noalias() = CMapR<T>(xv.data(), n, din) * CMapR<T>(wv.data(), din, dout);
    if (has_bias) out.rowwise() += CMapR<T>(bias.value().data(), 1, dout).row(0);
    std::vector<Var<T>> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return make_result<T>(std::move(y), std::move(parents), [n, din, dout, has_bias](Node<T>& self) {
        CMapR<T> g(self.grad.data(), n, dout);
        if (auto* gx = grad_of(self, 0)) {
            MapR<T>(gx->data(), n, din).noalias() += g * CMapR<T>(value_of(self, 1).data(), din, dout).transpose();
        }
        if (auto* gw = grad_of(self, 1)) {
            MapR<T>(gw->data(), din, dout).noalias() += CMapR<T>(value_of(self, 0).data(), n, din).transpose() * g;
        }
        if (has_bias) {
            if (auto* gb = grad_of(self, 2)) MapR<T>(gb->data(), 1, dout).row(0) += g.colwise().sum();
        }
    });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    const auto& xv = x.value();
    check_matrix(xv, "layer_norm");
    const int n = xv.height(), d = xv.width();
    if (gamma.value().size() != static_cast<std::size_t>(d) || beta.value().size() != static_cast<std::size_t>(d)) {
        throw ShapeError("layer_norm: affine parameters must have the row width");
    }
    Tensor<T> y(1, n, d);
    Tensor<T> xhat(1, n, d);
    std::vector<T> inv_std(n);
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    for (int r = 0; r < n; ++r) {
        const T* row = &xv(0, r, 0);
        T mean = 0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<T>(d);
        inv_std[r] = T(1) / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) {
            const T h = (row[j] - mean) * inv_std[r];
            xhat(0, r, j) = h;
            y(0, r, j) = h * gv[j] + bv[j];
        }
    }
    return make_result<T>(std::move(y), {x, gamma, beta},
                          [n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& gv = value_of(self, 1);
        auto* gx = grad_of(self, 0);
        auto* gg = grad_of(self, 1);
        auto* gb = grad_of(self, 2);
        std::vector<T> dxhat(d);
        for (int r = 0; r < n; ++r) {
            const T* g = &self.grad(0, r, 0);
            const T* h = &xhat(0, r, 0);
            if (gg) for (int j = 0; j < d; ++j) (*gg)[j] += g[j] * h[j];
            if (gb) for (int j = 0; j < d; ++j) (*gb)[j] += g[j];
            if (gx) {
                T mean_d = 0, mean_dh = 0;
                for (int j = 0; j < d; ++j) {
                    dxhat[j] = g[j] * gv[j];
                    mean_d += dxhat[j];
                    mean_dh += dxhat[j] * h[j];
                }
                mean_d /= static_cast<T>(d);
                mean_dh /= static_cast<T>(d);
                T* out = &(*gx)(0, r, 0);
                for (int j = 0; j < d; ++j) out[j] += inv_std[r] * (dxhat[j] - mean_d - h[j] * mean_dh);
            }
        }
    });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
    const auto& xv = x.value();
    check_matrix(xv, "softmax_rows");
    const int n = xv.height(), m = xv.width();
    Tensor<T> y(1, n, m);
    for (int r = 0; r < n; ++r) {
        const T* row = &xv(0, r, 0);
        T* out = &y(0, r, 0);
        const T mx = *std::max_element(row, row + m);
        T sum = 0;
        for (int j = 0; j < m; ++j) {
            out[j] = std::exp(row[j] - mx);
            sum += out[j];
        }
        for (int j = 0; j < m; ++j) out[j] /= sum;
    }
    return make_result<T>(std::move(y), {x}, [n, m](Node<T>& self) {
        auto* gx = grad_of(self, 0);
        if (!gx) return;
        for (int r = 0; r < n; ++r) {
            const T* g = &self.grad(0, r, 0);
            const T* s = &self.value(0, r, 0);
            T dot = 0;
            for (int j = 0; j < m; ++j) dot += g[j] * s[j];
            T* out = &(*gx)(0, r, 0);
            for (int j = 0; j < m; ++j) out[j] += s[j] * (g[j] - dot);
        }
    });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, int begin, int count) {
    const auto& xv = x.value();
    check_matrix(xv, "slice_cols");
    if (begin < 0 || count < 0 || begin + count > xv.width()) throw ShapeError("slice_cols: out of range");
    const int n = xv.height(), m = xv.width();
    Tensor<T> y(1, n, count);
    for (int r = 0; r < n; ++r) std::copy(&xv(0, r, begin), &xv(0, r, begin) + count, &y(0, r, 0));
    return make_result<T>(std::move(y), {x}, [n, m, begin, count](Node<T>& self) {
        if (auto* g = grad_of(self, 0)) {
            for (int r = 0; r < n; ++r)
                for (int j = 0; j < count; ++j) (*g)[static_cast<std::size_t>(r) * m + begin + j] += self.grad(0, r, j);
        }
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int n = parts[0].height();
    int m = 0;
    for (const auto& p : parts) {
        check_matrix(p.value(), "concat_cols");
        if (p.height() != n) throw ShapeError("concat_cols: row mismatch");
        m += p.width();
    }
    Tensor<T> y(1, n, m);
    int offset = 0;
    for (const auto& p : parts) {
        const int w = p.width();
        for (int r = 0; r < n; ++r) std::copy(&p.value()(0, r, 0), &p.value()(0, r, 0) + w, &y(0, r, offset));
        offset += w;
    }
    return make_result<T>(std::move(y), parts, [n, m](Node<T>& self) {
        int offset = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            const int w = self.parents[p]->value.width();
            if (auto* g = grad_of(self, p)) {
                for (int r = 0; r < n; ++r)
                    for (int j = 0; j < w; ++j) (*g)(0, r, j) += self.grad[static_cast<std::size_t>(r) * m + offset + j];
            }
            offset += w;
        }
    });
}

#define AMIN_INSTANTIATE_OPS(T)                                                                       \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                \
    template Var<T> div(const Var<T>&, const Var<T>&);                                                \
    template Var<T> add_scalar(const Var<T>&, T);                                                     \
    template Var<T> mul_scalar(const Var<T>&, T);                                                     \
    template Var<T> square(const Var<T>&);                                                            \
    template Var<T> leaky_relu(const Var<T>&, T);                                                     \
    template Var<T> sigmoid(const Var<T>&);                                                           \
    template Var<T> exp(const Var<T>&);                                                               \
    template Var<T> gelu(const Var<T>&);                                                              \
    template Var<T> hard_sigmoid(const Var<T>&);                                                      \
    template Var<T> scale_factor(const Var<T>&, T);                                                   \
    template Var<T> mul_channelwise(const Var<T>&, const Var<T>&);                                    \
    template Var<T> mul_spatial(const Var<T>&, const Var<T>&);                                        \
    template Var<T> concat_channels(const std::vector<Var<T>>&);                                      \
    template Var<T> slice_channels(const Var<T>&, int, int);                                          \
    template Var<T> reshape(const Var<T>&, int, int, int);                                            \
    template Var<T> reflect_pad(const Var<T>&, int, int);                                             \
    template Var<T> crop(const Var<T>&, int, int);                                                    \
    template Var<T> to_tokens(const Var<T>&, int);                                                    \
    template Var<T> from_tokens(const Var<T>&, int, int, int, int);                                   \
    template Var<T> global_avg_pool(const Var<T>&);                                                   \
    template Var<T> global_max_pool(const Var<T>&);                                                   \
    template Var<T> channel_mean(const Var<T>&);                                                      \
    template Var<T> channel_max(const Var<T>&);                                                       \
    template Var<T> mean_all(const Var<T>&);                                                          \
    template Var<T> sum_all(const Var<T>&);                                                           \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int);                         \
    template Var<T> filter_valid(const Var<T>&, const Tensor<T>&);                                    \
    template Var<T> matmul(const Var<T>&, const Var<T>&);                                             \
    template Var<T> matmul_bt(const Var<T>&, const Var<T>&);                                          \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                              \
    template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                       \
    template Var<T> softmax_rows(const Var<T>&);                                                      \
    template Var<T> slice_cols(const Var<T>&, int, int);                                              \
    template Var<T> concat_cols(const std::vector<Var<T>>&);

AMIN_INSTANTIATE_OPS(float)
AMIN_INSTANTIATE_OPS(double)

}  // namespace amin::ag
