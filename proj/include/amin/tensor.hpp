#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "amin/errors.hpp"

namespace amin {

// Dense channel-major (C x H x W) array. Matrices are stored as 1 x rows x cols.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    Tensor(int channels, int height, int width, T fill = T(0))
        : c_(channels), h_(height), w_(width),
          data_(static_cast<std::size_t>(channels) * height * width, fill) {
        if (channels < 0 || height < 0 || width < 0) {
            throw ShapeError("negative tensor dimension");
        }
    }

    int channels() const { return c_; }
    int height() const { return h_; }
    int width() const { return w_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t plane_size() const { return static_cast<std::size_t>(h_) * w_; }

    T& operator()(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x]; }
    const T& operator()(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
    }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::span<T> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
    std::span<const T> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

    bool same_shape(const Tensor& other) const { return c_ == other.c_ && h_ == other.h_ && w_ == other.w_; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(c_, h_, w_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    int c_ = 0;
    int h_ = 0;
    int w_ = 0;
    std::vector<T> data_;
};

}  // namespace amin
