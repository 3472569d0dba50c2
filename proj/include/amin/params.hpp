#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "amin/autograd.hpp"

namespace amin {

template <typename T>
struct NamedParam {
    std::string name;
    ag::Var<T> var;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

// Seeded weight initialisation. Values are drawn in double and then cast, so a
// float and a double model built from the same seed agree up to rounding.
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : engine_(seed) {}

    template <typename T>
    ag::Var<T> uniform(int c, int h, int w, double bound) {
        Tensor<T> t(c, h, w);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(engine_));
        return ag::parameter(std::move(t));
    }

    // He-uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    template <typename T>
    ag::Var<T> he_uniform(int c, int h, int w, int fan_in) {
        return uniform<T>(c, h, w, std::sqrt(6.0 / fan_in));
    }

    // Xavier/Glorot-uniform: U(-sqrt(6/(fan_in+fan_out)), ...).
    template <typename T>
    ag::Var<T> xavier_uniform(int c, int h, int w, int fan_in, int fan_out) {
        return uniform<T>(c, h, w, std::sqrt(6.0 / (fan_in + fan_out)));
    }

    template <typename T>
    static ag::Var<T> filled(int c, int h, int w, double value) {
        return ag::parameter(Tensor<T>(c, h, w, static_cast<T>(value)));
    }

private:
    std::mt19937_64 engine_;
};

template <typename T>
std::size_t count_values(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.var.value().size();
    return n;
}

}  // namespace amin
