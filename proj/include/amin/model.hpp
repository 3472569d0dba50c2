#pragma once

#include <cstdint>
#include <optional>

#include "amin/config.hpp"
#include "amin/data_pipeline.hpp"
#include "amin/invertible.hpp"
#include "amin/mcfem.hpp"

namespace amin {

template <typename T>
struct ModelParams {
    ModelConfig config;
    IdnParams<T> idn_mri;
    IdnParams<T> idn_func;
    McfemParams<T> mcfem;
    ag::Var<T> recon_weight;  // 1x1 conv, (2C + comp) -> 1
    ag::Var<T> recon_bias;

    // Stable, ordered list of every learnable tensor.
    ParamList<T> parameters() const;
};

// He-uniform convs, Xavier attention/MLP, zero biases, unit LayerNorm gains.
// The last conv of every coupling subnet is zero so the IDNs start as identities.
template <typename T>
ModelParams<T> build_model(const ModelConfig& config, std::uint64_t rng_seed);


template <typename T>
struct ForwardOutput {
    ag::Var<T> fused;           // HardSigmoid(recon)
    ag::Var<T> pre_activation;  // recon conv output
};

// Differentiable end-to-end pass on (1,H,W) luma tensors. Feature blocks are
// concatenated as (mri, functional, complementary).
template <typename T>
ForwardOutput<T> forward_graph(const ModelParams<T>& params, const ag::Var<T>& mri_y, const ag::Var<T>& func_y);

// Inference on validated images; no graph is recorded.
template <typename T>
GrayImage forward(const ModelParams<T>& params, const GrayImage& mri_y, const GrayImage& func_y);

struct FusedImage {
    Plane y;
    std::optional<RgbPlanes> rgb;  // present when the functional input carried chroma
};

template <typename T>
FusedImage fuse_full(const ModelParams<T>& params, const ImagePair& pair);

template <typename T>
std::size_t count_parameters(const ModelParams<T>& params);

}  // namespace amin
