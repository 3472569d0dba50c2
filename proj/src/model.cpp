#include "amin/model.hpp"

#include <algorithm>

namespace amin {

using ag::Var;

template <typename T>
ParamList<T> ModelParams<T>::parameters() const {
    ParamList<T> out;
    idn_mri.collect("idn_mri", out);
    idn_func.collect("idn_func", out);
    mcfem.collect("mcfem", out);
    out.push_back({"recon.weight", recon_weight});
    out.push_back({"recon.bias", recon_bias});
    return out;
}

template <typename T>
ModelParams<T> build_model(const ModelConfig& config, std::uint64_t rng_seed) {
    config.validate();
    Initializer init(rng_seed);
    ModelParams<T> p;
    p.config = config;
    const T clamp = static_cast<T>(config.clamp);
    const T slope = static_cast<T>(config.leaky_slope);
    p.idn_mri = make_idn<T>(config.channels, config.growth, config.idb_count, config.separate_st_nets, clamp, slope, init);
    p.idn_func = make_idn<T>(config.channels, config.growth, config.idb_count, config.separate_st_nets, clamp, slope, init);
    p.mcfem = make_mcfem<T>(config, init);
    const int recon_in = 2 * config.channels + config.comp_width;
    p.recon_weight = init.he_uniform<T>(1, recon_in, 1, recon_in);
    p.recon_bias = Initializer::filled<T>(1, 1, 1, 0.0);
    return p;
}

template <typename T>
ForwardOutput<T> forward_graph(const ModelParams<T>& params, const Var<T>& mri_y, const Var<T>& func_y) {
    if (mri_y.channels() != 1 || func_y.channels() != 1) throw ShapeError("forward: inputs must be single planes");
    if (mri_y.height() != func_y.height() || mri_y.width() != func_y.width()) {
        throw ShapeError("forward: source images differ in size");
    }
    Var<T> f_mri = idn_forward(params.idn_mri, mri_y);
    Var<T> f_func = idn_forward(params.idn_func, func_y);
    Var<T> f_comp = mcfem_forward(params.mcfem, mri_y, func_y);
    Var<T> pre = ag::conv2d(ag::concat_channels(std::vector<Var<T>>{f_mri, f_func, f_comp}), params.recon_weight,
                            params.recon_bias, 1);
    return {ag::hard_sigmoid(pre), pre};
}

template <typename T>
GrayImage forward(const ModelParams<T>& params, const GrayImage& mri_y, const GrayImage& func_y) {
    ag::NoGradGuard no_grad;
    auto out = forward_graph(params, ag::constant(to_tensor<T>(mri_y.plane())), ag::constant(to_tensor<T>(func_y.plane())));
    Plane plane = to_plane(out.fused.value());
    // HardSigmoid already bounds to [0,1]; clamp guards float rounding at the ends.
    for (double& v : plane.pixels) v = std::clamp(v, 0.0, 1.0);
    return GrayImage(std::move(plane));
}

template <typename T>
FusedImage fuse_full(const ModelParams<T>& params, const ImagePair& pair) {
    FusedImage out;
    out.y = forward(params, pair.mri, pair.functional_y).plane();
    if (pair.functional_chroma) {
        out.rgb = ycbcr_to_rgb(out.y, pair.functional_chroma->cb, pair.functional_chroma->cr);
    }
    return out;
}

template <typename T>
std::size_t count_parameters(const ModelParams<T>& params) {
    return count_values(params.parameters());
}

#define AMIN_INSTANTIATE_MODEL(T)                                                                  \
    template struct ModelParams<T>;                                                                \
    template ModelParams<T> build_model<T>(const ModelConfig&, std::uint64_t);                     \
    template ForwardOutput<T> forward_graph<T>(const ModelParams<T>&, const Var<T>&, const Var<T>&); \
    template GrayImage forward<T>(const ModelParams<T>&, const GrayImage&, const GrayImage&);       \
    template FusedImage fuse_full<T>(const ModelParams<T>&, const ImagePair&);                     \
    template std::size_t count_parameters<T>(const ModelParams<T>&);

AMIN_INSTANTIATE_MODEL(float)
AMIN_INSTANTIATE_MODEL(double)

}  // namespace amin
