#include "evrwkv/model.hpp"

#include <sstream>

#include "evrwkv/cross_rwkv.hpp"
#include "evrwkv/eisfe.hpp"
#include "evrwkv/feature_init.hpp"

namespace evr {

ValuePtr enhance_forward(const Tensor& image, const Tensor& voxel, ModelParams& params,
                         const RunConfig& cfg) {
    cfg.validate();
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("enhance_forward: expected a (3,H,W) image, got " +
                                    image.shape_str());
    int H = image.dim(1), W = image.dim(2);
    if (H % 16 != 0 || W % 16 != 0)
        throw std::invalid_argument("enhance_forward: extents must be divisible by 16, got " +
                                    image.shape_str());
    if (voxel.ndim() != 3 || voxel.dim(0) != cfg.bins || voxel.dim(1) != H || voxel.dim(2) != W)
        throw std::invalid_argument("enhance_forward: voxel grid " + voxel.shape_str() +
                                    " does not match (" + std::to_string(cfg.bins) + "," +
                                    std::to_string(H) + "," + std::to_string(W) + ")");
    int C = cfg.base_channels;
    auto img = leaf(image);
    auto illum = estimate_illumination(img, params, "illum");
    auto i_lu = retinex_boost(img, illum);
    auto x_img = stem(i_lu, C, params, "stem_img");
    auto x_ev = stem(leaf(voxel), C, params, "stem_ev");
    auto [xi_hat, xe_hat] = unet_forward(x_img, x_ev, params, "unet", cfg.cross_rwkv());
    ValuePtr fused;
    if (cfg.use_eisfe) {
        fused = eisfe_forward(xi_hat, xe_hat, x_img, params, "eisfe", cfg.eisfe());
    } else {
        // ablation: parameter-free average of the three streams
        fused = mul_scalar(add(add(xi_hat, xe_hat), x_img), 1.0 / 3.0);
    }
    return reconstruct_head(fused, params, "head");
}

std::string describe_model(const RunConfig& cfg) {
    ModelParams params;
    params.seed = cfg.seed;
    enhance_forward(Tensor::zeros({3, 64, 64}), Tensor::zeros({cfg.bins, 64, 64}), params, cfg);
    std::ostringstream out;
    std::int64_t total = 0;
    for (const auto& [name, v] : params.entries) {
        out << name << " " << v->t.shape_str() << " " << v->t.size() << "\n";
        total += v->t.size();
    }
    out << "total " << total << "\n";
    return out.str();
}

}  // namespace evr
