#include "evrwkv/feature_init.hpp"

namespace evr {

ValuePtr estimate_illumination(const ValuePtr& image, ModelParams& params,
                               const std::string& prefix) {
    if (image->t.dim(0) != 3)
        throw std::invalid_argument("estimate_illumination: expected a 3-channel image, got " +
                                    image->t.shape_str());
    auto prior = channel_max(image);
    auto x = concat_channels({prior, image});
    auto w = params.uniform_fan_in(prefix + ".conv_w", {1, 4, 3, 3}, 4 * 9);
    auto b = params.zeros(prefix + ".conv_b", {1});
    return sigmoid(conv2d(x, w, b, 1, 1));
}

ValuePtr retinex_boost(const ValuePtr& image, const ValuePtr& illumination) {
    if (illumination->t.dim(0) != 1 || illumination->t.dim(1) != image->t.dim(1) ||
        illumination->t.dim(2) != image->t.dim(2))
        throw std::invalid_argument("retinex_boost: illumination " + illumination->t.shape_str() +
                                    " does not match image " + image->t.shape_str());
    return add(mul_spatial_map(image, illumination), image);
}

ValuePtr stem(const ValuePtr& x, int C, ModelParams& params, const std::string& prefix) {
    int Cin = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("stem: extents must be even, got " + x->t.shape_str());
    auto w1 = params.uniform_fan_in(prefix + ".conv1_w", {C, Cin, 3, 3}, Cin * 9);
    auto b1 = params.zeros(prefix + ".conv1_b", {C});
    auto w2 = params.uniform_fan_in(prefix + ".conv2_w", {C, C, 3, 3}, C * 9);
    auto b2 = params.zeros(prefix + ".conv2_b", {C});
    auto h = leaky_relu(conv2d(x, w1, b1, 1, 1), 0.1);
    return conv2d(h, w2, b2, 2, 1);
}

}  // namespace evr
