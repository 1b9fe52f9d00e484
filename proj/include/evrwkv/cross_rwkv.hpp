#pragma once

#include <string>
#include <utility>
#include <vector>

#include "evrwkv/ops.hpp"
#include "evrwkv/params.hpp"
#include "evrwkv/wkv.hpp"

namespace evr {

struct CrossRwkvConfig {
    int base_channels = 16;
    std::vector<int> channel_mult = {1, 2, 4, 8};
    int rewkv_iterations = 2;
    int hidden_ratio = 4;
    bool cs_shift_cross = false;  // add the off-diagonal branch mixing
    bool residual = true;
    bool use_spatial_mix = true;
    bool use_channel_mix = true;
    wkv::Exponent exponent = wkv::Exponent::vrwkv;
};

// Four-branch token shift per modality: identity plus depthwise convs with
// k = 1, 3, 5, each scaled by a learned weight. Inputs are (T,C) token grids
// with T == H*W. With `cross` the image output also aggregates the event
// branches through the image weights (and vice versa).
std::pair<ValuePtr, ValuePtr> cs_shift(const ValuePtr& x_img, const ValuePtr& x_ev, int H, int W,
                                       ModelParams& params, const std::string& prefix,
                                       bool cross = false);

// Spatial Mix with cross-modal key exchange and gated fusion; returns both
// modality outputs (with residual unless disabled).
std::pair<ValuePtr, ValuePtr> spatial_mix(const ValuePtr& x_img, const ValuePtr& x_ev, int H,
                                          int W, ModelParams& params, const std::string& prefix,
                                          const CrossRwkvConfig& cfg);

// Channel Mix over the image stream only.
ValuePtr channel_mix(const ValuePtr& x_img, int H, int W, ModelParams& params,
                     const std::string& prefix, const CrossRwkvConfig& cfg);

// Spatial Mix then Channel Mix, honoring the ablation switches.
std::pair<ValuePtr, ValuePtr> cross_rwkv_block(const ValuePtr& x_img, const ValuePtr& x_ev, int H,
                                               int W, ModelParams& params,
                                               const std::string& prefix,
                                               const CrossRwkvConfig& cfg);

// 4-level U-shaped encoder-decoder over (C,H,W) feature grids; returns the
// restored image and event features at the input resolution.
std::pair<ValuePtr, ValuePtr> unet_forward(const ValuePtr& x_img, const ValuePtr& x_ev,
                                           ModelParams& params, const std::string& prefix,
                                           const CrossRwkvConfig& cfg);

}  // namespace evr
