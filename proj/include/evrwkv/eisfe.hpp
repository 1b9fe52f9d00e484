#pragma once

#include <string>

#include "evrwkv/ops.hpp"
#include "evrwkv/params.hpp"

namespace evr {

struct EisfeConfig {
    double sigma_min = 0.3;
    double sigma_max = 4.0;
    int gauss_K = 11;
    bool fft_circular = false;
};

// 3x3 deformable convolution, stride 1, same padding. offsets has 2*k*k
// channels ordered (dy,dx) per kernel tap; samples outside the image read 0.
// Gradients flow to x, kernel, bias and the offsets.
ValuePtr deform_conv(const ValuePtr& x, const ValuePtr& offsets, const ValuePtr& kernel,
                     const ValuePtr& bias);

// Event-Image Spectral Fusion Enhancer. All three inputs are (C,H,W); the
// output keeps that shape.
ValuePtr eisfe_forward(const ValuePtr& x_img, const ValuePtr& x_ev, const ValuePtr& x_inp,
                       ModelParams& params, const std::string& prefix, const EisfeConfig& cfg);

// (C,H,W) -> (3,2H,2W): 1x1 conv, 4x4 stride-2 transposed conv, 1x1 conv.
ValuePtr reconstruct_head(const ValuePtr& x, ModelParams& params, const std::string& prefix);

}  // namespace evr
