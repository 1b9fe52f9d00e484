#pragma once

#include <string>

#include "evrwkv/ops.hpp"
#include "evrwkv/params.hpp"

namespace evr {

// Illumination map in (0,1): max-RGB prior concatenated with the image,
// one 3x3 conv, sigmoid. Output shape (1,H,W).
ValuePtr estimate_illumination(const ValuePtr& image, ModelParams& params,
                               const std::string& prefix);

// I_lu = I * L + I, broadcasting the (1,H,W) map over channels. The result
// lives in [0,2) and is deliberately not re-clamped.
ValuePtr retinex_boost(const ValuePtr& image, const ValuePtr& illumination);

// (C_in,H,W) -> (C,H/2,W/2): 3x3 stride-1 conv, leaky ReLU 0.1, 3x3 stride-2
// conv. H and W must be even.
ValuePtr stem(const ValuePtr& x, int C, ModelParams& params, const std::string& prefix);

}  // namespace evr
