#pragma once

#include <string>

#include "evrwkv/config.hpp"
#include "evrwkv/params.hpp"

namespace evr {

// Full forward pass: Retinex pre-enhancement, voxel/image stems, Cross-RWKV
// U-Net, EISFE fusion (input-stem features as the third stream), and the
// reconstruction head. Returns the unclamped (3,H,W) enhanced image.
ValuePtr enhance_forward(const Tensor& image, const Tensor& voxel, ModelParams& params,
                         const RunConfig& cfg);

// Plain-text parameter ledger (path, shape, count per line, then the total),
// instantiated on a 64x64 input.
std::string describe_model(const RunConfig& cfg);

}  // namespace evr
