#pragma once

#include <cstdint>
#include <string>

#include "evrwkv/cross_rwkv.hpp"
#include "evrwkv/eisfe.hpp"
#include "evrwkv/losses.hpp"

namespace evr {

// Every knob of the pipeline in one validated document. Desk-scale defaults;
// full-scale values (256x256 crops, lr 1e-4) are reachable by overriding.
struct RunConfig {
    std::uint64_t seed = 0;
    int base_channels = 16;
    int bins = 32;
    std::string voxel_norm = "max_abs";  // none | max_abs | std_nonzero

    double sigma_min = 0.3;
    double sigma_max = 4.0;
    int gauss_kernel = 11;
    bool fft_circular = false;

    int rewkv_iterations = 2;
    int hidden_ratio = 4;
    bool cs_shift_cross = false;
    bool residual = true;
    std::string wkv_exponent = "vrwkv";  // vrwkv | grouped

    bool use_eisfe = true;
    bool use_spatial_mix = true;
    bool use_channel_mix = true;
    bool use_msssim_loss = true;

    double lr = 1e-3;
    int steps = 500;
    double lambda_rec = 1.0;
    double lambda_percep = 0.1;
    double lambda_ssim = 0.2;
    double lambda_msssim = 0.2;
    bool charbonnier_global = false;

    void validate() const;  // throws std::invalid_argument

    CrossRwkvConfig cross_rwkv() const;
    EisfeConfig eisfe() const;
    LossWeights loss_weights() const;
};

// Parses a JSON document; unknown keys are rejected by name.
RunConfig load_config(const std::string& path);

}  // namespace evr
