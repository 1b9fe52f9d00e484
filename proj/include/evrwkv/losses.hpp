#pragma once

#include <vector>

#include "evrwkv/ops.hpp"

namespace evr {

struct LossWeights {
    double rec = 1.0;     // Charbonnier reconstruction
    double percep = 0.1;  // perceptual proxy
    double ssim = 0.2;    // 1 - SSIM
    double msssim = 0.2;  // 1 - MS-SSIM
};

struct SsimConfig {
    int window = 11;
    double sigma = 1.5;
    double c1 = 0.01 * 0.01;  // (0.01 * L)^2, L = 1
    double c2 = 0.03 * 0.03;
    // the published constants sum to 1.0001; stored normalized to sum 1
    std::vector<double> ms_weights = {0.0448 / 1.0001, 0.2856 / 1.0001, 0.3001 / 1.0001,
                                      0.2363 / 1.0001, 0.1333 / 1.0001};
};

// mean(sqrt(d^2 + eps^2)); the global flag switches to the whole-image reading
// sqrt(sum(d^2) + eps^2).
ValuePtr charbonnier(const ValuePtr& en, const Tensor& gt, double eps = 1e-4,
                     bool global = false);

// L1 distance between fixed random conv features (3 stages, stride 2,
// channels 8/16/32, weights frozen from seed 0). Gradients reach `en` only.
ValuePtr perceptual_loss(const ValuePtr& en, const Tensor& gt);

// Mean SSIM over valid 11x11 Gaussian windows; scalar node in [-1,1].
ValuePtr ssim_value(const ValuePtr& x, const ValuePtr& y, const SsimConfig& cfg = {});
double ssim_metric(const Tensor& x, const Tensor& y, const SsimConfig& cfg = {});

// Multi-scale SSIM with 2x mean-pool between levels; levels truncated to what
// the image supports and the weights renormalized to sum 1.
ValuePtr ms_ssim_value(const ValuePtr& x, const ValuePtr& y, const SsimConfig& cfg = {});
double ms_ssim_metric(const Tensor& x, const Tensor& y, const SsimConfig& cfg = {});

// rec*charbonnier + percep*perceptual + ssim*(1-SSIM) + msssim*(1-MS-SSIM)
ValuePtr total_loss(const ValuePtr& en, const Tensor& gt, const LossWeights& w,
                    const SsimConfig& cfg = {}, double eps = 1e-4,
                    bool charbonnier_global = false);

// 10*log10(peak^2 / MSE); +infinity for identical images.
double psnr(const Tensor& x, const Tensor& y, double peak = 1.0);

}  // namespace evr
