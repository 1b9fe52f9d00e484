#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "evrwkv/model.hpp"

namespace evr {

class Adam {
  public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
    void step(ModelParams& params);

  private:
    double lr_, b1_, b2_, eps_;
    std::int64_t t_ = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> state_;  // first/second moments
};

struct ToyResult {
    std::vector<double> losses;
    double psnr_initial = 0.0;
    double psnr_final = 0.0;
    double ssim_final = 0.0;
    Tensor initial_output;  // clamped to [0,1]
    Tensor final_output;
    int steps_run = 0;
};

// Overfits the model on a single (low, ground-truth, voxel) triple. Writes a
// "step,loss" CSV to `curve` when given. Stops early once the PSNR gain over
// the untrained output reaches `early_stop_gain` dB (0 disables). Aborts with
// a diagnostic naming the first non-finite parameter if training diverges.
ToyResult train_toy(const Tensor& low, const Tensor& gt, const Tensor& voxel,
                    const RunConfig& cfg, std::ostream* curve = nullptr,
                    double early_stop_gain = 0.0);

struct GradcheckGroup {
    std::string name;
    double max_rel_err;
};

struct GradcheckReport {
    std::vector<GradcheckGroup> groups;
    double worst = 0.0;
    bool pass = true;  // worst <= 1e-3
};

// Central finite differences over sampled entries of every parameter group of
// the full model on a tiny input. The deformable-conv offset predictor is
// nudged off its zero init first: integer sampling points sit on the bilinear
// interpolation kink where two-sided differences are invalid.
GradcheckReport gradcheck_model(const RunConfig& cfg, int H = 16, int W = 16,
                                int samples_per_group = 4);

Tensor clamp01(const Tensor& x);

}  // namespace evr
