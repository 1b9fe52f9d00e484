#include "evrwkv/train.hpp"

#include <algorithm>
#include <cmath>

namespace evr {

Tensor clamp01(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data) v = std::min(1.0, std::max(0.0, v));
    return out;
}

void Adam::step(ModelParams& params) {
    ++t_;
    double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& [name, v] : params.entries) {
        auto it = state_.find(name);
        if (it == state_.end())
            it = state_.emplace(name, std::make_pair(Tensor::zeros(v->t.shape),
                                                     Tensor::zeros(v->t.shape)))
                     .first;
        Tensor& m = it->second.first;
        Tensor& s = it->second.second;
        for (std::int64_t i = 0; i < v->t.size(); ++i) {
            double g = v->grad_allocated ? v->grad[i] : 0.0;
            m[i] = b1_ * m[i] + (1.0 - b1_) * g;
            s[i] = b2_ * s[i] + (1.0 - b2_) * g * g;
            v->t[i] -= lr_ * (m[i] / c1) / (std::sqrt(s[i] / c2) + eps_);
        }
    }
}

namespace {

void check_finite(const ModelParams& params, double loss, int step) {
    if (std::isfinite(loss)) return;
    for (const auto& [name, v] : params.entries)
        if (!v->t.all_finite())
            throw std::runtime_error("training diverged at step " + std::to_string(step) +
                                     ": first non-finite parameter '" + name + "'");
    throw std::runtime_error("training diverged at step " + std::to_string(step) +
                             ": loss is non-finite but all parameters are finite");
}

}  // namespace

ToyResult train_toy(const Tensor& low, const Tensor& gt, const Tensor& voxel,
                    const RunConfig& cfg, std::ostream* curve, double early_stop_gain) {
    cfg.validate();
    check_same_shape(low, gt, "train_toy");
    ModelParams params;
    params.seed = cfg.seed;
    SsimConfig scfg;
    ToyResult res;

    Adam opt(cfg.lr);
    if (curve) *curve << "step,loss\n";
    for (int step = 0; step < cfg.steps; ++step) {
        params.zero_grads();
        auto en = enhance_forward(low, voxel, params, cfg);
        if (step == 0) {
            res.initial_output = clamp01(en->t);
            res.psnr_initial = psnr(res.initial_output, gt);
        }
        auto loss = total_loss(en, gt, cfg.loss_weights(), scfg, 1e-4, cfg.charbonnier_global);
        double lv = loss->t[0];
        check_finite(params, lv, step);
        res.losses.push_back(lv);
        if (curve) *curve << step << "," << lv << "\n";
        ++res.steps_run;
        if (early_stop_gain > 0.0 &&
            psnr(clamp01(en->t), gt) - res.psnr_initial >= early_stop_gain)
            break;
        backward(loss);
        opt.step(params);
    }
    auto final_en = enhance_forward(low, voxel, params, cfg);
    res.final_output = clamp01(final_en->t);
    res.psnr_final = psnr(res.final_output, gt);
    res.ssim_final = ssim_metric(res.final_output, gt);
    if (res.steps_run == 0) {
        res.initial_output = res.final_output;
        res.psnr_initial = res.psnr_final;
    }
    return res;
}

GradcheckReport gradcheck_model(const RunConfig& cfg, int H, int W, int samples_per_group) {
    cfg.validate();
    ModelParams params;
    params.seed = cfg.seed;
    std::mt19937_64 rng(cfg.seed + 1);
    Tensor low = Tensor::uniform({3, H, W}, 0.0, 1.0, rng);
    Tensor voxel = Tensor::normal({cfg.bins, H, W}, 0.0, 0.5, rng);
    Tensor wvec = Tensor::normal({3, H, W}, 0.0, 1.0, rng);
    auto run = [&]() {
        return sum(mul(enhance_forward(low, voxel, params, cfg), constant(wvec)));
    };
    run();  // instantiate parameters
    for (auto& [name, v] : params.entries)
        if (name.find("offset_") != std::string::npos)
            for (double& x : v->t.data)
                x += std::uniform_real_distribution<double>(-0.05, 0.05)(rng);

    auto loss = run();
    params.zero_grads();
    backward(loss);
    auto f = [&]() { return run()->t[0]; };
    auto rel = [](double a, double b) {
        return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-2});
    };
    GradcheckReport report;
    for (auto& [name, v] : params.entries) {
        std::vector<std::int64_t> idx;
        std::int64_t n = v->t.size();
        for (int s = 0; s < samples_per_group; ++s) {
            std::int64_t i = n <= samples_per_group ? s : s * (n - 1) / (samples_per_group - 1);
            if (i < n && (idx.empty() || idx.back() != i)) idx.push_back(i);
        }
        Tensor fd = finite_difference_gradient_sampled(params, name, f, 1e-6, idx);
        double worst = 0.0;
        for (std::int64_t i : idx) {
            double g = v->grad_allocated ? v->grad[i] : 0.0;
            worst = std::max(worst, rel(g, fd[i]));
        }
        report.groups.push_back({name, worst});
        report.worst = std::max(report.worst, worst);
    }
    report.pass = report.worst <= 1e-3;
    return report;
}

}  // namespace evr
