#include "evrwkv/losses.hpp"

#include <cmath>
#include <limits>

namespace evr {

namespace {

// 1D Gaussian window replicated into a per-channel (C,K,K) depthwise kernel
Tensor ssim_window(int C, int K, double sigma) {
    int R = K / 2;
    std::vector<double> g1(static_cast<std::size_t>(K));
    double s = 0.0;
    for (int i = -R; i <= R; ++i) {
        double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
        g1[static_cast<std::size_t>(i + R)] = v;
        s += v;
    }
    for (double& v : g1) v /= s;
    Tensor w({C, K, K});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < K; ++y)
            for (int x = 0; x < K; ++x)
                w.at3(c, y, x) = g1[static_cast<std::size_t>(y)] * g1[static_cast<std::size_t>(x)];
    return w;
}

// SSIM luminance*cs map and cs-only map over valid windows
struct SsimMaps {
    ValuePtr full;  // mean of the SSIM map
    ValuePtr cs;    // mean of the contrast-structure map
};

SsimMaps ssim_maps(const ValuePtr& x, const ValuePtr& y, const SsimConfig& cfg) {
    check_same_shape(x->t, y->t, "ssim");
    int C = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    if (H < cfg.window || W < cfg.window)
        throw std::invalid_argument("ssim: image " + x->t.shape_str() + " smaller than the " +
                                    std::to_string(cfg.window) + "x" +
                                    std::to_string(cfg.window) + " window");
    auto win = constant(ssim_window(C, cfg.window, cfg.sigma));
    auto blur = [&](const ValuePtr& v) { return depthwise_conv2d(v, win, nullptr, 1, 0); };
    auto mu_x = blur(x);
    auto mu_y = blur(y);
    auto mu_xx = mul(mu_x, mu_x);
    auto mu_yy = mul(mu_y, mu_y);
    auto mu_xy = mul(mu_x, mu_y);
    auto sig_xx = sub(blur(mul(x, x)), mu_xx);
    auto sig_yy = sub(blur(mul(y, y)), mu_yy);
    auto sig_xy = sub(blur(mul(x, y)), mu_xy);

    auto lum = div_ew(add_scalar(mul_scalar(mu_xy, 2.0), cfg.c1),
                      add_scalar(add(mu_xx, mu_yy), cfg.c1));
    auto cs = div_ew(add_scalar(mul_scalar(sig_xy, 2.0), cfg.c2),
                     add_scalar(add(sig_xx, sig_yy), cfg.c2));
    return {mean(mul(lum, cs)), mean(cs)};
}

}  // namespace

ValuePtr charbonnier(const ValuePtr& en, const Tensor& gt, double eps, bool global) {
    check_same_shape(en->t, gt, "charbonnier");
    auto d = sub(en, constant(gt));
    auto d2 = mul(d, d);
    if (global) return sqrt_ew(add_scalar(sum(d2), eps * eps));
    return mean(sqrt_ew(add_scalar(d2, eps * eps)));
}

ValuePtr perceptual_loss(const ValuePtr& en, const Tensor& gt) {
    check_same_shape(en->t, gt, "perceptual_loss");
    std::mt19937_64 rng(0);
    std::vector<ValuePtr> kernels;
    int cin = en->t.dim(0);
    for (int cout : {8, 16, 32}) {
        double bound = 1.0 / std::sqrt(static_cast<double>(cin) * 9);
        kernels.push_back(constant(Tensor::uniform({cout, cin, 3, 3}, -bound, bound, rng)));
        cin = cout;
    }
    auto features = [&](ValuePtr v) {
        std::vector<ValuePtr> out;
        for (const auto& k : kernels) {
            v = leaky_relu(conv2d(v, k, nullptr, 2, 1), 0.1);
            out.push_back(v);
        }
        return out;
    };
    auto fe = features(en);
    auto fg = features(constant(gt));
    ValuePtr loss;
    for (std::size_t i = 0; i < fe.size(); ++i) {
        auto term = mean(abs_ew(sub(fe[i], fg[i])));
        loss = loss ? add(loss, term) : term;
    }
    return mul_scalar(loss, 1.0 / static_cast<double>(fe.size()));
}

ValuePtr ssim_value(const ValuePtr& x, const ValuePtr& y, const SsimConfig& cfg) {
    return ssim_maps(x, y, cfg).full;
}

double ssim_metric(const Tensor& x, const Tensor& y, const SsimConfig& cfg) {
    return ssim_value(constant(x), constant(y), cfg)->t[0];
}

ValuePtr ms_ssim_value(const ValuePtr& x, const ValuePtr& y, const SsimConfig& cfg) {
    check_same_shape(x->t, y->t, "ms_ssim");
    int H = x->t.dim(1), W = x->t.dim(2);
    int max_levels = static_cast<int>(cfg.ms_weights.size());
    int levels = 0;
    for (int h = H, w = W; levels < max_levels && h >= cfg.window && w >= cfg.window;
         h /= 2, w /= 2)
        ++levels;
    if (levels == 0)
        throw std::invalid_argument("ms_ssim: image " + x->t.shape_str() +
                                    " smaller than one " + std::to_string(cfg.window) +
                                    "-pixel level");
    double wsum = 0.0;
    for (int j = 0; j < levels; ++j) wsum += cfg.ms_weights[static_cast<std::size_t>(j)];

    ValuePtr prod;
    ValuePtr cx = x, cy = y;
    for (int j = 0; j < levels; ++j) {
        auto maps = ssim_maps(cx, cy, cfg);
        // coarse levels use contrast-structure only; the last level is full SSIM
        auto term = (j == levels - 1) ? maps.full : maps.cs;
        auto factor = pow_const(clamp_min(term, 1e-6),
                                cfg.ms_weights[static_cast<std::size_t>(j)] / wsum);
        prod = prod ? mul(prod, factor) : factor;
        if (j + 1 < levels) {
            cx = avg_pool2(cx);
            cy = avg_pool2(cy);
        }
    }
    return prod;
}

double ms_ssim_metric(const Tensor& x, const Tensor& y, const SsimConfig& cfg) {
    return ms_ssim_value(constant(x), constant(y), cfg)->t[0];
}

ValuePtr total_loss(const ValuePtr& en, const Tensor& gt, const LossWeights& w,
                    const SsimConfig& cfg, double eps, bool charbonnier_global) {
    if (w.rec < 0 || w.percep < 0 || w.ssim < 0 || w.msssim < 0)
        throw std::invalid_argument("total_loss: weights must be non-negative");
    if (w.rec + w.percep + w.ssim + w.msssim <= 0.0)
        throw std::invalid_argument("total_loss: at least one weight must be positive");
    ValuePtr loss;
    auto accumulate = [&](double lambda, const ValuePtr& term) {
        if (lambda == 0.0) return;
        auto scaled = mul_scalar(term, lambda);
        loss = loss ? add(loss, scaled) : scaled;
    };
    accumulate(w.rec, w.rec > 0 ? charbonnier(en, gt, eps, charbonnier_global) : nullptr);
    accumulate(w.percep, w.percep > 0 ? perceptual_loss(en, gt) : nullptr);
    accumulate(w.ssim,
               w.ssim > 0 ? add_scalar(neg(ssim_value(en, constant(gt), cfg)), 1.0) : nullptr);
    accumulate(w.msssim,
               w.msssim > 0 ? add_scalar(neg(ms_ssim_value(en, constant(gt), cfg)), 1.0)
                            : nullptr);
    return loss;
}

double psnr(const Tensor& x, const Tensor& y, double peak) {
    check_same_shape(x, y, "psnr");
    double mse = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        double d = x[i] - y[i];
        mse += d * d;
    }
    mse /= static_cast<double>(x.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace evr
