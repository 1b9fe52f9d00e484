#include "evrwkv/eisfe.hpp"

#include <cmath>

#include "evrwkv/freq.hpp"

namespace evr {

namespace {

inline double pix(const Tensor& x, int c, int y, int xx, int H, int W) {
    if (y < 0 || y >= H || xx < 0 || xx >= W) return 0.0;
    return x.at3(c, y, xx);
}

}  // namespace

ValuePtr deform_conv(const ValuePtr& x, const ValuePtr& offsets, const ValuePtr& kernel,
                     const ValuePtr& bias) {
    int Cin = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    int Cout = kernel->t.dim(0), k = kernel->t.dim(2);
    int pad = k / 2;
    if (kernel->t.dim(1) != Cin) throw std::invalid_argument("deform_conv: channel mismatch");
    if (offsets->t.dim(0) != 2 * k * k)
        throw std::invalid_argument("deform_conv: offsets must have 2*k*k channels, got " +
                                    std::to_string(offsets->t.dim(0)));

    // samples[(ci*k*k + tap) * H*W + y*W + x]
    auto samples = std::make_shared<Tensor>(Tensor::zeros({Cin * k * k, H, W}));
    for (int tap = 0; tap < k * k; ++tap) {
        int ky = tap / k, kx = tap % k;
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                double py = y - pad + ky + offsets->t.at3(2 * tap, y, xx);
                double px = xx - pad + kx + offsets->t.at3(2 * tap + 1, y, xx);
                int y0 = static_cast<int>(std::floor(py)), x0 = static_cast<int>(std::floor(px));
                double wy = py - y0, wx = px - x0;
                for (int ci = 0; ci < Cin; ++ci)
                    samples->at3(ci * k * k + tap, y, xx) =
                        (1 - wy) * (1 - wx) * pix(x->t, ci, y0, x0, H, W) +
                        (1 - wy) * wx * pix(x->t, ci, y0, x0 + 1, H, W) +
                        wy * (1 - wx) * pix(x->t, ci, y0 + 1, x0, H, W) +
                        wy * wx * pix(x->t, ci, y0 + 1, x0 + 1, H, W);
            }
    }
    Tensor out({Cout, H, W});
    for (int co = 0; co < Cout; ++co)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                double acc = bias ? bias->t[co] : 0.0;
                for (int ci = 0; ci < Cin; ++ci)
                    for (int tap = 0; tap < k * k; ++tap)
                        acc += kernel->t.data[(static_cast<std::int64_t>(co) * Cin + ci) * k * k + tap] *
                               samples->at3(ci * k * k + tap, y, xx);
                out.at3(co, y, xx) = acc;
            }
    std::vector<ValuePtr> parents =
        bias ? std::vector<ValuePtr>{x, offsets, kernel, bias} : std::vector<ValuePtr>{x, offsets, kernel};
    return make_node(
        std::move(out), std::move(parents),
        [x, offsets, kernel, bias, samples, Cin, Cout, H, W, k, pad](Value& self) {
            Tensor gx = Tensor::zeros(x->t.shape);
            Tensor goff = Tensor::zeros(offsets->t.shape);
            Tensor gk = Tensor::zeros(kernel->t.shape);
            Tensor gb = bias ? Tensor::zeros(bias->t.shape) : Tensor{};
            // gradient w.r.t. each bilinear sample
            Tensor gsamp = Tensor::zeros({Cin * k * k, H, W});
            for (int co = 0; co < Cout; ++co)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        double g = self.grad.at3(co, y, xx);
                        if (bias) gb[co] += g;
                        if (g == 0.0) continue;
                        for (int ci = 0; ci < Cin; ++ci)
                            for (int tap = 0; tap < k * k; ++tap) {
                                std::int64_t widx = (static_cast<std::int64_t>(co) * Cin + ci) * k * k + tap;
                                gk[widx] += g * samples->at3(ci * k * k + tap, y, xx);
                                gsamp.at3(ci * k * k + tap, y, xx) += g * kernel->t[widx];
                            }
                    }
            for (int tap = 0; tap < k * k; ++tap) {
                int ky = tap / k, kx = tap % k;
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        double py = y - pad + ky + offsets->t.at3(2 * tap, y, xx);
                        double px = xx - pad + kx + offsets->t.at3(2 * tap + 1, y, xx);
                        int y0 = static_cast<int>(std::floor(py)), x0 = static_cast<int>(std::floor(px));
                        double wy = py - y0, wx = px - x0;
                        double gy_acc = 0.0, gx_acc = 0.0;
                        for (int ci = 0; ci < Cin; ++ci) {
                            double gs = gsamp.at3(ci * k * k + tap, y, xx);
                            if (gs == 0.0) continue;
                            auto add_px = [&](int yy, int xc, double v) {
                                if (yy < 0 || yy >= H || xc < 0 || xc >= W) return;
                                gx.at3(ci, yy, xc) += v;
                            };
                            add_px(y0, x0, gs * (1 - wy) * (1 - wx));
                            add_px(y0, x0 + 1, gs * (1 - wy) * wx);
                            add_px(y0 + 1, x0, gs * wy * (1 - wx));
                            add_px(y0 + 1, x0 + 1, gs * wy * wx);
                            double p00 = pix(x->t, ci, y0, x0, H, W), p01 = pix(x->t, ci, y0, x0 + 1, H, W);
                            double p10 = pix(x->t, ci, y0 + 1, x0, H, W), p11 = pix(x->t, ci, y0 + 1, x0 + 1, H, W);
                            gy_acc += gs * ((1 - wx) * (p10 - p00) + wx * (p11 - p01));
                            gx_acc += gs * ((1 - wy) * (p01 - p00) + wy * (p11 - p10));
                        }
                        goff.at3(2 * tap, y, xx) = gy_acc;
                        goff.at3(2 * tap + 1, y, xx) = gx_acc;
                    }
            }
            auto acc = [](const ValuePtr& p, const Tensor& grad) {
                if (!p || !p->requires_grad) return;
                Tensor& gp = p->ensure_grad();
                for (std::int64_t i = 0; i < grad.size(); ++i) gp[i] += grad[i];
            };
            acc(x, gx);
            acc(offsets, goff);
            acc(kernel, gk);
            if (bias) acc(bias, gb);
        });
}

namespace {

// CBAM-style spatial attention: 7x7 conv over [mean;max] channel pools.
ValuePtr spatial_attention(const ValuePtr& x, ModelParams& params, const std::string& prefix) {
    auto pools = concat_channels({channel_mean(x), channel_max(x)});
    auto w = params.uniform_fan_in(prefix + ".conv_w", {1, 2, 7, 7}, 2 * 49);
    auto b = params.zeros(prefix + ".conv_b", {1});
    return sigmoid(conv2d(pools, w, b, 1, 3));
}

// Squeeze-ratio-4 channel attention MLP over the global average pool.
ValuePtr channel_attention(const ValuePtr& x, ModelParams& params, const std::string& prefix) {
    int C = x->t.dim(0);
    int Ch = std::max(C / 4, 1);
    auto w1 = params.uniform_fan_in(prefix + ".fc1_w", {C, Ch}, C);
    auto b1 = params.zeros(prefix + ".fc1_b", {1, Ch});
    auto w2 = params.uniform_fan_in(prefix + ".fc2_w", {Ch, C}, Ch);
    auto b2 = params.zeros(prefix + ".fc2_b", {1, C});
    auto g = reshape(global_avg_pool(x), {1, C});
    auto h = leaky_relu(add(matmul(g, w1), b1), 0.0);
    return reshape(sigmoid(add(matmul(h, w2), b2)), {C});
}

}  // namespace

ValuePtr eisfe_forward(const ValuePtr& x_img, const ValuePtr& x_ev, const ValuePtr& x_inp,
                       ModelParams& params, const std::string& prefix, const EisfeConfig& cfg) {
    check_same_shape(x_img->t, x_ev->t, "eisfe_forward");
    check_same_shape(x_img->t, x_inp->t, "eisfe_forward");
    int C = x_img->t.dim(0);
    auto fused = concat_channels({x_img, x_ev, x_inp});

    auto wf = params.uniform_fan_in(prefix + ".freq_proj_w", {C, 3 * C, 1, 1}, 3 * C);
    auto bf = params.zeros(prefix + ".freq_proj_b", {C});
    auto ws = params.uniform_fan_in(prefix + ".spat_proj_w", {C, 3 * C, 1, 1}, 3 * C);
    auto bs = params.zeros(prefix + ".spat_proj_b", {C});
    auto x_freq = conv2d(fused, wf, bf, 1, 0);
    auto x_spat = conv2d(fused, ws, bs, 1, 0);

    // frequency branch: learned per-channel sigma in [sigma_min, sigma_max]
    auto sigma_raw = params.zeros(prefix + ".sigma_raw", {C});
    auto sigma = add_scalar(mul_scalar(sigmoid(sigma_raw), cfg.sigma_max - cfg.sigma_min),
                            cfg.sigma_min);
    auto x_freq_hat = adaptive_gaussian_filter(x_freq, sigma, cfg.gauss_K, cfg.fft_circular);

    // spatial branch: deformable 3x3 conv, offsets predicted from the branch input
    auto ow = params.zeros(prefix + ".offset_w", {18, C, 3, 3});
    auto ob = params.zeros(prefix + ".offset_b", {18});
    auto offsets = conv2d(x_spat, ow, ob, 1, 1);
    auto dk = params.uniform_fan_in(prefix + ".deform_w", {C, C, 3, 3}, C * 9);
    auto db = params.zeros(prefix + ".deform_b", {C});
    auto x_spat_hat = deform_conv(x_spat, offsets, dk, db);

    auto a_freq = spatial_attention(x_freq_hat, params, prefix + ".attn_freq");
    auto a_spat = spatial_attention(x_spat_hat, params, prefix + ".attn_spat");
    auto attn_spat = add(mul_spatial_map(x_freq_hat, a_freq), mul_spatial_map(x_spat_hat, a_spat));

    auto a_chan = channel_attention(attn_spat, params, prefix + ".attn_chan");
    return mul_channel_scale(attn_spat, a_chan);
}

ValuePtr reconstruct_head(const ValuePtr& x, ModelParams& params, const std::string& prefix) {
    int C = x->t.dim(0);
    auto w1 = params.uniform_fan_in(prefix + ".pre_w", {C, C, 1, 1}, C);
    auto b1 = params.zeros(prefix + ".pre_b", {C});
    auto wt = params.uniform_fan_in(prefix + ".up_w", {C, C, 4, 4}, C * 16);
    auto bt = params.zeros(prefix + ".up_b", {C});
    auto w2 = params.uniform_fan_in(prefix + ".rgb_w", {3, C, 1, 1}, C);
    auto b2 = params.zeros(prefix + ".rgb_b", {3});
    auto h = conv2d(x, w1, b1, 1, 0);
    auto up = conv_transpose2d(h, wt, bt, 2, 1);
    return conv2d(up, w2, b2, 1, 0);
}

}  // namespace evr
