#include "evrwkv/cross_rwkv.hpp"

namespace evr {

namespace {

// identity, then depthwise k=1/3/5, all on the token grid
std::vector<ValuePtr> shift_branches(const ValuePtr& x, int H, int W, ModelParams& params,
                                     const std::string& prefix) {
    int C = x->t.dim(1);
    auto grid = tc_to_chw(x, H, W);
    std::vector<ValuePtr> out = {x};
    for (int k : {1, 3, 5}) {
        auto w = params.uniform_fan_in(prefix + ".k" + std::to_string(k) + "_w", {C, k, k}, k * k);
        auto b = params.zeros(prefix + ".k" + std::to_string(k) + "_b", {C});
        out.push_back(chw_to_tc(depthwise_conv2d(grid, w, b, 1, k / 2)));
    }
    return out;
}

ValuePtr weighted_sum(const std::vector<ValuePtr>& branches, const ValuePtr& w) {
    ValuePtr acc = scale_by_index(branches[0], w, 0);
    for (int i = 1; i < 4; ++i) acc = add(acc, scale_by_index(branches[static_cast<std::size_t>(i)], w, i));
    return acc;
}

// depthwise 3x3 then pointwise 1x1, token view in and out
ValuePtr dpconv(const ValuePtr& x, int H, int W, ModelParams& params, const std::string& prefix) {
    int C = x->t.dim(1);
    auto grid = tc_to_chw(x, H, W);
    auto dw = params.uniform_fan_in(prefix + ".dw_w", {C, 3, 3}, 9);
    auto db = params.zeros(prefix + ".dw_b", {C});
    auto pw = params.uniform_fan_in(prefix + ".pw_w", {C, C, 1, 1}, C);
    auto pb = params.zeros(prefix + ".pw_b", {C});
    return chw_to_tc(conv2d(depthwise_conv2d(grid, dw, db, 1, 1), pw, pb, 1, 0));
}

ValuePtr rewkv_tokens(const ValuePtr& k, const ValuePtr& v, int H, int W, ModelParams& params,
                      const std::string& prefix, const CrossRwkvConfig& cfg) {
    int C = k->t.dim(1);
    auto wh = params.decay_init(prefix + ".wh", {C});
    auto uh = params.zeros(prefix + ".uh", {C});
    auto wv = params.decay_init(prefix + ".wv", {C});
    auto uv = params.zeros(prefix + ".uv", {C});
    auto out = wkv::re_wkv_node(tc_to_chw(k, H, W), tc_to_chw(v, H, W), wh, uh, wv, uv,
                                cfg.rewkv_iterations, cfg.exponent);
    return chw_to_tc(out);
}

ValuePtr dense(ModelParams& params, const std::string& path, int C) {
    return params.uniform_fan_in(path, {C, C}, C);
}

// sigmoid(alpha) broadcast over tokens
ValuePtr gate_mix(const ValuePtr& wkv_out, const ValuePtr& other, const ValuePtr& alpha, int T) {
    auto g = broadcast_row(sigmoid(alpha), T);
    auto one_minus = add_scalar(neg(g), 1.0);
    return add(mul(g, wkv_out), mul(one_minus, other));
}

}  // namespace

std::pair<ValuePtr, ValuePtr> cs_shift(const ValuePtr& x_img, const ValuePtr& x_ev, int H, int W,
                                       ModelParams& params, const std::string& prefix,
                                       bool cross) {
    check_same_shape(x_img->t, x_ev->t, "cs_shift");
    auto bi = shift_branches(x_img, H, W, params, prefix + ".img");
    auto be = shift_branches(x_ev, H, W, params, prefix + ".ev");
    auto wi = params.constant_fill(prefix + ".img.w", {4}, 0.25);
    auto we = params.constant_fill(prefix + ".ev.w", {4}, 0.25);
    ValuePtr out_img = weighted_sum(bi, wi);
    ValuePtr out_ev = weighted_sum(be, we);
    if (cross) {
        out_img = add(out_img, weighted_sum(be, wi));
        out_ev = add(out_ev, weighted_sum(bi, we));
    }
    return {out_img, out_ev};
}

std::pair<ValuePtr, ValuePtr> spatial_mix(const ValuePtr& x_img, const ValuePtr& x_ev, int H,
                                          int W, ModelParams& params, const std::string& prefix,
                                          const CrossRwkvConfig& cfg) {
    int T = x_img->t.dim(0), C = x_img->t.dim(1);
    auto g1 = params.constant_fill(prefix + ".ln1_g", {C}, 1.0);
    auto b1 = params.zeros(prefix + ".ln1_b", {C});
    auto g2 = params.constant_fill(prefix + ".ln2_g", {C}, 1.0);
    auto b2 = params.zeros(prefix + ".ln2_b", {C});
    auto [s_img, s_ev] = cs_shift(layer_norm(x_img, g1, b1), layer_norm(x_ev, g2, b2), H, W,
                                  params, prefix + ".shift", cfg.cs_shift_cross);

    auto k_img = dpconv(s_img, H, W, params, prefix + ".key_img");
    auto k_ev = dpconv(s_ev, H, W, params, prefix + ".key_ev");
    auto v_img = matmul(s_img, dense(params, prefix + ".wv_img", C));
    auto r_img = matmul(s_img, dense(params, prefix + ".wr_img", C));
    auto v_ev = matmul(s_ev, dense(params, prefix + ".wv_ev", C));
    auto r_ev = matmul(s_ev, dense(params, prefix + ".wr_ev", C));

    // cross-modal key exchange
    auto wkv_img = rewkv_tokens(k_ev, v_img, H, W, params, prefix + ".wkv_img", cfg);
    auto wkv_ev = rewkv_tokens(k_img, v_ev, H, W, params, prefix + ".wkv_ev", cfg);

    auto alpha_img = params.zeros(prefix + ".alpha_img", {C});
    auto alpha_evt = params.zeros(prefix + ".alpha_evt", {C});
    auto x1 = gate_mix(wkv_img, x_ev, alpha_img, T);
    auto x2 = gate_mix(wkv_ev, x_img, alpha_evt, T);

    auto o_img = matmul(mul(sigmoid(r_img), x1), dense(params, prefix + ".wo_img", C));
    auto o_ev = matmul(mul(sigmoid(r_ev), x2), dense(params, prefix + ".wo_ev", C));
    if (cfg.residual) {
        o_img = add(x_img, o_img);
        o_ev = add(x_ev, o_ev);
    }
    return {o_img, o_ev};
}

ValuePtr channel_mix(const ValuePtr& x_img, int H, int W, ModelParams& params,
                     const std::string& prefix, const CrossRwkvConfig& cfg) {
    int C = x_img->t.dim(1);
    int Ch = cfg.hidden_ratio * C;
    auto cw = params.uniform_fan_in(prefix + ".conv_w", {C, C, 1, 1}, C);
    auto cb = params.zeros(prefix + ".conv_b", {C});
    auto pre = chw_to_tc(conv2d(tc_to_chw(x_img, H, W), cw, cb, 1, 0));
    auto branches = shift_branches(pre, H, W, params, prefix + ".omni");
    auto bw = params.constant_fill(prefix + ".omni.w", {4}, 0.25);
    auto xc = weighted_sum(branches, bw);

    auto wk = params.uniform_fan_in(prefix + ".wk", {C, Ch}, C);
    auto wv = params.uniform_fan_in(prefix + ".wvv", {Ch, C}, Ch);
    auto wr = params.uniform_fan_in(prefix + ".wr", {C, C}, C);
    auto kc = squared_relu(matmul(xc, wk));
    auto vc = matmul(kc, wv);
    auto rc = sigmoid(matmul(xc, wr));
    auto oc = mul(rc, vc);
    return cfg.residual ? add(x_img, oc) : oc;
}

std::pair<ValuePtr, ValuePtr> cross_rwkv_block(const ValuePtr& x_img, const ValuePtr& x_ev, int H,
                                               int W, ModelParams& params,
                                               const std::string& prefix,
                                               const CrossRwkvConfig& cfg) {
    ValuePtr oi = x_img, oe = x_ev;
    if (cfg.use_spatial_mix) {
        auto [a, b] = spatial_mix(oi, oe, H, W, params, prefix + ".smix", cfg);
        oi = a;
        oe = b;
    }
    if (cfg.use_channel_mix) oi = channel_mix(oi, H, W, params, prefix + ".cmix", cfg);
    return {oi, oe};
}

namespace {

std::pair<ValuePtr, ValuePtr> block_grid(const ValuePtr& gi, const ValuePtr& ge,
                                         ModelParams& params, const std::string& prefix,
                                         const CrossRwkvConfig& cfg) {
    int H = gi->t.dim(1), W = gi->t.dim(2);
    auto [oi, oe] = cross_rwkv_block(chw_to_tc(gi), chw_to_tc(ge), H, W, params, prefix, cfg);
    return {tc_to_chw(oi, H, W), tc_to_chw(oe, H, W)};
}

ValuePtr down(const ValuePtr& g, int Cout, ModelParams& params, const std::string& path) {
    int Cin = g->t.dim(0);
    auto w = params.uniform_fan_in(path + "_w", {Cout, Cin, 3, 3}, Cin * 9);
    auto b = params.zeros(path + "_b", {Cout});
    return conv2d(g, w, b, 2, 1);
}

ValuePtr up(const ValuePtr& g, int Cout, ModelParams& params, const std::string& path) {
    int Cin = g->t.dim(0);
    auto w = params.uniform_fan_in(path + "_w", {Cin, Cout, 2, 2}, Cin * 4);
    auto b = params.zeros(path + "_b", {Cout});
    return conv_transpose2d(g, w, b, 2, 0);
}

ValuePtr fuse_skip(const ValuePtr& g, const ValuePtr& skip, int Cout, ModelParams& params,
                   const std::string& path) {
    auto cat = concat_channels({g, skip});
    auto w = params.uniform_fan_in(path + "_w", {Cout, 2 * Cout, 1, 1}, 2 * Cout);
    auto b = params.zeros(path + "_b", {Cout});
    return conv2d(cat, w, b, 1, 0);
}

}  // namespace

std::pair<ValuePtr, ValuePtr> unet_forward(const ValuePtr& x_img, const ValuePtr& x_ev,
                                           ModelParams& params, const std::string& prefix,
                                           const CrossRwkvConfig& cfg) {
    check_same_shape(x_img->t, x_ev->t, "unet_forward");
    int C = x_img->t.dim(0), H = x_img->t.dim(1), W = x_img->t.dim(2);
    int levels = static_cast<int>(cfg.channel_mult.size());
    int div = 1 << (levels - 1);
    if (H % div != 0 || W % div != 0)
        throw std::invalid_argument("unet_forward: extents " + x_img->t.shape_str() +
                                    " not divisible by " + std::to_string(div));
    if (C != cfg.base_channels * cfg.channel_mult[0])
        throw std::invalid_argument("unet_forward: expected " +
                                    std::to_string(cfg.base_channels * cfg.channel_mult[0]) +
                                    " input channels, got " + std::to_string(C));

    ValuePtr gi = x_img, ge = x_ev;
    std::vector<ValuePtr> skip_i, skip_e;
    for (int l = 0; l + 1 < levels; ++l) {
        std::string lp = prefix + ".enc" + std::to_string(l);
        auto [bi, be] = block_grid(gi, ge, params, lp, cfg);
        skip_i.push_back(bi);
        skip_e.push_back(be);
        int Cn = cfg.base_channels * cfg.channel_mult[static_cast<std::size_t>(l + 1)];
        gi = down(bi, Cn, params, lp + ".down_img");
        ge = down(be, Cn, params, lp + ".down_ev");
    }
    {
        auto [bi, be] = block_grid(gi, ge, params, prefix + ".mid", cfg);
        gi = bi;
        ge = be;
    }
    for (int l = levels - 2; l >= 0; --l) {
        std::string lp = prefix + ".dec" + std::to_string(l);
        int Cl = cfg.base_channels * cfg.channel_mult[static_cast<std::size_t>(l)];
        gi = fuse_skip(up(gi, Cl, params, lp + ".up_img"), skip_i[static_cast<std::size_t>(l)],
                       Cl, params, lp + ".fuse_img");
        ge = fuse_skip(up(ge, Cl, params, lp + ".up_ev"), skip_e[static_cast<std::size_t>(l)],
                       Cl, params, lp + ".fuse_ev");
        auto [bi, be] = block_grid(gi, ge, params, lp, cfg);
        gi = bi;
        ge = be;
    }
    auto cat = concat_channels({gi, ge});
    auto w = params.uniform_fan_in(prefix + ".split_w", {2 * C, 2 * C, 3, 3}, 2 * C * 9);
    auto b = params.zeros(prefix + ".split_b", {2 * C});
    auto out = conv2d(cat, w, b, 1, 1);
    return {slice_channels(out, 0, C), slice_channels(out, C, 2 * C)};
}

}  // namespace evr
