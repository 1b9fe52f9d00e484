// Acceptance gate: one test case per release criterion, each printing an
// explicit PASS/FAIL line so the verdicts survive in the test log.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <chrono>
#include <complex>
#include <cstdio>
#include <fstream>
#include <functional>
#include <type_traits>

#include "doctest.h"
#include "evrwkv/bench.hpp"
#include "evrwkv/config.hpp"
#include "evrwkv/cross_rwkv.hpp"
#include "evrwkv/eisfe.hpp"
#include "evrwkv/event.hpp"
#include "evrwkv/freq.hpp"
#include "evrwkv/image_io.hpp"
#include "evrwkv/losses.hpp"
#include "evrwkv/model.hpp"
#include "evrwkv/train.hpp"
#include "fixture.hpp"
#include "test_util.hpp"

using namespace evr;

namespace {

std::string fmt(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4g", v);
    return b;
}

template <class T, std::enable_if_t<std::is_integral_v<T>, int> = 0>
std::string fmt(T v) {
    return std::to_string(v);
}

void report(int n, const std::string& what, bool ok) {
    std::printf("[criterion %d] %s: %s\n", n, what.c_str(), ok ? "PASS" : "FAIL");
    std::fflush(stdout);
    CHECK_MESSAGE(ok, "criterion ", n, ": ", what);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ValuePtr P(ModelParams& p, const std::string& n, std::vector<int> shape, double lo = -1.0,
           double hi = 1.0) {
    return p.param(n, shape, [shape, lo, hi](std::mt19937_64& rng) {
        return Tensor::uniform(shape, lo, hi, rng);
    });
}

}  // namespace

TEST_CASE("criterion 1: wkv scan matches the quadratic oracle") {
    auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(100);
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
        int T = 1 + static_cast<int>(rng() % 256);
        int C = 1 + static_cast<int>(rng() % 8);
        Tensor k = Tensor::normal({T, C}, 0.0, 1.0, rng);
        Tensor v = Tensor::normal({T, C}, 0.0, 1.0, rng);
        wkv::WkvParams p;
        p.w = Tensor::uniform({C}, 0.1, 1.0, rng);
        p.u = Tensor::normal({C}, 0.0, 0.5, rng);
        Tensor a = wkv::bi_wkv_naive(k, v, p);
        Tensor b = wkv::bi_wkv_scan(k, v, p);
        for (std::int64_t i = 0; i < a.size(); ++i)
            worst = std::max(worst, testutil::rel_err(a[i], b[i], 1e-6));
    }
    double secs = seconds_since(t0);
    report(1, "scan vs naive, 100 cases, max rel err " + fmt(worst), worst < 1e-10);
    report(1, "runtime " + fmt(secs) + " s", secs < 10.0);
}

TEST_CASE("criterion 2: wkv runtime scaling") {
    auto t0 = std::chrono::steady_clock::now();
    BenchResult res = bench_wkv();
    double secs = seconds_since(t0);
    report(2, "scan log-log slope " + fmt(res.slope_scan), res.slope_scan < 1.3);
    report(2, "naive log-log slope " + fmt(res.slope_naive), res.slope_naive > 1.7);
    report(2, "piggybacked agreement " + fmt(res.max_rel_diff),
           res.max_rel_diff < 1e-8);
    report(2, "runtime " + fmt(secs) + " s", secs < 120.0);
}

TEST_CASE("criterion 3: finite-difference gradient suite") {
    auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_op = "-";

    // Every differentiable operation, then block compositions. Each builder
    // creates its operands as named parameters; the objective is a fixed
    // random weighting of the output so no gradient component can hide.
    using Builder = std::function<ValuePtr(ModelParams&)>;
    std::vector<std::pair<std::string, Builder>> cases;
    auto op = [&](const std::string& n, const Builder& b) { cases.emplace_back(n, b); };

    op("add", [](ModelParams& p) { return add(P(p, "a", {3, 4, 4}), P(p, "b", {3, 4, 4})); });
    op("sub", [](ModelParams& p) { return sub(P(p, "a", {3, 4, 4}), P(p, "b", {3, 4, 4})); });
    op("mul", [](ModelParams& p) { return mul(P(p, "a", {3, 4, 4}), P(p, "b", {3, 4, 4})); });
    op("div_ew", [](ModelParams& p) {
        return div_ew(P(p, "a", {3, 4, 4}), P(p, "b", {3, 4, 4}, 0.5, 1.5));
    });
    op("neg", [](ModelParams& p) { return neg(P(p, "a", {3, 4, 4})); });
    op("add_scalar", [](ModelParams& p) { return add_scalar(P(p, "a", {3, 4, 4}), 0.7); });
    op("mul_scalar", [](ModelParams& p) { return mul_scalar(P(p, "a", {3, 4, 4}), -1.3); });
    op("sigmoid", [](ModelParams& p) { return sigmoid(P(p, "a", {3, 4, 4}, -3, 3)); });
    op("squared_relu", [](ModelParams& p) { return squared_relu(P(p, "a", {3, 4, 4})); });
    op("leaky_relu", [](ModelParams& p) { return leaky_relu(P(p, "a", {3, 4, 4}), 0.1); });
    op("sqrt_ew", [](ModelParams& p) { return sqrt_ew(P(p, "a", {3, 4, 4}, 0.5, 2.0)); });
    op("abs_ew", [](ModelParams& p) { return abs_ew(P(p, "a", {3, 4, 4})); });
    op("clamp_min", [](ModelParams& p) { return clamp_min(P(p, "a", {3, 4, 4}, 0.3, 1.3), 0.0); });
    op("pow_const", [](ModelParams& p) { return pow_const(P(p, "a", {3, 4, 4}, 0.5, 2.0), 1.7); });
    op("sum", [](ModelParams& p) { return sum(P(p, "a", {3, 4, 4})); });
    op("mean", [](ModelParams& p) { return mean(P(p, "a", {3, 4, 4})); });
    op("reshape", [](ModelParams& p) { return reshape(P(p, "a", {2, 3, 4}), {4, 6}); });
    op("chw_to_tc", [](ModelParams& p) { return chw_to_tc(P(p, "a", {3, 4, 4})); });
    op("tc_to_chw", [](ModelParams& p) { return tc_to_chw(P(p, "a", {16, 3}), 4, 4); });
    op("concat_channels", [](ModelParams& p) {
        return concat_channels({P(p, "a", {2, 4, 4}), P(p, "b", {1, 4, 4})});
    });
    op("slice_channels", [](ModelParams& p) { return slice_channels(P(p, "a", {4, 4, 4}), 1, 3); });
    op("broadcast_row", [](ModelParams& p) { return broadcast_row(P(p, "v", {4}), 5); });
    op("mul_spatial_map", [](ModelParams& p) {
        return mul_spatial_map(P(p, "x", {3, 4, 4}), P(p, "m", {1, 4, 4}));
    });
    op("mul_channel_scale", [](ModelParams& p) {
        return mul_channel_scale(P(p, "x", {3, 4, 4}), P(p, "s", {3}));
    });
    op("scale_by_index", [](ModelParams& p) {
        return scale_by_index(P(p, "x", {3, 4, 4}), P(p, "v", {4}), 2);
    });
    op("matmul", [](ModelParams& p) { return matmul(P(p, "a", {5, 3}), P(p, "b", {3, 4})); });
    op("conv2d", [](ModelParams& p) {
        return conv2d(P(p, "x", {2, 6, 6}), P(p, "w", {3, 2, 3, 3}), P(p, "b", {3}), 1, 1);
    });
    op("conv2d stride 2", [](ModelParams& p) {
        return conv2d(P(p, "x", {2, 6, 6}), P(p, "w", {3, 2, 3, 3}), P(p, "b", {3}), 2, 1);
    });
    op("depthwise_conv2d", [](ModelParams& p) {
        return depthwise_conv2d(P(p, "x", {3, 6, 6}), P(p, "w", {3, 3, 3}), P(p, "b", {3}), 1, 1);
    });
    op("conv_transpose2d", [](ModelParams& p) {
        return conv_transpose2d(P(p, "x", {2, 4, 4}), P(p, "w", {2, 3, 2, 2}), P(p, "b", {3}), 2,
                                0);
    });
    op("layer_norm", [](ModelParams& p) {
        return layer_norm(P(p, "x", {6, 4}), P(p, "g", {4}, 0.5, 1.5), P(p, "b", {4}));
    });
    op("bilinear_sample", [](ModelParams& p) {
        return bilinear_sample(P(p, "x", {2, 5, 5}), P(p, "c", {2, 3, 3}, 0.3, 3.7));
    });
    op("avg_pool2", [](ModelParams& p) { return avg_pool2(P(p, "x", {2, 6, 6})); });
    op("global_avg_pool", [](ModelParams& p) { return global_avg_pool(P(p, "x", {3, 4, 4})); });
    op("channel_mean", [](ModelParams& p) { return channel_mean(P(p, "x", {3, 4, 4})); });
    op("channel_max", [](ModelParams& p) { return channel_max(P(p, "x", {3, 4, 4})); });
    op("re_wkv_node", [](ModelParams& p) {
        return wkv::re_wkv_node(P(p, "k", {2, 4, 4}), P(p, "v", {2, 4, 4}),
                                P(p, "wh", {2}, 0.2, 1.0), P(p, "uh", {2}),
                                P(p, "wv", {2}, 0.2, 1.0), P(p, "uv", {2}), 2);
    });
    op("adaptive_gaussian_filter", [](ModelParams& p) {
        return adaptive_gaussian_filter(P(p, "x", {2, 6, 6}), P(p, "s", {2}, 0.5, 2.0), 5);
    });
    op("deform_conv", [](ModelParams& p) {
        return deform_conv(P(p, "x", {2, 6, 6}), P(p, "o", {18, 6, 6}, -0.4, 0.4),
                           P(p, "w", {2, 2, 3, 3}), P(p, "b", {2}));
    });
    op("cross_rwkv_block", [](ModelParams& p) {
        CrossRwkvConfig cfg;
        cfg.base_channels = 4;
        auto [yi, ye] = cross_rwkv_block(P(p, "xi", {16, 4}), P(p, "xe", {16, 4}), 4, 4, p, "blk",
                                         cfg);
        return add(yi, ye);
    });
    op("eisfe_forward", [](ModelParams& p) {
        EisfeConfig cfg;
        cfg.gauss_K = 5;
        // pre-seed the offset predictor away from its zero init: integer
        // sampling points sit on the bilinear kink where differences fail
        P(p, "e.offset_w", {18, 4, 3, 3}, -0.05, 0.05);
        P(p, "e.offset_b", {18}, -0.05, 0.05);
        return eisfe_forward(P(p, "xi", {4, 8, 8}), P(p, "xe", {4, 8, 8}),
                             P(p, "xp", {4, 8, 8}), p, "e", cfg);
    });
    op("total_loss", [](ModelParams& p) {
        SsimConfig cfg;
        cfg.window = 5;
        cfg.sigma = 1.0;
        Tensor gt = testutil::randn({3, 8, 8}, 55, 0.2);
        for (double& v : gt.data) v = std::min(1.0, std::max(0.0, v + 0.5));
        return total_loss(P(p, "en", {3, 8, 8}, 0.1, 0.9), gt, LossWeights{}, cfg);
    });

    for (auto& [name, build] : cases) {
        ModelParams params;
        params.seed = 31;
        Tensor pattern = testutil::randn(build(params)->t.shape, 77);
        auto f = [&]() { return sum(mul(build(params), constant(pattern)))->t[0]; };
        auto loss = sum(mul(build(params), constant(pattern)));
        params.zero_grads();
        backward(loss);
        for (auto& [pname, v] : params.entries) {
            std::vector<std::int64_t> idx;
            std::int64_t n = v->t.size();
            for (std::int64_t i : {std::int64_t{0}, n / 2, n - 1})
                if (idx.empty() || idx.back() != i) idx.push_back(i);
            Tensor fd = finite_difference_gradient_sampled(params, pname, f, 1e-6, idx);
            for (std::int64_t i : idx) {
                double g = v->grad_allocated ? v->grad[i] : 0.0;
                double e = testutil::rel_err(g, fd[i]);
                if (e > worst) {
                    worst = e;
                    worst_op = name + "/" + pname;
                }
            }
        }
    }
    report(3, "operation and block sweep, worst rel err " + fmt(worst) + " at " +
                  worst_op,
           worst < 1e-4);

    RunConfig cfg;
    cfg.base_channels = 8;
    GradcheckReport rep = gradcheck_model(cfg, 16, 16, 3);
    report(3, "full-model gradcheck, worst rel err " + fmt(rep.worst),
           rep.worst < 1e-4);
    double secs = seconds_since(t0);
    report(3, "runtime " + fmt(secs) + " s", secs < 300.0);
}

TEST_CASE("criterion 4: spectral and sampling oracles") {
    // fft2 against the quartic direct DFT
    std::mt19937_64 rng(4);
    int H = 16, W = 16;
    std::vector<std::complex<double>> a(H * W);
    std::normal_distribution<double> nd;
    for (auto& z : a) z = {nd(rng), nd(rng)};
    std::vector<std::complex<double>> ref(H * W);
    for (int u = 0; u < H; ++u)
        for (int v = 0; v < W; ++v) {
            std::complex<double> s = 0.0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    s += a[y * W + x] *
                         std::exp(std::complex<double>(
                             0, -2.0 * 3.14159265358979323846 * (double(u) * y / H + double(v) * x / W)));
            ref[u * W + v] = s;
        }
    std::vector<std::complex<double>> got = fft2(a, H, W);
    double fft_err = 0.0;
    for (int i = 0; i < H * W; ++i) fft_err = std::max(fft_err, std::abs(got[i] - ref[i]));
    report(4, "fft2 vs direct DFT, max abs err " + fmt(fft_err), fft_err < 1e-9);

    // adaptive Gaussian filter against direct windowed spatial convolution
    Tensor x = testutil::randn({2, 13, 9}, 41);
    std::vector<double> sigma = {0.8, 1.7};
    int K = 7;
    Tensor got_f = adaptive_gaussian_filter_plain(x, sigma, K);
    Tensor ref_f = Tensor::zeros(x.shape);
    for (int c = 0; c < 2; ++c) {
        Tensor g = gaussian_kernel(sigma[c], K);
        for (int y = 0; y < 13; ++y)
            for (int xx = 0; xx < 9; ++xx) {
                double num = 0.0, den = 0.0;
                for (int dy = -K / 2; dy <= K / 2; ++dy)
                    for (int dx = -K / 2; dx <= K / 2; ++dx) {
                        int yy = y + dy, xc = xx + dx;
                        if (yy < 0 || yy >= 13 || xc < 0 || xc >= 9) continue;
                        double gw = g[(dy + K / 2) * K + (dx + K / 2)];
                        num += gw * x.at3(c, yy, xc);
                        den += gw;
                    }
                ref_f.at3(c, y, xx) = num / den;
            }
    }
    double filt_err = testutil::max_abs_diff(got_f, ref_f);
    report(4, "gaussian filter vs spatial oracle, max abs err " + fmt(filt_err),
           filt_err < 1e-8);

    Tensor flat({3, 13, 9}, 0.37);
    Tensor dc = adaptive_gaussian_filter_plain(flat, {0.5, 1.0, 3.0}, 11);
    double dc_err = 0.0;
    for (double v : dc.data) dc_err = std::max(dc_err, std::abs(v - 0.37) / 0.37);
    report(4, "constant image preserved, max rel err " + fmt(dc_err), dc_err < 1e-9);

    // deformable conv degenerates to ordinary conv at zero offsets, bit-exactly
    auto xin = leaf(testutil::randn({3, 8, 8}, 42), true);
    auto w = leaf(testutil::randn({4, 3, 3, 3}, 43), true);
    auto b = leaf(testutil::randn({4}, 44), true);
    auto zero_off = constant(Tensor::zeros({18, 8, 8}));
    double dmax = testutil::max_abs_diff(deform_conv(xin, zero_off, w, b)->t,
                                         conv2d(xin, w, b, 1, 1)->t);
    report(4, "deformable conv at zero offsets equals conv", dmax == 0.0);
}

TEST_CASE("criterion 5: metric sanity") {
    Tensor x = testutil::randn({3, 24, 24}, 5, 0.2);
    for (double& v : x.data) v = std::min(1.0, std::max(0.0, v + 0.5));
    double s = ssim_metric(x, x);
    report(5, "SSIM(x,x) = " + fmt(s), std::abs(s - 1.0) < 1e-12);

    Tensor big = testutil::randn({3, 176, 176}, 6, 0.2);
    for (double& v : big.data) v = std::min(1.0, std::max(0.0, v + 0.5));
    double ms = ms_ssim_metric(big, big);
    report(5, "MS-SSIM(x,x) = " + fmt(ms), std::abs(ms - 1.0) < 1e-9);

    double wsum = 0.0;
    for (double wj : SsimConfig{}.ms_weights) wsum += wj;
    report(5, "MS-SSIM weights sum " + fmt(wsum), std::abs(wsum - 1.0) < 1e-6);

    double floor = charbonnier(constant(x), x)->t[0];
    report(5, "Charbonnier floor " + fmt(floor), std::abs(floor - 1e-4) < 1e-12);

    Tensor y = x;
    for (double& v : y.data) v += 0.1;
    double p = psnr(x, y);
    report(5, "PSNR at uniform diff 0.1 = " + fmt(p), std::abs(p - 20.0) < 1e-9);
}

TEST_CASE("criterion 6: voxel polarity conservation") {
    RunConfig defaults;
    report(6, "default bin count is 32", defaults.bins == 32);
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(900 + seed);
        EventStream s;
        s.width = 31;
        s.height = 23;
        std::uint64_t t = rng() % 50;
        for (int i = 0; i < 1000; ++i) {
            s.events.push_back({t, static_cast<std::uint16_t>(rng() % s.width),
                                static_cast<std::uint16_t>(rng() % s.height),
                                static_cast<std::int8_t>(rng() % 2 ? 1 : -1)});
            t += rng() % 37;
        }
        VoxelGrid g = voxelize(s, defaults.bins, s.height, s.width);
        double pol = 0.0, mass = 0.0;
        for (const Event& e : s.events) pol += e.polarity;
        for (double v : g.data.data) mass += v;
        worst = std::max(worst, std::abs(mass - pol));
        CHECK(g.data.dim(0) == 32);
    }
    report(6, "sum(voxel) == sum(polarity), worst abs err " + fmt(worst),
           worst < 1e-9);
}

TEST_CASE("criterion 7: toy overfit gains 10 dB") {
    auto t0 = std::chrono::steady_clock::now();
    for (std::uint64_t seed : {0, 1, 2}) {
        RunConfig cfg;
        cfg.seed = seed;
        auto fx = fixture::make_pair(64, 64, seed);
        Tensor voxel = fixture::make_voxel(fx, cfg.bins);
        ToyResult r = train_toy(fx.low, fx.sharp, voxel, cfg, nullptr, 10.0);
        double gain = r.psnr_final - r.psnr_initial;
        report(7, "seed " + fmt(seed) + ": " + fmt(r.psnr_initial) +
                      " -> " + fmt(r.psnr_final) + " dB in " +
                      fmt(r.steps_run) + " steps",
               gain >= 10.0 && r.steps_run <= 500);
    }
    double secs = seconds_since(t0);
    report(7, "runtime " + fmt(secs) + " s", secs < 600.0);
}

TEST_CASE("criterion 8: ablation matrix") {
    auto fx = fixture::make_pair(32, 32, 8);
    bool shapes_ok = true, grads_ok = true;
    for (int mask = 0; mask < 16; ++mask) {
        RunConfig cfg;
        cfg.base_channels = 8;
        cfg.use_eisfe = (mask & 1) != 0;
        cfg.use_spatial_mix = (mask & 2) != 0;
        cfg.use_channel_mix = (mask & 4) != 0;
        cfg.use_msssim_loss = (mask & 8) != 0;
        Tensor voxel = fixture::make_voxel(fx, cfg.bins);
        ModelParams params;
        params.seed = cfg.seed;
        auto en = enhance_forward(fx.low, voxel, params, cfg);
        if (en->t.shape != std::vector<int>{3, 32, 32} || !en->t.all_finite()) shapes_ok = false;
        GradcheckReport rep = gradcheck_model(cfg, 16, 16, 2);
        if (!rep.pass) {
            grads_ok = false;
            std::printf("  gradcheck FAIL at mask %d, worst %g\n", mask, rep.worst);
        }
    }
    report(8, "all 16 flag combinations produce valid output", shapes_ok);
    report(8, "all 16 flag combinations pass gradcheck", grads_ok);

    for (const char* which : {"eisfe", "spatial", "channel"}) {
        RunConfig cfg;
        auto fx64 = fixture::make_pair(64, 64, 0);
        if (std::string(which) == "eisfe") cfg.use_eisfe = false;
        if (std::string(which) == "spatial") cfg.use_spatial_mix = false;
        if (std::string(which) == "channel") cfg.use_channel_mix = false;
        Tensor voxel = fixture::make_voxel(fx64, cfg.bins);
        ToyResult r = train_toy(fx64.low, fx64.sharp, voxel, cfg, nullptr, 6.0);
        double gain = r.psnr_final - r.psnr_initial;
        report(8, std::string("no-") + which + " overfit gain " + fmt(gain) + " dB",
               gain >= 6.0);
    }
}

TEST_CASE("criterion 9: bit-identical enhancement under a fixed seed") {
    RunConfig cfg;
    cfg.base_channels = 8;
    cfg.seed = 9;
    auto fx = fixture::make_pair(32, 32, 9);
    Tensor voxel = fixture::make_voxel(fx, cfg.bins);
    auto run_once = [&](const std::string& path) {
        ModelParams params;
        params.seed = cfg.seed;
        write_image(path, clamp01(enhance_forward(fx.low, voxel, params, cfg)->t));
        std::ifstream in(path, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    std::string b1 = run_once("acceptance_run1.ppm");
    std::string b2 = run_once("acceptance_run2.ppm");
    report(9, "two runs, " + fmt(b1.size()) + " bytes each",
           !b1.empty() && b1 == b2);
    std::remove("acceptance_run1.ppm");
    std::remove("acceptance_run2.ppm");
}
