#pragma once

// Synthetic enhancement fixture: a smooth sharp image, a gamma-darkened and
// noised low-light copy, and an event stream synthesized from intensity
// differences of horizontally shifted copies of the sharp image.

#include <cmath>
#include <random>

#include "evrwkv/event.hpp"
#include "evrwkv/tensor.hpp"

namespace fixture {

struct Pair {
    evr::Tensor sharp;  // (3,H,W) in [0.05, 0.95]
    evr::Tensor low;    // (3,H,W) darkened + noised
    evr::EventStream events;
};

inline Pair make_pair(int H, int W, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ph(0.0, 6.28318530717958647692);
    const double p1 = ph(rng), p2 = ph(rng), p3 = ph(rng);
    const double tau = 6.28318530717958647692;

    Pair out;
    out.sharp = evr::Tensor::zeros({3, H, W});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                out.sharp[(static_cast<std::int64_t>(c) * H + y) * W + x] =
                    0.55 +
                    0.25 * std::sin(tau * (x + 2 * c) * 3.0 / W + p1) *
                        std::cos(tau * y * 2.0 / H + p2) +
                    0.15 * std::sin(tau * (x + y + c) * 4.0 / (H + W) + p3);
    for (double& v : out.sharp.data) v = std::min(0.95, std::max(0.05, v));

    out.low = out.sharp;
    std::normal_distribution<double> noise(0.0, 0.02);
    for (double& v : out.low.data)
        v = std::min(1.0, std::max(0.0, std::pow(v, 2.2) * 0.2 + noise(rng)));

    // Events: threshold the luma difference between the sharp image and a copy
    // shifted by 1..3 pixels; each shift occupies one slice of the time window.
    out.events.width = W;
    out.events.height = H;
    auto luma = [&](int y, int x) {
        double l = 0.0;
        for (int c = 0; c < 3; ++c)
            l += out.sharp[(static_cast<std::int64_t>(c) * H + y) * W + x];
        return l / 3.0;
    };
    std::uint64_t t = 0;
    for (int s = 1; s <= 3; ++s) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double d = luma(y, (x + s) % W) - luma(y, x);
                if (std::abs(d) > 0.05)
                    out.events.events.push_back({t, static_cast<std::uint16_t>(x),
                                                 static_cast<std::uint16_t>(y),
                                                 static_cast<std::int8_t>(d > 0 ? 1 : -1)});
                t += 7;  // microseconds between emitted events
            }
    }
    return out;
}

inline evr::Tensor make_voxel(const Pair& p, int bins, const std::string& norm = "max_abs") {
    evr::VoxelGrid g = evr::voxelize(p.events, bins, p.events.height, p.events.width);
    evr::VoxelNorm m = norm == "none"          ? evr::VoxelNorm::none
                       : norm == "std_nonzero" ? evr::VoxelNorm::std_nonzero
                                               : evr::VoxelNorm::max_abs;
    return evr::normalize_voxel(g, m).data;
}

}  // namespace fixture
