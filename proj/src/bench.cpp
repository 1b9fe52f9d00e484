#include "evrwkv/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "evrwkv/wkv.hpp"

namespace evr {

namespace {

double median_time(const std::function<void()>& fn, int reps) {
    fn();  // warm run
    std::vector<double> times;
    for (int r = 0; r < reps; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

double fit_slope(const std::vector<int>& Ts, const std::vector<double>& secs) {
    double n = static_cast<double>(Ts.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < Ts.size(); ++i) {
        double x = std::log(static_cast<double>(Ts[i]));
        double y = std::log(secs[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

std::string BenchResult::csv() const {
    std::ostringstream out;
    out << "impl,T,C,seconds\n";
    for (const auto& r : rows) out << r.impl << "," << r.T << "," << r.C << "," << r.seconds << "\n";
    return out.str();
}

BenchResult bench_wkv(const std::vector<int>& Ts, int C, int reps, std::uint64_t seed) {
    BenchResult res;
    std::vector<double> naive_secs, scan_secs;
    std::mt19937_64 rng(seed);
    for (int T : Ts) {
        Tensor k = Tensor::normal({T, C}, 0.0, 1.0, rng);
        Tensor v = Tensor::normal({T, C}, 0.0, 1.0, rng);
        wkv::WkvParams p;
        p.w = Tensor::uniform({C}, 0.1, 1.0, rng);
        p.u = Tensor::normal({C}, 0.0, 0.5, rng);
        Tensor out_naive, out_scan;
        double tn = median_time([&]() { out_naive = wkv::bi_wkv_naive(k, v, p); }, reps);
        double ts = median_time([&]() { out_scan = wkv::bi_wkv_scan(k, v, p); }, reps);
        for (std::int64_t i = 0; i < out_naive.size(); ++i) {
            double d = std::abs(out_naive[i] - out_scan[i]) /
                       std::max({std::abs(out_naive[i]), std::abs(out_scan[i]), 1e-12});
            res.max_rel_diff = std::max(res.max_rel_diff, d);
        }
        res.rows.push_back({"naive", T, C, tn});
        res.rows.push_back({"scan", T, C, ts});
        naive_secs.push_back(tn);
        scan_secs.push_back(ts);
    }
    res.slope_naive = fit_slope(Ts, naive_secs);
    res.slope_scan = fit_slope(Ts, scan_secs);
    return res;
}

}  // namespace evr
