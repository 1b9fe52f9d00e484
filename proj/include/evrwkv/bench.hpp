#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evr {

struct BenchRow {
    std::string impl;
    int T;
    int C;
    double seconds;
};

struct BenchResult {
    std::vector<BenchRow> rows;
    double slope_naive = 0.0;  // fitted log-log runtime slope
    double slope_scan = 0.0;
    double max_rel_diff = 0.0;  // scan vs naive agreement during the runs

    std::string csv() const;
};

// Times bi_wkv_naive vs bi_wkv_scan (one warm run discarded, median of
// `reps`) and fits least-squares slopes of log(seconds) against log(T).
BenchResult bench_wkv(const std::vector<int>& Ts = {256, 512, 1024, 2048, 4096}, int C = 32,
                      int reps = 5, std::uint64_t seed = 0);

}  // namespace evr
