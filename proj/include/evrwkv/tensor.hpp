#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace evr {

// Dense row-major tensor of doubles. Images are channel-first (C,H,W);
// token sequences are (T,C) with T = H*W in raster order.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0)
        : shape(std::move(s)), data(static_cast<std::size_t>(count(shape)), fill) {}

    static std::int64_t count(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int e : s) {
            if (e < 0) throw std::invalid_argument("negative tensor extent");
            n *= e;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s), 0.0); }
    static Tensor full(std::vector<int> s, double v) { return Tensor(std::move(s), v); }
    static Tensor scalar(double v) { return Tensor({1}, v); }

    static Tensor uniform(std::vector<int> s, double lo, double hi, std::mt19937_64& rng) {
        Tensor t(std::move(s));
        std::uniform_real_distribution<double> dist(lo, hi);
        for (double& x : t.data) x = dist(rng);
        return t;
    }
    static Tensor normal(std::vector<int> s, double mean, double stddev, std::mt19937_64& rng) {
        Tensor t(std::move(s));
        std::normal_distribution<double> dist(mean, stddev);
        for (double& x : t.data) x = dist(rng);
        return t;
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // (C,H,W) indexing
    double& at3(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double at3(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    // (R,C) indexing
    double& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
    double at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    double max_abs() const {
        double m = 0.0;
        for (double x : data) m = std::max(m, std::abs(x));
        return m;
    }
    double sum() const { return std::accumulate(data.begin(), data.end(), 0.0); }

    bool all_finite() const;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

}  // namespace evr
