#include "evrwkv/params.hpp"

#include <cmath>
#include <stdexcept>

namespace evr {

ValuePtr ModelParams::param(const std::string& path, const std::vector<int>& shape,
                            const std::function<Tensor(std::mt19937_64&)>& init) {
    auto it = entries.find(path);
    if (it != entries.end()) {
        if (it->second->t.shape != shape)
            throw std::invalid_argument("param " + path + ": shape changed between requests");
        return it->second;
    }
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + std::hash<std::string>{}(path));
    auto v = leaf(init(rng), /*requires_grad=*/true);
    entries.emplace(path, v);
    return v;
}

ValuePtr ModelParams::uniform_fan_in(const std::string& path, const std::vector<int>& shape,
                                     int fan_in) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return param(path, shape,
                 [shape, bound](std::mt19937_64& rng) { return Tensor::uniform(shape, -bound, bound, rng); });
}

ValuePtr ModelParams::zeros(const std::string& path, const std::vector<int>& shape) {
    return param(path, shape, [shape](std::mt19937_64&) { return Tensor::zeros(shape); });
}

ValuePtr ModelParams::constant_fill(const std::string& path, const std::vector<int>& shape,
                                    double v) {
    return param(path, shape, [shape, v](std::mt19937_64&) { return Tensor::full(shape, v); });
}

ValuePtr ModelParams::decay_init(const std::string& path, const std::vector<int>& shape) {
    return param(path, shape,
                 [shape](std::mt19937_64& rng) { return Tensor::uniform(shape, 0.1, 1.0, rng); });
}

ValuePtr ModelParams::at(const std::string& path) const {
    auto it = entries.find(path);
    if (it == entries.end()) throw std::out_of_range("no parameter named " + path);
    return it->second;
}

void ModelParams::zero_grads() {
    for (auto& [name, v] : entries) v->zero_grad();
}

std::int64_t ModelParams::total_count() const {
    std::int64_t n = 0;
    for (const auto& [name, v] : entries) n += v->t.size();
    return n;
}

Tensor finite_difference_gradient(ModelParams& params, const std::string& path,
                                  const std::function<double()>& f, double h) {
    auto p = params.at(path);
    std::vector<std::int64_t> all(static_cast<std::size_t>(p->t.size()));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
    return finite_difference_gradient_sampled(params, path, f, h, all);
}

Tensor finite_difference_gradient_sampled(ModelParams& params, const std::string& path,
                                          const std::function<double()>& f, double h,
                                          const std::vector<std::int64_t>& indices) {
    if (h < 1e-7 || h > 1e-4)
        throw std::invalid_argument("finite_difference_gradient: h must be in [1e-7, 1e-4]");
    auto p = params.at(path);
    Tensor g = Tensor::zeros(p->t.shape);
    for (std::int64_t i : indices) {
        double saved = p->t[i];
        p->t[i] = saved + h;
        double fp = f();
        p->t[i] = saved - h;
        double fm = f();
        p->t[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_difference_gradient: non-finite objective at " + path);
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace evr
