#pragma once

#include <functional>
#include <map>
#include <string>

#include "evrwkv/graph.hpp"

namespace evr {

// Named collection of learnable arrays. Iteration order is the sorted path
// order of the map. Each parameter is created once, seeded independently from
// (global seed, path name), so creation order does not affect initialization.
struct ModelParams {
    std::map<std::string, ValuePtr> entries;
    std::uint64_t seed = 0;

    // Returns the existing parameter or creates it via init(rng).
    ValuePtr param(const std::string& path, const std::vector<int>& shape,
                   const std::function<Tensor(std::mt19937_64&)>& init);

    // Common initializers
    ValuePtr uniform_fan_in(const std::string& path, const std::vector<int>& shape, int fan_in);
    ValuePtr zeros(const std::string& path, const std::vector<int>& shape);
    ValuePtr constant_fill(const std::string& path, const std::vector<int>& shape, double v);
    ValuePtr decay_init(const std::string& path, const std::vector<int>& shape);  // uniform [0.1,1]

    ValuePtr at(const std::string& path) const;
    void zero_grads();
    std::int64_t total_count() const;
};

// Central finite differences (f(th+h)-f(th-h))/(2h), elementwise over the
// named parameter. f rebuilds the forward graph on every call. h must lie in
// [1e-7, 1e-4]. Throws on non-finite objective values.
Tensor finite_difference_gradient(ModelParams& params, const std::string& path,
                                  const std::function<double()>& f, double h);

// Same, restricted to a subset of flat indices (others left zero).
Tensor finite_difference_gradient_sampled(ModelParams& params, const std::string& path,
                                          const std::function<double()>& f, double h,
                                          const std::vector<std::int64_t>& indices);

}  // namespace evr
