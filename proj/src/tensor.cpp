#include "evrwkv/tensor.hpp"

#include <cmath>

namespace evr {

bool Tensor::all_finite() const {
    for (double x : data)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace evr
