#pragma once

#include "evrwkv/graph.hpp"
#include "evrwkv/tensor.hpp"

namespace evr::wkv {

// Exponent grouping for the pairwise attention weight of token i seen from t
// (d = |t-i|-1):
//   vrwkv:   exp(-d/T * w + k_i)        decay applies to w only (default)
//   grouped: exp(-d/T * (w + k_i))      literal reading, keys decay with distance
enum class Exponent { vrwkv, grouped };

struct WkvParams {
    Tensor w;  // (C), per-channel decay, must be positive
    Tensor u;  // (C), current-token bonus
};

struct WkvGrads {
    Tensor dk, dv, dw, du;
};

// O(T^2) reference. Stabilized by per-channel global max subtraction.
Tensor bi_wkv_naive(const Tensor& k, const Tensor& v, const WkvParams& p,
                    Exponent e = Exponent::vrwkv);

// O(T) two-pass directional scan in log-sum-exp form; bit-for-bit independent
// of any parallelization because no cross-sequence reduction exists.
// The grouped convention has per-token decay rates and admits no uniform-decay
// scan; it falls back to the naive path.
Tensor bi_wkv_scan(const Tensor& k, const Tensor& v, const WkvParams& p,
                   Exponent e = Exponent::vrwkv);

// O(T^2) reference backward (both conventions).
WkvGrads bi_wkv_backward_naive(const Tensor& k, const Tensor& v, const WkvParams& p,
                               const Tensor& upstream, Exponent e = Exponent::vrwkv);

// O(T) scan backward (vrwkv only).
WkvGrads bi_wkv_backward_scan(const Tensor& k, const Tensor& v, const WkvParams& p,
                              const Tensor& upstream);

// Recurrent 2D application: iteration 0 scans rows (length W), iteration 1
// scans columns (length H), alternating; k is reused per direction, the
// output becomes v for the next iteration.
Tensor re_wkv_2d(const Tensor& k, const Tensor& v, const WkvParams& ph, const WkvParams& pv,
                 int iterations, Exponent e = Exponent::vrwkv);

// Autodiff node over (C,H,W) features. w is clamped at 1e-6 inside with
// pass-through gradient above the clamp.
ValuePtr re_wkv_node(const ValuePtr& k, const ValuePtr& v, const ValuePtr& wh, const ValuePtr& uh,
                     const ValuePtr& wv, const ValuePtr& uv, int iterations,
                     Exponent e = Exponent::vrwkv);

}  // namespace evr::wkv
