#pragma once

#include "evrwkv/graph.hpp"

namespace evr {

// Elementwise
ValuePtr add(const ValuePtr& a, const ValuePtr& b);
ValuePtr sub(const ValuePtr& a, const ValuePtr& b);
ValuePtr mul(const ValuePtr& a, const ValuePtr& b);
ValuePtr div_ew(const ValuePtr& a, const ValuePtr& b);
ValuePtr neg(const ValuePtr& a);
ValuePtr add_scalar(const ValuePtr& a, double c);
ValuePtr mul_scalar(const ValuePtr& a, double c);
ValuePtr sigmoid(const ValuePtr& a);
ValuePtr squared_relu(const ValuePtr& a);
ValuePtr leaky_relu(const ValuePtr& a, double slope);
ValuePtr sqrt_ew(const ValuePtr& a);
ValuePtr abs_ew(const ValuePtr& a);
ValuePtr clamp_min(const ValuePtr& a, double m);
ValuePtr pow_const(const ValuePtr& a, double p);  // requires positive inputs

// Reductions
ValuePtr sum(const ValuePtr& a);
ValuePtr mean(const ValuePtr& a);

// Shape
ValuePtr reshape(const ValuePtr& a, std::vector<int> shape);
ValuePtr chw_to_tc(const ValuePtr& x);                    // (C,H,W) -> (H*W,C)
ValuePtr tc_to_chw(const ValuePtr& x, int H, int W);      // (T,C) -> (C,H,W)
ValuePtr concat_channels(const std::vector<ValuePtr>& xs);  // along dim 0 of (C,H,W)
ValuePtr slice_channels(const ValuePtr& x, int c0, int c1);

// Broadcast / gating helpers
ValuePtr broadcast_row(const ValuePtr& v, int T);            // (C) -> (T,C)
ValuePtr mul_spatial_map(const ValuePtr& x, const ValuePtr& m);  // (C,H,W) * (1,H,W)
ValuePtr mul_channel_scale(const ValuePtr& x, const ValuePtr& s);  // (C,H,W) * (C)
ValuePtr scale_by_index(const ValuePtr& x, const ValuePtr& v, int i);  // x * v[i]

// Linear algebra / conv
ValuePtr matmul(const ValuePtr& a, const ValuePtr& b);
ValuePtr conv2d(const ValuePtr& x, const ValuePtr& w, const ValuePtr& b, int stride, int pad);
ValuePtr depthwise_conv2d(const ValuePtr& x, const ValuePtr& w, const ValuePtr& b, int stride,
                          int pad);
ValuePtr conv_transpose2d(const ValuePtr& x, const ValuePtr& w, const ValuePtr& b, int stride,
                          int pad);
ValuePtr layer_norm(const ValuePtr& x, const ValuePtr& gamma, const ValuePtr& beta,
                    double eps = 1e-5);

// Sampling / pooling
ValuePtr bilinear_sample(const ValuePtr& x, const ValuePtr& coords);  // coords (2,Ho,Wo): y,x
ValuePtr avg_pool2(const ValuePtr& x);                 // 2x2 mean pool, floor extents
ValuePtr global_avg_pool(const ValuePtr& x);           // (C,H,W) -> (C)
ValuePtr channel_mean(const ValuePtr& x);              // (C,H,W) -> (1,H,W)
ValuePtr channel_max(const ValuePtr& x);               // (C,H,W) -> (1,H,W)

}  // namespace evr
