#pragma once

#include <complex>
#include <vector>

#include "evrwkv/graph.hpp"

namespace evr {

// In-place radix-2 Cooley-Tukey over a row-major H x W complex buffer.
// H and W must be powers of two. The inverse carries the 1/(H*W) scale.
void fft2_inplace(std::vector<std::complex<double>>& a, int H, int W, bool inverse);

std::vector<std::complex<double>> fft2(const std::vector<std::complex<double>>& a, int H, int W);
std::vector<std::complex<double>> ifft2(const std::vector<std::complex<double>>& a, int H, int W);

// K x K Gaussian sampled at integer offsets around 0, renormalized to sum 1.
Tensor gaussian_kernel(double sigma, int K);
// Derivative of the renormalized kernel w.r.t. sigma.
Tensor gaussian_kernel_dsigma(double sigma, int K);

// Per-channel Gaussian filtering through the FFT. Linear (zero-padded)
// semantics by default; circular restores the literal spectral product over
// the image extents (which must then be powers of two).
Tensor adaptive_gaussian_filter_plain(const Tensor& x, const std::vector<double>& sigma, int K,
                                      bool circular = false);

// Autodiff node: differentiable w.r.t. x and sigma (one sigma per channel).
ValuePtr adaptive_gaussian_filter(const ValuePtr& x, const ValuePtr& sigma, int K,
                                  bool circular = false);

}  // namespace evr
