#include "evrwkv/freq.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace evr {

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Iterative radix-2 DIT on a strided view of length n.
void fft1(std::complex<double>* a, int n, int stride, bool inverse) {
    // bit-reversal permutation
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i * stride], a[j * stride]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * std::numbers::pi / len * (inverse ? 1.0 : -1.0);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (int j = 0; j < len / 2; ++j) {
                std::complex<double> u = a[(i + j) * stride];
                std::complex<double> v = a[(i + j + len / 2) * stride] * w;
                a[(i + j) * stride] = u + v;
                a[(i + j + len / 2) * stride] = u - v;
                w *= wl;
            }
        }
    }
}

// Circular convolution of an (H,W) plane with a centered KxK kernel via the
// spectral product; buffers must already be the transform size.
void spectral_filter_plane(const double* x, int H, int W, int xH, int xW, const Tensor& kernel,
                           double* out) {
    // x occupies the top-left xH x xW corner of the H x W transform plane.
    int K = kernel.dim(0), R = K / 2;
    std::vector<std::complex<double>> fx(static_cast<std::size_t>(H) * W);
    std::vector<std::complex<double>> fg(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < xH; ++y)
        for (int xx = 0; xx < xW; ++xx) fx[static_cast<std::size_t>(y) * W + xx] = x[y * xW + xx];
    for (int dy = -R; dy <= R; ++dy)
        for (int dx = -R; dx <= R; ++dx) {
            int yy = (dy + H) % H, xx2 = (dx + W) % W;
            fg[static_cast<std::size_t>(yy) * W + xx2] += kernel.at2(dy + R, dx + R);
        }
    fft2_inplace(fx, H, W, false);
    fft2_inplace(fg, H, W, false);
    for (std::size_t i = 0; i < fx.size(); ++i) fx[i] *= fg[i];
    fft2_inplace(fx, H, W, true);
    for (int y = 0; y < xH; ++y)
        for (int xx = 0; xx < xW; ++xx) out[y * xW + xx] = fx[static_cast<std::size_t>(y) * W + xx].real();
}

Tensor filter_with_kernels(const Tensor& x, const std::vector<Tensor>& kernels, bool circular) {
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    int K = kernels[0].dim(0);
    Tensor out(x.shape);
    int th, tw;
    if (circular) {
        if (!is_pow2(H) || !is_pow2(W))
            throw std::invalid_argument("adaptive_gaussian_filter: circular mode needs power-of-two extents");
        th = H;
        tw = W;
    } else {
        th = next_pow2(H + K - 1);
        tw = next_pow2(W + K - 1);
    }
    for (int c = 0; c < C; ++c)
        spectral_filter_plane(x.data.data() + static_cast<std::size_t>(c) * H * W, th, tw, H, W,
                              kernels[static_cast<std::size_t>(c)],
                              out.data.data() + static_cast<std::size_t>(c) * H * W);
    return out;
}

}  // namespace

void fft2_inplace(std::vector<std::complex<double>>& a, int H, int W, bool inverse) {
    if (!is_pow2(H) || !is_pow2(W))
        throw std::invalid_argument("fft2: extents must be powers of two");
    if (static_cast<int>(a.size()) != H * W) throw std::invalid_argument("fft2: buffer size mismatch");
    for (int y = 0; y < H; ++y) fft1(a.data() + static_cast<std::size_t>(y) * W, W, 1, inverse);
    for (int x = 0; x < W; ++x) fft1(a.data() + x, H, W, inverse);
    if (inverse) {
        double s = 1.0 / (static_cast<double>(H) * W);
        for (auto& v : a) v *= s;
    }
}

std::vector<std::complex<double>> fft2(const std::vector<std::complex<double>>& a, int H, int W) {
    auto out = a;
    fft2_inplace(out, H, W, false);
    return out;
}

std::vector<std::complex<double>> ifft2(const std::vector<std::complex<double>>& a, int H, int W) {
    auto out = a;
    fft2_inplace(out, H, W, true);
    return out;
}

Tensor gaussian_kernel(double sigma, int K) {
    if (K % 2 == 0) throw std::invalid_argument("gaussian_kernel: K must be odd");
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
    int R = K / 2;
    Tensor g({K, K});
    double norm = 1.0 / (2.0 * std::numbers::pi * sigma * sigma);
    double s = 0.0;
    for (int y = -R; y <= R; ++y)
        for (int x = -R; x <= R; ++x) {
            double v = norm * std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
            g.at2(y + R, x + R) = v;
            s += v;
        }
    for (double& v : g.data) v /= s;
    return g;
}

Tensor gaussian_kernel_dsigma(double sigma, int K) {
    int R = K / 2;
    Tensor g = Tensor::zeros({K, K}), dg = Tensor::zeros({K, K});
    double norm = 1.0 / (2.0 * std::numbers::pi * sigma * sigma);
    double s = 0.0, ds = 0.0;
    for (int y = -R; y <= R; ++y)
        for (int x = -R; x <= R; ++x) {
            double r2 = x * x + y * y;
            double v = norm * std::exp(-r2 / (2.0 * sigma * sigma));
            double dv = v * (r2 / (sigma * sigma * sigma) - 2.0 / sigma);
            g.at2(y + R, x + R) = v;
            dg.at2(y + R, x + R) = dv;
            s += v;
            ds += dv;
        }
    // d/dsigma of g/sum(g)
    Tensor out({K, K});
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = (dg[i] - g[i] / s * ds) / s;
    return out;
}

namespace {

std::vector<Tensor> kernels_for(const std::vector<double>& sigma, int K) {
    std::vector<Tensor> kernels;
    kernels.reserve(sigma.size());
    for (double s : sigma) kernels.push_back(gaussian_kernel(s, K));
    return kernels;
}

// Filtered all-ones image: the in-bounds kernel mass per pixel. Dividing by it
// renormalizes the zero-padded borders so constants pass through unchanged.
Tensor kernel_mass(const std::vector<int>& shape, const std::vector<Tensor>& kernels,
                   bool circular) {
    Tensor ones(shape, 1.0);
    return filter_with_kernels(ones, kernels, circular);
}

}  // namespace

Tensor adaptive_gaussian_filter_plain(const Tensor& x, const std::vector<double>& sigma, int K,
                                      bool circular) {
    if (static_cast<int>(sigma.size()) != x.dim(0))
        throw std::invalid_argument("adaptive_gaussian_filter: one sigma per channel required");
    auto kernels = kernels_for(sigma, K);
    Tensor out = filter_with_kernels(x, kernels, circular);
    Tensor mass = kernel_mass(x.shape, kernels, circular);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] /= mass[i];
    return out;
}

ValuePtr adaptive_gaussian_filter(const ValuePtr& x, const ValuePtr& sigma, int K, bool circular) {
    int C = x->t.dim(0);
    if (static_cast<int>(sigma->t.size()) != C)
        throw std::invalid_argument("adaptive_gaussian_filter: one sigma per channel required");
    std::vector<double> sig(sigma->t.data.begin(), sigma->t.data.end());
    auto kernels = kernels_for(sig, K);
    auto mass = std::make_shared<Tensor>(kernel_mass(x->t.shape, kernels, circular));
    Tensor out = filter_with_kernels(x->t, kernels, circular);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] /= (*mass)[i];
    return make_node(std::move(out), {x, sigma}, [x, sigma, K, circular, C, sig, mass](Value& self) {
        // out = conv_g(x) / N with N = conv_g(1) independent of x. The Gaussian
        // kernel is symmetric, so the x-adjoint is the raw filter applied to
        // grad/N.
        auto kernels = kernels_for(sig, K);
        Tensor gscaled = self.grad;
        for (std::int64_t i = 0; i < gscaled.size(); ++i) gscaled[i] /= (*mass)[i];
        if (x->requires_grad) {
            Tensor gx = filter_with_kernels(gscaled, kernels, circular);
            Tensor& acc = x->ensure_grad();
            for (std::int64_t i = 0; i < gx.size(); ++i) acc[i] += gx[i];
        }
        if (sigma->requires_grad) {
            // d out/dσ = (conv_dg(x) − out·conv_dg(1)) / N
            std::vector<Tensor> dkernels;
            dkernels.reserve(sig.size());
            for (double s : sig) dkernels.push_back(gaussian_kernel_dsigma(s, K));
            Tensor dnum = filter_with_kernels(x->t, dkernels, circular);
            Tensor dmass = kernel_mass(x->t.shape, dkernels, circular);
            Tensor& acc = sigma->ensure_grad();
            int HW = x->t.dim(1) * x->t.dim(2);
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                for (int i = 0; i < HW; ++i) {
                    std::int64_t j = static_cast<std::int64_t>(c) * HW + i;
                    s += gscaled[j] * (dnum[j] - self.t[j] * dmass[j]);
                }
                acc[c] += s;
            }
        }
    });
}

}  // namespace evr
