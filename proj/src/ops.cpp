#include "evrwkv/ops.hpp"

#include <algorithm>
#include <cmath>

namespace evr {

namespace {

void accumulate(const ValuePtr& p, const Tensor& g) {
    if (!p->requires_grad) return;
    Tensor& gp = p->ensure_grad();
    for (std::int64_t i = 0; i < g.size(); ++i) gp[i] += g[i];
}

ValuePtr binary_ew(const ValuePtr& a, const ValuePtr& b, const char* name, double (*f)(double, double),
                   void (*bw)(double x, double y, double g, double& dx, double& dy)) {
    check_same_shape(a->t, b->t, name);
    Tensor out(a->t.shape);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = f(a->t[i], b->t[i]);
    return make_node(std::move(out), {a, b}, [a, b, bw](Value& self) {
        Tensor ga = Tensor::zeros(a->t.shape), gb = Tensor::zeros(b->t.shape);
        for (std::int64_t i = 0; i < self.grad.size(); ++i)
            bw(a->t[i], b->t[i], self.grad[i], ga[i], gb[i]);
        accumulate(a, ga);
        accumulate(b, gb);
    });
}

ValuePtr unary_ew(const ValuePtr& a, double (*f)(double), double (*dfdx_from_xy)(double x, double y)) {
    Tensor out(a->t.shape);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = f(a->t[i]);
    return make_node(std::move(out), {a}, [a, dfdx_from_xy](Value& self) {
        Tensor ga = Tensor::zeros(a->t.shape);
        for (std::int64_t i = 0; i < self.grad.size(); ++i)
            ga[i] = self.grad[i] * dfdx_from_xy(a->t[i], self.t[i]);
        accumulate(a, ga);
    });
}

}  // namespace

ValuePtr add(const ValuePtr& a, const ValuePtr& b) {
    return binary_ew(a, b, "add", [](double x, double y) { return x + y; },
                     [](double, double, double g, double& dx, double& dy) {
                         dx = g;
                         dy = g;
                     });
}

ValuePtr sub(const ValuePtr& a, const ValuePtr& b) {
    return binary_ew(a, b, "sub", [](double x, double y) { return x - y; },
                     [](double, double, double g, double& dx, double& dy) {
                         dx = g;
                         dy = -g;
                     });
}

ValuePtr mul(const ValuePtr& a, const ValuePtr& b) {
    return binary_ew(a, b, "mul", [](double x, double y) { return x * y; },
                     [](double x, double y, double g, double& dx, double& dy) {
                         dx = g * y;
                         dy = g * x;
                     });
}

ValuePtr div_ew(const ValuePtr& a, const ValuePtr& b) {
    return binary_ew(a, b, "div", [](double x, double y) { return x / y; },
                     [](double x, double y, double g, double& dx, double& dy) {
                         dx = g / y;
                         dy = -g * x / (y * y);
                     });
}

ValuePtr neg(const ValuePtr& a) { return mul_scalar(a, -1.0); }

ValuePtr add_scalar(const ValuePtr& a, double c) {
    Tensor out(a->t.shape);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->t[i] + c;
    return make_node(std::move(out), {a}, [a](Value& self) { accumulate(a, self.grad); });
}

ValuePtr mul_scalar(const ValuePtr& a, double c) {
    Tensor out(a->t.shape);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->t[i] * c;
    return make_node(std::move(out), {a}, [a, c](Value& self) {
        Tensor ga = Tensor::zeros(a->t.shape);
        for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] * c;
        accumulate(a, ga);
    });
}

ValuePtr sigmoid(const ValuePtr& a) {
    return unary_ew(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

ValuePtr squared_relu(const ValuePtr& a) {
    return unary_ew(a, [](double x) { double r = std::max(x, 0.0); return r * r; },
                    [](double x, double) { return 2.0 * std::max(x, 0.0); });
}

ValuePtr leaky_relu(const ValuePtr& a, double slope) {
    Tensor out(a->t.shape);
    for (std::int64_t i = 0; i < out.size(); ++i)
        out[i] = a->t[i] > 0.0 ? a->t[i] : slope * a->t[i];
    return make_node(std::move(out), {a}, [a, slope](Value& self) {
        Tensor ga = Tensor::zeros(a->t.shape);
        for (std::int64_t i = 0; i < ga.size(); ++i)
            ga[i] = self.grad[i] * (a->t[i] > 0.0 ? 1.0 : slope);
        accumulate(a, ga);
    });
}

ValuePtr sqrt_ew(const ValuePtr& a) {
    return unary_ew(a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

ValuePtr abs_ew(const ValuePtr& a) {
    return unary_ew(a, [](double x) { return std::abs(x); },
                    [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

ValuePtr clamp_min(const ValuePtr& a, double m) {
    Tensor out(a->t.shape);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::max(a->t[i], m);
    return make_node(std::move(out), {a}, [a, m](Value& self) {
        Tensor ga = Tensor::zeros(a->t.shape);
        for (std::int64_t i = 0; i < ga.size(); ++i)
            ga[i] = a->t[i] > m ? self.grad[i] : 0.0;
        accumulate(a, ga);
    });
}

ValuePtr pow_const(const ValuePtr& a, double p) {
    Tensor out(a->t.shape);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::pow(a->t[i], p);
    return make_node(std::move(out), {a}, [a, p](Value& self) {
        Tensor ga = Tensor::zeros(a->t.shape);
        for (std::int64_t i = 0; i < ga.size(); ++i)
            ga[i] = self.grad[i] * p * std::pow(a->t[i], p - 1.0);
        accumulate(a, ga);
    });
}

ValuePtr sum(const ValuePtr& a) {
    Tensor out = Tensor::scalar(a->t.sum());
    return make_node(std::move(out), {a}, [a](Value& self) {
        Tensor ga = Tensor::full(a->t.shape, self.grad[0]);
        accumulate(a, ga);
    });
}

ValuePtr mean(const ValuePtr& a) {
    double n = static_cast<double>(a->t.size());
    Tensor out = Tensor::scalar(a->t.sum() / n);
    return make_node(std::move(out), {a}, [a, n](Value& self) {
        Tensor ga = Tensor::full(a->t.shape, self.grad[0] / n);
        accumulate(a, ga);
    });
}

ValuePtr reshape(const ValuePtr& a, std::vector<int> shape) {
    if (Tensor::count(shape) != a->t.size())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor out;
    out.shape = std::move(shape);
    out.data = a->t.data;
    return make_node(std::move(out), {a}, [a](Value& self) {
        Tensor ga;
        ga.shape = a->t.shape;
        ga.data = self.grad.data;
        accumulate(a, ga);
    });
}

ValuePtr chw_to_tc(const ValuePtr& x) {
    int C = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    Tensor out({H * W, C});
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < H * W; ++t) out.at2(t, c) = x->t.at3(c, t / W, t % W);
    return make_node(std::move(out), {x}, [x, C, H, W](Value& self) {
        Tensor gx = Tensor::zeros({C, H, W});
        for (int c = 0; c < C; ++c)
            for (int t = 0; t < H * W; ++t) gx.at3(c, t / W, t % W) = self.grad.at2(t, c);
        accumulate(x, gx);
    });
}

ValuePtr tc_to_chw(const ValuePtr& x, int H, int W) {
    int T = x->t.dim(0), C = x->t.dim(1);
    if (T != H * W)
        throw std::invalid_argument("tc_to_chw: token count " + std::to_string(T) +
                                    " != " + std::to_string(H) + "*" + std::to_string(W));
    Tensor out({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t) out.at3(c, t / W, t % W) = x->t.at2(t, c);
    return make_node(std::move(out), {x}, [x, T, C, W](Value& self) {
        Tensor gx = Tensor::zeros({T, C});
        for (int c = 0; c < C; ++c)
            for (int t = 0; t < T; ++t) gx.at2(t, c) = self.grad.at3(c, t / W, t % W);
        accumulate(x, gx);
    });
}

ValuePtr concat_channels(const std::vector<ValuePtr>& xs) {
    int H = xs[0]->t.dim(1), W = xs[0]->t.dim(2);
    int Ctot = 0;
    for (const auto& x : xs) {
        if (x->t.dim(1) != H || x->t.dim(2) != W)
            throw std::invalid_argument("concat_channels: spatial extents differ");
        Ctot += x->t.dim(0);
    }
    Tensor out({Ctot, H, W});
    std::int64_t off = 0;
    for (const auto& x : xs) {
        std::copy(x->t.data.begin(), x->t.data.end(), out.data.begin() + off);
        off += x->t.size();
    }
    return make_node(std::move(out), xs, [xs](Value& self) {
        std::int64_t off = 0;
        for (const auto& x : xs) {
            Tensor gx = Tensor::zeros(x->t.shape);
            std::copy(self.grad.data.begin() + off, self.grad.data.begin() + off + x->t.size(),
                      gx.data.begin());
            accumulate(x, gx);
            off += x->t.size();
        }
    });
}

ValuePtr slice_channels(const ValuePtr& x, int c0, int c1) {
    int C = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    if (c0 < 0 || c1 > C || c0 >= c1) throw std::invalid_argument("slice_channels: bad range");
    Tensor out({c1 - c0, H, W});
    std::int64_t plane = static_cast<std::int64_t>(H) * W;
    std::copy(x->t.data.begin() + c0 * plane, x->t.data.begin() + c1 * plane, out.data.begin());
    return make_node(std::move(out), {x}, [x, c0, plane](Value& self) {
        Tensor gx = Tensor::zeros(x->t.shape);
        std::copy(self.grad.data.begin(), self.grad.data.end(), gx.data.begin() + c0 * plane);
        accumulate(x, gx);
    });
}

ValuePtr broadcast_row(const ValuePtr& v, int T) {
    int C = static_cast<int>(v->t.size());
    Tensor out({T, C});
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c) out.at2(t, c) = v->t[c];
    return make_node(std::move(out), {v}, [v, T, C](Value& self) {
        Tensor gv = Tensor::zeros(v->t.shape);
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c) gv[c] += self.grad.at2(t, c);
        accumulate(v, gv);
    });
}

ValuePtr mul_spatial_map(const ValuePtr& x, const ValuePtr& m) {
    int C = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    if (m->t.dim(0) != 1 || m->t.dim(1) != H || m->t.dim(2) != W)
        throw std::invalid_argument("mul_spatial_map: map must be (1,H,W)");
    Tensor out({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) out.at3(c, y, xx) = x->t.at3(c, y, xx) * m->t.at3(0, y, xx);
    return make_node(std::move(out), {x, m}, [x, m, C, H, W](Value& self) {
        Tensor gx = Tensor::zeros(x->t.shape), gm = Tensor::zeros(m->t.shape);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    double g = self.grad.at3(c, y, xx);
                    gx.at3(c, y, xx) = g * m->t.at3(0, y, xx);
                    gm.at3(0, y, xx) += g * x->t.at3(c, y, xx);
                }
        accumulate(x, gx);
        accumulate(m, gm);
    });
}

ValuePtr mul_channel_scale(const ValuePtr& x, const ValuePtr& s) {
    int C = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    if (s->t.size() != C) throw std::invalid_argument("mul_channel_scale: scale must have C entries");
    Tensor out({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) out.at3(c, y, xx) = x->t.at3(c, y, xx) * s->t[c];
    return make_node(std::move(out), {x, s}, [x, s, C, H, W](Value& self) {
        Tensor gx = Tensor::zeros(x->t.shape), gs = Tensor::zeros(s->t.shape);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    double g = self.grad.at3(c, y, xx);
                    gx.at3(c, y, xx) = g * s->t[c];
                    gs[c] += g * x->t.at3(c, y, xx);
                }
        accumulate(x, gx);
        accumulate(s, gs);
    });
}

ValuePtr scale_by_index(const ValuePtr& x, const ValuePtr& v, int i) {
    double s = v->t[i];
    Tensor out(x->t.shape);
    for (std::int64_t j = 0; j < out.size(); ++j) out[j] = x->t[j] * s;
    return make_node(std::move(out), {x, v}, [x, v, i, s](Value& self) {
        Tensor gx = Tensor::zeros(x->t.shape), gv = Tensor::zeros(v->t.shape);
        for (std::int64_t j = 0; j < gx.size(); ++j) {
            gx[j] = self.grad[j] * s;
            gv[i] += self.grad[j] * x->t[j];
        }
        accumulate(x, gx);
        accumulate(v, gv);
    });
}

ValuePtr matmul(const ValuePtr& a, const ValuePtr& b) {
    int M = a->t.dim(0), K = a->t.dim(1);
    int K2 = b->t.dim(0), N = b->t.dim(1);
    if (K != K2)
        throw std::invalid_argument("matmul: inner extents disagree " + a->t.shape_str() + " vs " +
                                    b->t.shape_str());
    Tensor out({M, N});
    for (int i = 0; i < M; ++i)
        for (int k = 0; k < K; ++k) {
            double av = a->t.at2(i, k);
            if (av == 0.0) continue;
            for (int j = 0; j < N; ++j) out.at2(i, j) += av * b->t.at2(k, j);
        }
    return make_node(std::move(out), {a, b}, [a, b, M, K, N](Value& self) {
        Tensor ga = Tensor::zeros(a->t.shape), gb = Tensor::zeros(b->t.shape);
        // dA = dC * B^T, dB = A^T * dC
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) {
                double g = self.grad.at2(i, j);
                if (g == 0.0) continue;
                for (int k = 0; k < K; ++k) {
                    ga.at2(i, k) += g * b->t.at2(k, j);
                    gb.at2(k, j) += g * a->t.at2(i, k);
                }
            }
        accumulate(a, ga);
        accumulate(b, gb);
    });
}

ValuePtr conv2d(const ValuePtr& x, const ValuePtr& w, const ValuePtr& b, int stride, int pad) {
    int Cin = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    int Cout = w->t.dim(0), kh = w->t.dim(2), kw = w->t.dim(3);
    if (w->t.dim(1) != Cin)
        throw std::invalid_argument("conv2d: kernel expects " + std::to_string(w->t.dim(1)) +
                                    " input channels, got " + std::to_string(Cin));
    int Ho = (H + 2 * pad - kh) / stride + 1;
    int Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor out({Cout, Ho, Wo});
    const double* wd = w->t.data.data();
    for (int co = 0; co < Cout; ++co) {
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                double acc = b ? b->t[co] : 0.0;
                for (int ci = 0; ci < Cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        const double* wrow = wd + ((static_cast<std::int64_t>(co) * Cin + ci) * kh + ky) * kw;
                        const double* xrow = x->t.data.data() + (static_cast<std::int64_t>(ci) * H + iy) * W;
                        for (int kx = 0; kx < kw; ++kx) {
                            int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= W) continue;
                            acc += wrow[kx] * xrow[ix];
                        }
                    }
                out.at3(co, oy, ox) = acc;
            }
    }
    std::vector<ValuePtr> parents = b ? std::vector<ValuePtr>{x, w, b} : std::vector<ValuePtr>{x, w};
    return make_node(std::move(out), std::move(parents),
                     [x, w, b, stride, pad, Cin, H, W, Cout, kh, kw, Ho, Wo](Value& self) {
                         Tensor gx = Tensor::zeros(x->t.shape);
                         Tensor gw = Tensor::zeros(w->t.shape);
                         Tensor gb = b ? Tensor::zeros(b->t.shape) : Tensor{};
                         for (int co = 0; co < Cout; ++co)
                             for (int oy = 0; oy < Ho; ++oy)
                                 for (int ox = 0; ox < Wo; ++ox) {
                                     double g = self.grad.at3(co, oy, ox);
                                     if (b) gb[co] += g;
                                     if (g == 0.0) continue;
                                     for (int ci = 0; ci < Cin; ++ci)
                                         for (int ky = 0; ky < kh; ++ky) {
                                             int iy = oy * stride - pad + ky;
                                             if (iy < 0 || iy >= H) continue;
                                             for (int kx = 0; kx < kw; ++kx) {
                                                 int ix = ox * stride - pad + kx;
                                                 if (ix < 0 || ix >= W) continue;
                                                 double xv = x->t.at3(ci, iy, ix);
                                                 gx.at3(ci, iy, ix) +=
                                                     g * w->t.data[((static_cast<std::int64_t>(co) * Cin + ci) * kh + ky) * kw + kx];
                                                 gw.data[((static_cast<std::int64_t>(co) * Cin + ci) * kh + ky) * kw + kx] += g * xv;
                                             }
                                         }
                                 }
                         accumulate(x, gx);
                         accumulate(w, gw);
                         if (b) accumulate(b, gb);
                     });
}

ValuePtr depthwise_conv2d(const ValuePtr& x, const ValuePtr& w, const ValuePtr& b, int stride,
                          int pad) {
    int C = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    int k = w->t.dim(1);
    if (w->t.dim(0) != C)
        throw std::invalid_argument("depthwise_conv2d: kernel channels " +
                                    std::to_string(w->t.dim(0)) + " != input channels " +
                                    std::to_string(C));
    if (k % 2 == 0) throw std::invalid_argument("depthwise_conv2d: kernel size must be odd");
    int Ho = (H + 2 * pad - k) / stride + 1;
    int Wo = (W + 2 * pad - k) / stride + 1;
    Tensor out({C, Ho, Wo});
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                double acc = b ? b->t[c] : 0.0;
                for (int ky = 0; ky < k; ++ky) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= W) continue;
                        acc += w->t.data[(static_cast<std::int64_t>(c) * k + ky) * k + kx] * x->t.at3(c, iy, ix);
                    }
                }
                out.at3(c, oy, ox) = acc;
            }
    std::vector<ValuePtr> parents = b ? std::vector<ValuePtr>{x, w, b} : std::vector<ValuePtr>{x, w};
    return make_node(std::move(out), std::move(parents),
                     [x, w, b, stride, pad, C, H, W, k, Ho, Wo](Value& self) {
                         Tensor gx = Tensor::zeros(x->t.shape);
                         Tensor gw = Tensor::zeros(w->t.shape);
                         Tensor gb = b ? Tensor::zeros(b->t.shape) : Tensor{};
                         for (int c = 0; c < C; ++c)
                             for (int oy = 0; oy < Ho; ++oy)
                                 for (int ox = 0; ox < Wo; ++ox) {
                                     double g = self.grad.at3(c, oy, ox);
                                     if (b) gb[c] += g;
                                     if (g == 0.0) continue;
                                     for (int ky = 0; ky < k; ++ky) {
                                         int iy = oy * stride - pad + ky;
                                         if (iy < 0 || iy >= H) continue;
                                         for (int kx = 0; kx < k; ++kx) {
                                             int ix = ox * stride - pad + kx;
                                             if (ix < 0 || ix >= W) continue;
                                             gx.at3(c, iy, ix) +=
                                                 g * w->t.data[(static_cast<std::int64_t>(c) * k + ky) * k + kx];
                                             gw.data[(static_cast<std::int64_t>(c) * k + ky) * k + kx] +=
                                                 g * x->t.at3(c, iy, ix);
                                         }
                                     }
                                 }
                         accumulate(x, gx);
                         accumulate(w, gw);
                         if (b) accumulate(b, gb);
                     });
}

ValuePtr conv_transpose2d(const ValuePtr& x, const ValuePtr& w, const ValuePtr& b, int stride,
                          int pad) {
    // w has shape (Cin, Cout, k, k); out[oy] receives x[iy] at oy = iy*stride - pad + ky.
    int Cin = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    int Cout = w->t.dim(1), kh = w->t.dim(2), kw = w->t.dim(3);
    if (w->t.dim(0) != Cin) throw std::invalid_argument("conv_transpose2d: channel mismatch");
    int Ho = (H - 1) * stride - 2 * pad + kh;
    int Wo = (W - 1) * stride - 2 * pad + kw;
    Tensor out({Cout, Ho, Wo});
    for (int ci = 0; ci < Cin; ++ci)
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix) {
                double xv = x->t.at3(ci, iy, ix);
                if (xv == 0.0) continue;
                for (int co = 0; co < Cout; ++co)
                    for (int ky = 0; ky < kh; ++ky) {
                        int oy = iy * stride - pad + ky;
                        if (oy < 0 || oy >= Ho) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            int ox = ix * stride - pad + kx;
                            if (ox < 0 || ox >= Wo) continue;
                            out.at3(co, oy, ox) +=
                                xv * w->t.data[((static_cast<std::int64_t>(ci) * Cout + co) * kh + ky) * kw + kx];
                        }
                    }
            }
    if (b)
        for (int co = 0; co < Cout; ++co)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) out.at3(co, oy, ox) += b->t[co];
    std::vector<ValuePtr> parents = b ? std::vector<ValuePtr>{x, w, b} : std::vector<ValuePtr>{x, w};
    return make_node(std::move(out), std::move(parents),
                     [x, w, b, stride, pad, Cin, H, W, Cout, kh, kw, Ho, Wo](Value& self) {
                         Tensor gx = Tensor::zeros(x->t.shape);
                         Tensor gw = Tensor::zeros(w->t.shape);
                         Tensor gb = b ? Tensor::zeros(b->t.shape) : Tensor{};
                         for (int ci = 0; ci < Cin; ++ci)
                             for (int iy = 0; iy < H; ++iy)
                                 for (int ix = 0; ix < W; ++ix) {
                                     double acc = 0.0;
                                     for (int co = 0; co < Cout; ++co)
                                         for (int ky = 0; ky < kh; ++ky) {
                                             int oy = iy * stride - pad + ky;
                                             if (oy < 0 || oy >= Ho) continue;
                                             for (int kx = 0; kx < kw; ++kx) {
                                                 int ox = ix * stride - pad + kx;
                                                 if (ox < 0 || ox >= Wo) continue;
                                                 double g = self.grad.at3(co, oy, ox);
                                                 double wv = w->t.data[((static_cast<std::int64_t>(ci) * Cout + co) * kh + ky) * kw + kx];
                                                 acc += g * wv;
                                                 gw.data[((static_cast<std::int64_t>(ci) * Cout + co) * kh + ky) * kw + kx] +=
                                                     g * x->t.at3(ci, iy, ix);
                                             }
                                         }
                                     gx.at3(ci, iy, ix) = acc;
                                 }
                         if (b)
                             for (int co = 0; co < Cout; ++co)
                                 for (int oy = 0; oy < Ho; ++oy)
                                     for (int ox = 0; ox < Wo; ++ox) gb[co] += self.grad.at3(co, oy, ox);
                         accumulate(x, gx);
                         accumulate(w, gw);
                         if (b) accumulate(b, gb);
                     });
}

ValuePtr layer_norm(const ValuePtr& x, const ValuePtr& gamma, const ValuePtr& beta, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    int T = x->t.dim(0), C = x->t.dim(1);
    Tensor out({T, C});
    Tensor xhat({T, C});
    Tensor inv_std({T});
    for (int t = 0; t < T; ++t) {
        double mu = 0.0;
        for (int c = 0; c < C; ++c) mu += x->t.at2(t, c);
        mu /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
            double d = x->t.at2(t, c) - mu;
            var += d * d;
        }
        var /= C;
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[t] = is;
        for (int c = 0; c < C; ++c) {
            double h = (x->t.at2(t, c) - mu) * is;
            xhat.at2(t, c) = h;
            out.at2(t, c) = gamma->t[c] * h + beta->t[c];
        }
    }
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto is = std::make_shared<Tensor>(std::move(inv_std));
    return make_node(std::move(out), {x, gamma, beta}, [x, gamma, beta, xh, is, T, C](Value& self) {
        Tensor gx = Tensor::zeros(x->t.shape);
        Tensor gg = Tensor::zeros(gamma->t.shape);
        Tensor gb = Tensor::zeros(beta->t.shape);
        for (int t = 0; t < T; ++t) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (int c = 0; c < C; ++c) {
                double g = self.grad.at2(t, c);
                double h = xh->at2(t, c);
                gg[c] += g * h;
                gb[c] += g;
                double dh = g * gamma->t[c];
                mean_dh += dh;
                mean_dh_h += dh * h;
            }
            mean_dh /= C;
            mean_dh_h /= C;
            for (int c = 0; c < C; ++c) {
                double dh = self.grad.at2(t, c) * gamma->t[c];
                gx.at2(t, c) = (*is)[t] * (dh - mean_dh - xh->at2(t, c) * mean_dh_h);
            }
        }
        accumulate(x, gx);
        accumulate(gamma, gg);
        accumulate(beta, gb);
    });
}

ValuePtr bilinear_sample(const ValuePtr& x, const ValuePtr& coords) {
    int C = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    int Ho = coords->t.dim(1), Wo = coords->t.dim(2);
    if (coords->t.dim(0) != 2) throw std::invalid_argument("bilinear_sample: coords must be (2,H,W)");
    auto pix = [&](int c, int y, int xx) -> double {
        if (y < 0 || y >= H || xx < 0 || xx >= W) return 0.0;
        return x->t.at3(c, y, xx);
    };
    Tensor out({C, Ho, Wo});
    for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
            double fy = coords->t.at3(0, oy, ox);
            double fx = coords->t.at3(1, oy, ox);
            int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
            double wy = fy - y0, wx = fx - x0;
            for (int c = 0; c < C; ++c) {
                out.at3(c, oy, ox) = (1 - wy) * (1 - wx) * pix(c, y0, x0) +
                                     (1 - wy) * wx * pix(c, y0, x0 + 1) +
                                     wy * (1 - wx) * pix(c, y0 + 1, x0) +
                                     wy * wx * pix(c, y0 + 1, x0 + 1);
            }
        }
    return make_node(std::move(out), {x, coords}, [x, coords, C, H, W, Ho, Wo](Value& self) {
        Tensor gx = Tensor::zeros(x->t.shape);
        Tensor gc = Tensor::zeros(coords->t.shape);
        auto pix = [&](int c, int y, int xx) -> double {
            if (y < 0 || y >= H || xx < 0 || xx >= W) return 0.0;
            return x->t.at3(c, y, xx);
        };
        auto add_px = [&](int c, int y, int xx, double v) {
            if (y < 0 || y >= H || xx < 0 || xx >= W) return;
            gx.at3(c, y, xx) += v;
        };
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                double fy = coords->t.at3(0, oy, ox);
                double fx = coords->t.at3(1, oy, ox);
                int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
                double wy = fy - y0, wx = fx - x0;
                double gy_acc = 0.0, gx_acc = 0.0;
                for (int c = 0; c < C; ++c) {
                    double g = self.grad.at3(c, oy, ox);
                    if (g == 0.0) continue;
                    add_px(c, y0, x0, g * (1 - wy) * (1 - wx));
                    add_px(c, y0, x0 + 1, g * (1 - wy) * wx);
                    add_px(c, y0 + 1, x0, g * wy * (1 - wx));
                    add_px(c, y0 + 1, x0 + 1, g * wy * wx);
                    double p00 = pix(c, y0, x0), p01 = pix(c, y0, x0 + 1);
                    double p10 = pix(c, y0 + 1, x0), p11 = pix(c, y0 + 1, x0 + 1);
                    gy_acc += g * ((1 - wx) * (p10 - p00) + wx * (p11 - p01));
                    gx_acc += g * ((1 - wy) * (p01 - p00) + wy * (p11 - p10));
                }
                gc.at3(0, oy, ox) = gy_acc;
                gc.at3(1, oy, ox) = gx_acc;
            }
        accumulate(x, gx);
        accumulate(coords, gc);
    });
}

ValuePtr avg_pool2(const ValuePtr& x) {
    int C = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    int Ho = H / 2, Wo = W / 2;
    Tensor out({C, Ho, Wo});
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox)
                out.at3(c, oy, ox) = 0.25 * (x->t.at3(c, 2 * oy, 2 * ox) + x->t.at3(c, 2 * oy, 2 * ox + 1) +
                                             x->t.at3(c, 2 * oy + 1, 2 * ox) + x->t.at3(c, 2 * oy + 1, 2 * ox + 1));
    return make_node(std::move(out), {x}, [x, C, Ho, Wo](Value& self) {
        Tensor gx = Tensor::zeros(x->t.shape);
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    double g = 0.25 * self.grad.at3(c, oy, ox);
                    gx.at3(c, 2 * oy, 2 * ox) += g;
                    gx.at3(c, 2 * oy, 2 * ox + 1) += g;
                    gx.at3(c, 2 * oy + 1, 2 * ox) += g;
                    gx.at3(c, 2 * oy + 1, 2 * ox + 1) += g;
                }
        accumulate(x, gx);
    });
}

ValuePtr global_avg_pool(const ValuePtr& x) {
    int C = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    double n = static_cast<double>(H) * W;
    Tensor out({C});
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) s += x->t.at3(c, y, xx);
        out[c] = s / n;
    }
    return make_node(std::move(out), {x}, [x, C, H, W, n](Value& self) {
        Tensor gx = Tensor::zeros(x->t.shape);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) gx.at3(c, y, xx) = self.grad[c] / n;
        accumulate(x, gx);
    });
}

ValuePtr channel_mean(const ValuePtr& x) {
    int C = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    Tensor out({1, H, W});
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
            double s = 0.0;
            for (int c = 0; c < C; ++c) s += x->t.at3(c, y, xx);
            out.at3(0, y, xx) = s / C;
        }
    return make_node(std::move(out), {x}, [x, C, H, W](Value& self) {
        Tensor gx = Tensor::zeros(x->t.shape);
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                double g = self.grad.at3(0, y, xx) / C;
                for (int c = 0; c < C; ++c) gx.at3(c, y, xx) = g;
            }
        accumulate(x, gx);
    });
}

ValuePtr channel_max(const ValuePtr& x) {
    int C = x->t.dim(0), H = x->t.dim(1), W = x->t.dim(2);
    Tensor out({1, H, W});
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
            int best = 0;
            double bv = x->t.at3(0, y, xx);
            for (int c = 1; c < C; ++c)
                if (x->t.at3(c, y, xx) > bv) {
                    bv = x->t.at3(c, y, xx);
                    best = c;
                }
            out.at3(0, y, xx) = bv;
            (*argmax)[static_cast<std::size_t>(y) * W + xx] = best;
        }
    return make_node(std::move(out), {x}, [x, argmax, H, W](Value& self) {
        Tensor gx = Tensor::zeros(x->t.shape);
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
                gx.at3((*argmax)[static_cast<std::size_t>(y) * W + xx], y, xx) = self.grad.at3(0, y, xx);
        accumulate(x, gx);
    });
}

}  // namespace evr
