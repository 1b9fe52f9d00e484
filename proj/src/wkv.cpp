#include "evrwkv/wkv.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace evr::wkv {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// e^{log_scale} * mant without overflowing the intermediate exponential.
inline double scaled(double log_scale, double mant) {
    if (mant == 0.0 || log_scale == kNegInf) return 0.0;
    return std::copysign(std::exp(log_scale + std::log(std::abs(mant))), mant);
}

void check_inputs(const Tensor& k, const Tensor& v, const WkvParams& p) {
    check_same_shape(k, v, "bi_wkv");
    int C = k.dim(1);
    if (static_cast<int>(p.w.size()) != C || static_cast<int>(p.u.size()) != C)
        throw std::invalid_argument("bi_wkv: w/u must have one entry per channel");
    for (std::int64_t c = 0; c < p.w.size(); ++c)
        if (!(p.w[c] > 0.0)) throw std::invalid_argument("bi_wkv: decay w must be positive");
}

// --- strided 1D cores -------------------------------------------------------

struct Kahan {
    double s = 0.0, c = 0.0;
    void add(double x) {
        double y = x - c;
        double t = s + y;
        c = (t - s) - y;
        s = t;
    }
};

// O(T) forward for one channel/sequence. Optionally records log(denominator).
//
// The decay exponent spans at most w in total (lam = w/T per step), so for
// moderate w the whole sequence fits one fixed reference: subtract the
// per-channel global max M (the quadratic oracle's stabilization) and form
// compensated prefix/suffix sums of
//   a_i = e^{k_i - M + i*lam}   (weight for t > i is e^{-(t-1)*lam} * a_i)
//   b_i = e^{k_i - M - i*lam}   (weight for t < i is e^{+(t+1)*lam} * b_i)
// A running max-shift recurrence instead rescales the full accumulator every
// step, and its O(T*eps) rounding surfaces whenever the signed value sum
// cancels. Very large w would overflow e^{i*lam}, so the recurrence remains
// as the fallback there.
void scan_fwd_1d(const double* k, int ks, const double* v, int vs, int T, double w, double u,
                 double* out, int os, double* logb) {
    double lam = w / T;
    if (w <= 50.0) {
        double M = kNegInf;
        for (int t = 0; t < T; ++t) M = std::max(M, std::max(k[t * ks], u + k[t * ks]));
        std::vector<double> Qa(T), Qb(T);  // suffix sums over i > t
        Kahan qa, qb;
        for (int t = T - 1; t >= 0; --t) {
            Qa[t] = qa.s;
            Qb[t] = qb.s;
            double bi = std::exp(k[t * ks] - M - t * lam);
            qa.add(bi * v[t * vs]);
            qb.add(bi);
        }
        Kahan pa, pb;  // prefix sums over i < t
        for (int t = 0; t < T; ++t) {
            double fw = std::exp(-(t - 1) * lam);
            double bw = std::exp((t + 1) * lam);
            double se = std::exp(u + k[t * ks] - M);
            double num = fw * pa.s + bw * Qa[t] + se * v[t * vs];
            double den = fw * pb.s + bw * Qb[t] + se;
            out[t * os] = num / den;
            if (logb) logb[t] = M + std::log(den);
            double ai = std::exp(k[t * ks] - M + t * lam);
            pa.add(ai * v[t * vs]);
            pb.add(ai);
        }
        return;
    }
    // Backward-direction states (sums over i > t), recorded before adding t.
    std::vector<double> ppB(T), aaB(T), bbB(T);
    double pp = kNegInf, aa = 0.0, bb = 0.0;
    for (int t = T - 1; t >= 0; --t) {
        ppB[t] = pp;
        aaB[t] = aa;
        bbB[t] = bb;
        double kt = k[t * ks];
        double p = std::max(pp - lam, kt);
        double e1 = std::exp(pp - lam - p), e2 = std::exp(kt - p);
        aa = e1 * aa + e2 * v[t * vs];
        bb = e1 * bb + e2;
        pp = p;
    }
    pp = kNegInf;
    aa = 0.0;
    bb = 0.0;
    for (int t = 0; t < T; ++t) {
        double kt = k[t * ks], vt = v[t * vs];
        double self_e = u + kt;
        double q = std::max(std::max(pp, ppB[t]), self_e);
        double e1 = std::exp(pp - q), e2 = std::exp(ppB[t] - q), e3 = std::exp(self_e - q);
        double num = e1 * aa + e2 * aaB[t] + e3 * vt;
        double den = e1 * bb + e2 * bbB[t] + e3;
        out[t * os] = num / den;
        if (logb) logb[t] = q + std::log(den);
        double p = std::max(pp - lam, kt);
        e1 = std::exp(pp - lam - p);
        e2 = std::exp(kt - p);
        aa = e1 * aa + e2 * vt;
        bb = e1 * bb + e2;
        pp = p;
    }
}

// O(T^2) forward for one channel/sequence, global-max stabilized, with a
// precomputed decay table so the benchmark measures the quadratic sum rather
// than exp throughput.
void naive_fwd_1d(const double* k, int ks, const double* v, int vs, int T, double w, double u,
                  Exponent conv, double* out, int os) {
    double lam = w / T;
    if (conv == Exponent::vrwkv) {
        double M = kNegInf;
        for (int i = 0; i < T; ++i) M = std::max(M, std::max(k[i * ks], u + k[i * ks]));
        std::vector<double> decay(std::max(T - 1, 1)), ek(T);
        for (int d = 0; d < static_cast<int>(decay.size()); ++d) decay[d] = std::exp(-d * lam);
        for (int i = 0; i < T; ++i) ek[i] = std::exp(k[i * ks] - M);
        for (int t = 0; t < T; ++t) {
            double num = 0.0, den = 0.0;
            for (int i = 0; i < T; ++i) {
                if (i == t) continue;
                double wgt = decay[std::abs(t - i) - 1] * ek[i];
                num += wgt * v[i * vs];
                den += wgt;
            }
            double self_w = std::exp(u + k[t * ks] - M);
            num += self_w * v[t * vs];
            den += self_w;
            out[t * os] = num / den;
        }
    } else {
        // grouped: exponent -(d/T)*(w + k_i), per-pair evaluation
        for (int t = 0; t < T; ++t) {
            double M = u + k[t * ks];
            for (int i = 0; i < T; ++i) {
                if (i == t) continue;
                double d = std::abs(t - i) - 1;
                M = std::max(M, -d / T * (w + k[i * ks]));
            }
            double num = 0.0, den = 0.0;
            for (int i = 0; i < T; ++i) {
                double e;
                if (i == t)
                    e = u + k[t * ks];
                else {
                    double d = std::abs(t - i) - 1;
                    e = -d / T * (w + k[i * ks]);
                }
                double wgt = std::exp(e - M);
                num += wgt * v[i * vs];
                den += wgt;
            }
            out[t * os] = num / den;
        }
    }
    (void)lam;
}

// O(T^2) reference backward for one channel; supports both conventions.
void naive_bwd_1d(const double* k, int ks, const double* v, int vs, int T, double w, double u,
                  Exponent conv, const double* g, int gs, double* dk, int dks, double* dv, int dvs,
                  double& dw, double& du) {
    for (int t = 0; t < T; ++t) {
        double gt = g[t * gs];
        // exponents for this output row
        double M = u + k[t * ks];
        for (int i = 0; i < T; ++i) {
            if (i == t) continue;
            double d = std::abs(t - i) - 1;
            double e = (conv == Exponent::vrwkv) ? -d / T * w + k[i * ks]
                                                 : -d / T * (w + k[i * ks]);
            M = std::max(M, e);
        }
        double den = 0.0, num = 0.0;
        for (int i = 0; i < T; ++i) {
            double e;
            if (i == t)
                e = u + k[t * ks];
            else {
                double d = std::abs(t - i) - 1;
                e = (conv == Exponent::vrwkv) ? -d / T * w + k[i * ks]
                                              : -d / T * (w + k[i * ks]);
            }
            double wgt = std::exp(e - M);
            den += wgt;
            num += wgt * v[i * vs];
        }
        double wkv_t = num / den;
        if (gt == 0.0) continue;
        for (int i = 0; i < T; ++i) {
            double e, dedk, dedw;
            if (i == t) {
                e = u + k[t * ks];
                dedk = 1.0;
                dedw = 0.0;
            } else {
                double d = std::abs(t - i) - 1;
                if (conv == Exponent::vrwkv) {
                    e = -d / T * w + k[i * ks];
                    dedk = 1.0;
                } else {
                    e = -d / T * (w + k[i * ks]);
                    dedk = -d / T;
                }
                dedw = -d / T;
            }
            double s = std::exp(e - M) / den;
            double common = gt * s * (v[i * vs] - wkv_t);
            dv[i * dvs] += gt * s;
            dk[i * dks] += common * dedk;
            dw += common * dedw;
            if (i == t) du += common;
        }
    }
}

// O(T) scan backward for one channel (vrwkv convention).
void scan_bwd_1d(const double* k, int ks, const double* v, int vs, int T, double w, double u,
                 const double* g, int gs, double* dk, int dks, double* dv, int dvs, double& dw,
                 double& du) {
    double lam = w / T;
    std::vector<double> wkv(T), logb(T);
    scan_fwd_1d(k, ks, v, vs, T, w, u, wkv.data(), 1, logb.data());

    // Backward-direction (t > i) scan states of r_t = g_t/b_t and
    // rho_t = g_t*wkv_t/b_t, with distance-weighted companions for dw.
    std::vector<double> ppB(T), arB(T), crB(T), apB(T), cpB(T);
    double pp = kNegInf, ar = 0.0, cr = 0.0, ap = 0.0, cp = 0.0;
    for (int t = T - 1; t >= 0; --t) {
        ppB[t] = pp;
        arB[t] = ar;
        crB[t] = cr;
        apB[t] = ap;
        cpB[t] = cp;
        double tag = -logb[t];
        double p = std::max(pp - lam, tag);
        double e1 = std::exp(pp - lam - p), e2 = std::exp(tag - p);
        cr = e1 * (cr + ar);
        ar = e1 * ar + e2 * g[t * gs];
        cp = e1 * (cp + ap);
        ap = e1 * ap + e2 * g[t * gs] * wkv[t];
        pp = p;
    }
    pp = kNegInf;
    ar = cr = ap = cp = 0.0;
    for (int i = 0; i < T; ++i) {
        double ki = k[i * ks], vi = v[i * vs], gi = g[i * gs];
        double self_tag = u + ki - logb[i];
        double Sr = scaled(ki + pp, ar) + scaled(ki + ppB[i], arB[i]);
        double Sp = scaled(ki + pp, ap) + scaled(ki + ppB[i], apB[i]);
        double self_r = scaled(self_tag, gi);
        double dvi = Sr + self_r;
        double sum_rho = Sp + scaled(self_tag, gi * wkv[i]);
        dv[i * dvs] += dvi;
        dk[i * dks] += vi * dvi - sum_rho;
        double Dr = scaled(ki + pp, cr) + scaled(ki + ppB[i], crB[i]);
        double Dp = scaled(ki + pp, cp) + scaled(ki + ppB[i], cpB[i]);
        dw += -(1.0 / T) * (vi * Dr - Dp);
        du += scaled(self_tag, gi * (vi - wkv[i]));
        // advance prefix (t < i) state with term i
        double tag = -logb[i];
        double p = std::max(pp - lam, tag);
        double e1 = std::exp(pp - lam - p), e2 = std::exp(tag - p);
        cr = e1 * (cr + ar);
        ar = e1 * ar + e2 * gi;
        cp = e1 * (cp + ap);
        ap = e1 * ap + e2 * gi * wkv[i];
        pp = p;
    }
}

}  // namespace

Tensor bi_wkv_naive(const Tensor& k, const Tensor& v, const WkvParams& p, Exponent e) {
    check_inputs(k, v, p);
    int T = k.dim(0), C = k.dim(1);
    Tensor out({T, C});
    for (int c = 0; c < C; ++c)
        naive_fwd_1d(k.data.data() + c, C, v.data.data() + c, C, T, p.w[c], p.u[c], e,
                     out.data.data() + c, C);
    return out;
}

Tensor bi_wkv_scan(const Tensor& k, const Tensor& v, const WkvParams& p, Exponent e) {
    if (e == Exponent::grouped) return bi_wkv_naive(k, v, p, e);
    check_inputs(k, v, p);
    int T = k.dim(0), C = k.dim(1);
    Tensor out({T, C});
    for (int c = 0; c < C; ++c)
        scan_fwd_1d(k.data.data() + c, C, v.data.data() + c, C, T, p.w[c], p.u[c],
                    out.data.data() + c, C, nullptr);
    return out;
}

WkvGrads bi_wkv_backward_naive(const Tensor& k, const Tensor& v, const WkvParams& p,
                               const Tensor& upstream, Exponent e) {
    check_inputs(k, v, p);
    check_same_shape(k, upstream, "bi_wkv_backward");
    int T = k.dim(0), C = k.dim(1);
    WkvGrads g{Tensor::zeros(k.shape), Tensor::zeros(v.shape), Tensor::zeros(p.w.shape),
               Tensor::zeros(p.u.shape)};
    for (int c = 0; c < C; ++c)
        naive_bwd_1d(k.data.data() + c, C, v.data.data() + c, C, T, p.w[c], p.u[c], e,
                     upstream.data.data() + c, C, g.dk.data.data() + c, C, g.dv.data.data() + c, C,
                     g.dw[c], g.du[c]);
    return g;
}

WkvGrads bi_wkv_backward_scan(const Tensor& k, const Tensor& v, const WkvParams& p,
                              const Tensor& upstream) {
    check_inputs(k, v, p);
    check_same_shape(k, upstream, "bi_wkv_backward");
    int T = k.dim(0), C = k.dim(1);
    WkvGrads g{Tensor::zeros(k.shape), Tensor::zeros(v.shape), Tensor::zeros(p.w.shape),
               Tensor::zeros(p.u.shape)};
    for (int c = 0; c < C; ++c)
        scan_bwd_1d(k.data.data() + c, C, v.data.data() + c, C, T, p.w[c], p.u[c],
                    upstream.data.data() + c, C, g.dk.data.data() + c, C, g.dv.data.data() + c, C,
                    g.dw[c], g.du[c]);
    return g;
}

namespace {

// One directional pass over a (C,H,W) feature: dir 0 scans rows, dir 1 columns.
Tensor re_wkv_pass(const Tensor& k, const Tensor& v, const WkvParams& p, int dir, Exponent e) {
    int C = k.dim(0), H = k.dim(1), W = k.dim(2);
    Tensor out(k.shape);
    for (int c = 0; c < C; ++c) {
        const double* kc = k.data.data() + static_cast<std::int64_t>(c) * H * W;
        const double* vc = v.data.data() + static_cast<std::int64_t>(c) * H * W;
        double* oc = out.data.data() + static_cast<std::int64_t>(c) * H * W;
        if (dir == 0) {
            for (int y = 0; y < H; ++y) {
                if (e == Exponent::vrwkv)
                    scan_fwd_1d(kc + y * W, 1, vc + y * W, 1, W, p.w[c], p.u[c], oc + y * W, 1,
                                nullptr);
                else
                    naive_fwd_1d(kc + y * W, 1, vc + y * W, 1, W, p.w[c], p.u[c], e, oc + y * W, 1);
            }
        } else {
            for (int x = 0; x < W; ++x) {
                if (e == Exponent::vrwkv)
                    scan_fwd_1d(kc + x, W, vc + x, W, H, p.w[c], p.u[c], oc + x, W, nullptr);
                else
                    naive_fwd_1d(kc + x, W, vc + x, W, H, p.w[c], p.u[c], e, oc + x, W);
            }
        }
    }
    return out;
}

// Backward of one directional pass; accumulates into dk/dv/dw/du.
void re_wkv_pass_backward(const Tensor& k, const Tensor& v, const WkvParams& p, int dir, Exponent e,
                          const Tensor& gout, Tensor& dk, Tensor& dv, Tensor& dw, Tensor& du) {
    int C = k.dim(0), H = k.dim(1), W = k.dim(2);
    for (int c = 0; c < C; ++c) {
        std::int64_t off = static_cast<std::int64_t>(c) * H * W;
        const double* kc = k.data.data() + off;
        const double* vc = v.data.data() + off;
        const double* gc = gout.data.data() + off;
        double* dkc = dk.data.data() + off;
        double* dvc = dv.data.data() + off;
        if (dir == 0) {
            for (int y = 0; y < H; ++y) {
                if (e == Exponent::vrwkv)
                    scan_bwd_1d(kc + y * W, 1, vc + y * W, 1, W, p.w[c], p.u[c], gc + y * W, 1,
                                dkc + y * W, 1, dvc + y * W, 1, dw[c], du[c]);
                else
                    naive_bwd_1d(kc + y * W, 1, vc + y * W, 1, W, p.w[c], p.u[c], e, gc + y * W, 1,
                                 dkc + y * W, 1, dvc + y * W, 1, dw[c], du[c]);
            }
        } else {
            for (int x = 0; x < W; ++x) {
                if (e == Exponent::vrwkv)
                    scan_bwd_1d(kc + x, W, vc + x, W, H, p.w[c], p.u[c], gc + x, W, dkc + x, W,
                                dvc + x, W, dw[c], du[c]);
                else
                    naive_bwd_1d(kc + x, W, vc + x, W, H, p.w[c], p.u[c], e, gc + x, W, dkc + x, W,
                                 dvc + x, W, dw[c], du[c]);
            }
        }
    }
}

Tensor clamp_pos(const Tensor& w) {
    Tensor out = w;
    for (double& x : out.data) x = std::max(x, 1e-6);
    return out;
}

}  // namespace

Tensor re_wkv_2d(const Tensor& k, const Tensor& v, const WkvParams& ph, const WkvParams& pv,
                 int iterations, Exponent e) {
    if (iterations < 1) throw std::invalid_argument("re_wkv_2d: iterations must be >= 1");
    Tensor cur = v;
    for (int it = 0; it < iterations; ++it) {
        int dir = it % 2;
        cur = re_wkv_pass(k, cur, dir == 0 ? ph : pv, dir, e);
    }
    return cur;
}

ValuePtr re_wkv_node(const ValuePtr& k, const ValuePtr& v, const ValuePtr& wh, const ValuePtr& uh,
                     const ValuePtr& wv, const ValuePtr& uv, int iterations, Exponent e) {
    if (iterations < 1) throw std::invalid_argument("re_wkv_node: iterations must be >= 1");
    WkvParams ph{clamp_pos(wh->t), uh->t};
    WkvParams pv{clamp_pos(wv->t), uv->t};
    auto inputs = std::make_shared<std::vector<Tensor>>();  // v fed into each iteration
    Tensor cur = v->t;
    for (int it = 0; it < iterations; ++it) {
        inputs->push_back(cur);
        int dir = it % 2;
        cur = re_wkv_pass(k->t, cur, dir == 0 ? ph : pv, dir, e);
    }
    return make_node(std::move(cur), {k, v, wh, uh, wv, uv},
                     [k, v, wh, uh, wv, uv, ph, pv, inputs, iterations, e](Value& self) {
                         Tensor dk = Tensor::zeros(k->t.shape);
                         Tensor dwh = Tensor::zeros(ph.w.shape), duh = Tensor::zeros(ph.u.shape);
                         Tensor dwv = Tensor::zeros(pv.w.shape), duv = Tensor::zeros(pv.u.shape);
                         Tensor g = self.grad;
                         for (int it = iterations - 1; it >= 0; --it) {
                             int dir = it % 2;
                             Tensor dvin = Tensor::zeros(k->t.shape);
                             re_wkv_pass_backward(k->t, (*inputs)[it], dir == 0 ? ph : pv, dir, e, g,
                                                  dk, dvin, dir == 0 ? dwh : dwv,
                                                  dir == 0 ? duh : duv);
                             g = std::move(dvin);
                         }
                         auto acc = [](const ValuePtr& p, const Tensor& grad) {
                             if (!p->requires_grad) return;
                             Tensor& gp = p->ensure_grad();
                             for (std::int64_t i = 0; i < grad.size(); ++i) gp[i] += grad[i];
                         };
                         acc(k, dk);
                         acc(v, g);
                         // clamp pass-through: zero gradient where w was clamped
                         for (std::int64_t i = 0; i < dwh.size(); ++i)
                             if (wh->t[i] <= 1e-6) dwh[i] = 0.0;
                         for (std::int64_t i = 0; i < dwv.size(); ++i)
                             if (wv->t[i] <= 1e-6) dwv[i] = 0.0;
                         acc(wh, dwh);
                         acc(uh, duh);
                         acc(wv, dwv);
                         acc(uv, duv);
                     });
}

}  // namespace evr::wkv
