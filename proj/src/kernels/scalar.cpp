#include "splatctl/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace splatctl::kernels {
namespace {

void exp_scalar(std::size_t n, const double* in, double* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(in[i]);
}

void composite_forward_scalar(const SplatBlock& s, const PixelBlock& p, const CompositeParams& cp) {
    std::size_t live = 0;
    for (std::size_t i = 0; i < p.count; ++i) live += p.done[i] == 0.0 ? 1 : 0;

    for (std::size_t k = 0; k < s.count && live > 0; ++k) {
        const double mx = s.mean_x[k], my = s.mean_y[k];
        const double a = s.conic_a[k], b = s.conic_b[k], c = s.conic_c[k];
        const double o = s.opacity[k];
        for (std::size_t i = 0; i < p.count; ++i) {
            if (p.done[i] != 0.0) continue;
            const double dx = p.px[i] - mx;
            const double dy = p.py[i] - my;
            const double power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
            if (power > 0.0) continue;
            const double alpha = std::min(cp.alpha_cap, o * std::exp(power));
            if (alpha < cp.alpha_min) continue;
            const double t = p.transmittance[i];
            const double t_next = t * (1.0 - alpha);
            if (t_next < cp.transmittance_min) {
                p.done[i] = 1.0;
                --live;
                continue;
            }
            const double w = alpha * t;
            p.out_r[i] += s.color_r[k] * w;
            p.out_g[i] += s.color_g[k] * w;
            p.out_b[i] += s.color_b[k] * w;
            p.transmittance[i] = t_next;
            p.n_contrib[i] = static_cast<double>(k + 1);
        }
    }
}

void composite_backward_scalar(const SplatBlock& s, const PixelBlock& p, const CompositeParams& cp,
                               const BackwardScratch& w, const SplatGrads& g) {
    double max_contrib = 0.0;
    for (std::size_t i = 0; i < p.count; ++i) {
        w.transmittance[i] = p.transmittance[i];
        w.acc_r[i] = w.acc_g[i] = w.acc_b[i] = 0.0;
        w.last_alpha[i] = 0.0;
        w.last_r[i] = w.last_g[i] = w.last_b[i] = 0.0;
        max_contrib = std::max(max_contrib, p.n_contrib[i]);
    }
    for (std::size_t k = 0; k < s.count; ++k) {
        g.mean_x[k] = g.mean_y[k] = 0.0;
        g.conic_a[k] = g.conic_b[k] = g.conic_c[k] = 0.0;
        g.opacity[k] = 0.0;
        g.color_r[k] = g.color_g[k] = g.color_b[k] = 0.0;
    }

    for (std::size_t k = static_cast<std::size_t>(max_contrib); k-- > 0;) {
        const double mx = s.mean_x[k], my = s.mean_y[k];
        const double a = s.conic_a[k], b = s.conic_b[k], c = s.conic_c[k];
        const double o = s.opacity[k];
        const double cr = s.color_r[k], cg = s.color_g[k], cb = s.color_b[k];
        const double pos = static_cast<double>(k);
        double gmx = 0, gmy = 0, ga = 0, gb = 0, gc = 0, go = 0, gr = 0, gg = 0, gbl = 0;
        for (std::size_t i = 0; i < p.count; ++i) {
            if (!(pos < p.n_contrib[i])) continue;
            const double dx = p.px[i] - mx;
            const double dy = p.py[i] - my;
            const double power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
            if (power > 0.0) continue;
            const double gauss = std::exp(power);
            const double raw = o * gauss;
            const double alpha = std::min(cp.alpha_cap, raw);
            if (alpha < cp.alpha_min) continue;

            const double t = w.transmittance[i] / (1.0 - alpha);
            w.transmittance[i] = t;
            const double weight = alpha * t;
            const double dr = p.out_r[i], dg = p.out_g[i], db = p.out_b[i];
            gr += weight * dr;
            gg += weight * dg;
            gbl += weight * db;

            const double la = w.last_alpha[i];
            const double acc_r = la * w.last_r[i] + (1.0 - la) * w.acc_r[i];
            const double acc_g = la * w.last_g[i] + (1.0 - la) * w.acc_g[i];
            const double acc_b = la * w.last_b[i] + (1.0 - la) * w.acc_b[i];
            w.acc_r[i] = acc_r;
            w.acc_g[i] = acc_g;
            w.acc_b[i] = acc_b;
            w.last_alpha[i] = alpha;
            w.last_r[i] = cr;
            w.last_g[i] = cg;
            w.last_b[i] = cb;

            const double dalpha = t * ((cr - acc_r) * dr + (cg - acc_g) * dg + (cb - acc_b) * db);
            const double draw = raw > cp.alpha_cap ? 0.0 : dalpha;
            go += gauss * draw;
            const double dpower = gauss * o * draw;
            gmx += dpower * (a * dx + b * dy);
            gmy += dpower * (c * dy + b * dx);
            ga += dpower * (-0.5 * dx * dx);
            gb += dpower * (-dx * dy);
            gc += dpower * (-0.5 * dy * dy);
        }
        g.mean_x[k] = gmx;
        g.mean_y[k] = gmy;
        g.conic_a[k] = ga;
        g.conic_b[k] = gb;
        g.conic_c[k] = gc;
        g.opacity[k] = go;
        g.color_r[k] = gr;
        g.color_g[k] = gg;
        g.color_b[k] = gbl;
    }
}

void adam_update_scalar(std::size_t n, double* param, double* m, double* v, const double* grad,
                        const AdamParams& ap) {
    const double c1 = 1.0 - ap.beta1;
    const double c2 = 1.0 - ap.beta2;
    for (std::size_t i = 0; i < n; ++i) {
        const double gi = grad[i];
        const double mi = ap.beta1 * m[i] + c1 * gi;
        const double vi = ap.beta2 * v[i] + c2 * (gi * gi);
        m[i] = mi;
        v[i] = vi;
        const double mhat = mi / ap.bias1;
        const double vhat = vi / ap.bias2;
        param[i] = param[i] - ap.lr * mhat / (std::sqrt(vhat) + ap.eps);
    }
}

void axpy_scalar(std::size_t n, double a, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

} // namespace

namespace detail {
const KernelTable kScalarTable{SimdLevel::Scalar,         exp_scalar,         composite_forward_scalar,
                               composite_backward_scalar, adam_update_scalar, axpy_scalar};
} // namespace detail

} // namespace splatctl::kernels
