// Compiled with -mavx2 -mfma -ffp-contract=off. Only reached through the
// dispatch table after a CPUID check.

#include "splatctl/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace splatctl::kernels {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// exp(x) for x in [-708, 709]: Cody-Waite reduction, degree-13 Taylor
// polynomial on |r| <= ln2/2, exponent built from integer bits.
inline __m256d exp_pd(__m256d x) {
    const __m256d log2e = _mm256_set1_pd(1.4426950408889634);
    const __m256d ln2_hi = _mm256_set1_pd(6.93147180369123816490e-01);
    const __m256d ln2_lo = _mm256_set1_pd(1.90821492927058770002e-10);
    const __m256d magic = _mm256_set1_pd(6755399441055744.0); // 2^52 + 2^51

    x = _mm256_max_pd(x, _mm256_set1_pd(-708.0));
    x = _mm256_min_pd(x, _mm256_set1_pd(709.0));
    const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d r = _mm256_fnmadd_pd(n, ln2_hi, x);
    r = _mm256_fnmadd_pd(n, ln2_lo, r);

    __m256d p = _mm256_set1_pd(1.0 / 6227020800.0); // 1/13!
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 479001600.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 39916800.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 3628800.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 362880.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 40320.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 5040.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 720.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 120.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 24.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 6.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(0.5));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));

    const __m256i ni = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(n, magic)), _mm256_castpd_si256(magic));
    const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(ni, _mm256_set1_epi64x(1023)), 52);
    return _mm256_mul_pd(p, _mm256_castsi256_pd(bits));
}

void exp_avx2(std::size_t n, const double* in, double* out) {
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) _mm256_storeu_pd(out + i, exp_pd(_mm256_loadu_pd(in + i)));
    if (i < n) {
        alignas(32) double tmp[kLanes] = {0.0, 0.0, 0.0, 0.0};
        std::copy(in + i, in + n, tmp);
        _mm256_store_pd(tmp, exp_pd(_mm256_load_pd(tmp)));
        std::copy(tmp, tmp + (n - i), out + i);
    }
}

inline __m256d power_of(__m256d dx, __m256d dy, __m256d a, __m256d b, __m256d c) {
    const __m256d quad = _mm256_fmadd_pd(a, _mm256_mul_pd(dx, dx), _mm256_mul_pd(c, _mm256_mul_pd(dy, dy)));
    return _mm256_fnmadd_pd(b, _mm256_mul_pd(dx, dy), _mm256_mul_pd(_mm256_set1_pd(-0.5), quad));
}

void composite_forward_avx2(const SplatBlock& s, const PixelBlock& p, const CompositeParams& cp) {
    const std::size_t n = padded(p.count);
    std::size_t live = 0;
    for (std::size_t i = 0; i < n; ++i) live += p.done[i] == 0.0 ? 1 : 0;

    const __m256d zero = _mm256_setzero_pd();
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d cap = _mm256_set1_pd(cp.alpha_cap);
    const __m256d amin = _mm256_set1_pd(cp.alpha_min);
    const __m256d tmin = _mm256_set1_pd(cp.transmittance_min);

    for (std::size_t k = 0; k < s.count && live > 0; ++k) {
        const __m256d mx = _mm256_set1_pd(s.mean_x[k]), my = _mm256_set1_pd(s.mean_y[k]);
        const __m256d a = _mm256_set1_pd(s.conic_a[k]), b = _mm256_set1_pd(s.conic_b[k]),
                      c = _mm256_set1_pd(s.conic_c[k]);
        const __m256d o = _mm256_set1_pd(s.opacity[k]);
        const __m256d cr = _mm256_set1_pd(s.color_r[k]), cg = _mm256_set1_pd(s.color_g[k]),
                      cb = _mm256_set1_pd(s.color_b[k]);
        const __m256d pos = _mm256_set1_pd(static_cast<double>(k + 1));
        for (std::size_t i = 0; i < n; i += kLanes) {
            const __m256d done = _mm256_load_pd(p.done + i);
            const __m256d active = _mm256_cmp_pd(done, zero, _CMP_EQ_OQ);
            if (_mm256_movemask_pd(active) == 0) continue;
            const __m256d dx = _mm256_sub_pd(_mm256_load_pd(p.px + i), mx);
            const __m256d dy = _mm256_sub_pd(_mm256_load_pd(p.py + i), my);
            const __m256d power = power_of(dx, dy, a, b, c);
            __m256d valid = _mm256_and_pd(active, _mm256_cmp_pd(power, zero, _CMP_LE_OQ));
            if (_mm256_movemask_pd(valid) == 0) continue;
            const __m256d alpha = _mm256_min_pd(cap, _mm256_mul_pd(o, exp_pd(power)));
            valid = _mm256_and_pd(valid, _mm256_cmp_pd(alpha, amin, _CMP_GE_OQ));
            if (_mm256_movemask_pd(valid) == 0) continue;
            const __m256d t = _mm256_load_pd(p.transmittance + i);
            const __m256d t_next = _mm256_mul_pd(t, _mm256_sub_pd(one, alpha));
            const __m256d below = _mm256_cmp_pd(t_next, tmin, _CMP_LT_OQ);
            const __m256d stop = _mm256_and_pd(valid, below);
            const __m256d comp = _mm256_andnot_pd(below, valid);
            const int stop_bits = _mm256_movemask_pd(stop);
            if (stop_bits != 0) {
                _mm256_store_pd(p.done + i, _mm256_blendv_pd(done, one, stop));
                live -= static_cast<std::size_t>(__builtin_popcount(static_cast<unsigned>(stop_bits)));
            }
            if (_mm256_movemask_pd(comp) == 0) continue;
            const __m256d w = _mm256_mul_pd(alpha, t);
            const __m256d r0 = _mm256_load_pd(p.out_r + i);
            const __m256d g0 = _mm256_load_pd(p.out_g + i);
            const __m256d b0 = _mm256_load_pd(p.out_b + i);
            _mm256_store_pd(p.out_r + i, _mm256_blendv_pd(r0, _mm256_fmadd_pd(cr, w, r0), comp));
            _mm256_store_pd(p.out_g + i, _mm256_blendv_pd(g0, _mm256_fmadd_pd(cg, w, g0), comp));
            _mm256_store_pd(p.out_b + i, _mm256_blendv_pd(b0, _mm256_fmadd_pd(cb, w, b0), comp));
            _mm256_store_pd(p.transmittance + i, _mm256_blendv_pd(t, t_next, comp));
            _mm256_store_pd(p.n_contrib + i, _mm256_blendv_pd(_mm256_load_pd(p.n_contrib + i), pos, comp));
        }
    }
}

void composite_backward_avx2(const SplatBlock& s, const PixelBlock& p, const CompositeParams& cp,
                             const BackwardScratch& w, const SplatGrads& g) {
    const std::size_t n = padded(p.count);
    double max_contrib = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
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

    const __m256d zero = _mm256_setzero_pd();
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d half = _mm256_set1_pd(-0.5);
    const __m256d cap = _mm256_set1_pd(cp.alpha_cap);
    const __m256d amin = _mm256_set1_pd(cp.alpha_min);

    for (std::size_t k = static_cast<std::size_t>(max_contrib); k-- > 0;) {
        const __m256d mx = _mm256_set1_pd(s.mean_x[k]), my = _mm256_set1_pd(s.mean_y[k]);
        const __m256d a = _mm256_set1_pd(s.conic_a[k]), b = _mm256_set1_pd(s.conic_b[k]),
                      c = _mm256_set1_pd(s.conic_c[k]);
        const __m256d o = _mm256_set1_pd(s.opacity[k]);
        const __m256d cr = _mm256_set1_pd(s.color_r[k]), cg = _mm256_set1_pd(s.color_g[k]),
                      cb = _mm256_set1_pd(s.color_b[k]);
        const __m256d pos = _mm256_set1_pd(static_cast<double>(k));
        __m256d gmx = zero, gmy = zero, ga = zero, gb = zero, gc = zero, go = zero;
        __m256d gr = zero, gg = zero, gbl = zero;
        for (std::size_t i = 0; i < n; i += kLanes) {
            const __m256d in_list = _mm256_cmp_pd(pos, _mm256_load_pd(p.n_contrib + i), _CMP_LT_OQ);
            if (_mm256_movemask_pd(in_list) == 0) continue;
            const __m256d dx = _mm256_sub_pd(_mm256_load_pd(p.px + i), mx);
            const __m256d dy = _mm256_sub_pd(_mm256_load_pd(p.py + i), my);
            const __m256d power = power_of(dx, dy, a, b, c);
            __m256d valid = _mm256_and_pd(in_list, _mm256_cmp_pd(power, zero, _CMP_LE_OQ));
            const __m256d gauss = exp_pd(power);
            const __m256d raw = _mm256_mul_pd(o, gauss);
            const __m256d alpha = _mm256_min_pd(cap, raw);
            valid = _mm256_and_pd(valid, _mm256_cmp_pd(alpha, amin, _CMP_GE_OQ));
            if (_mm256_movemask_pd(valid) == 0) continue;

            const __m256d t_prev = _mm256_load_pd(w.transmittance + i);
            const __m256d t = _mm256_div_pd(t_prev, _mm256_sub_pd(one, alpha));
            _mm256_store_pd(w.transmittance + i, _mm256_blendv_pd(t_prev, t, valid));
            const __m256d weight = _mm256_and_pd(valid, _mm256_mul_pd(alpha, t));
            const __m256d dr = _mm256_load_pd(p.out_r + i);
            const __m256d dg = _mm256_load_pd(p.out_g + i);
            const __m256d db = _mm256_load_pd(p.out_b + i);
            gr = _mm256_fmadd_pd(weight, dr, gr);
            gg = _mm256_fmadd_pd(weight, dg, gg);
            gbl = _mm256_fmadd_pd(weight, db, gbl);

            const __m256d la = _mm256_load_pd(w.last_alpha + i);
            const __m256d keep = _mm256_sub_pd(one, la);
            const __m256d old_r = _mm256_load_pd(w.acc_r + i);
            const __m256d old_g = _mm256_load_pd(w.acc_g + i);
            const __m256d old_b = _mm256_load_pd(w.acc_b + i);
            const __m256d acc_r = _mm256_fmadd_pd(la, _mm256_load_pd(w.last_r + i), _mm256_mul_pd(keep, old_r));
            const __m256d acc_g = _mm256_fmadd_pd(la, _mm256_load_pd(w.last_g + i), _mm256_mul_pd(keep, old_g));
            const __m256d acc_b = _mm256_fmadd_pd(la, _mm256_load_pd(w.last_b + i), _mm256_mul_pd(keep, old_b));
            _mm256_store_pd(w.acc_r + i, _mm256_blendv_pd(old_r, acc_r, valid));
            _mm256_store_pd(w.acc_g + i, _mm256_blendv_pd(old_g, acc_g, valid));
            _mm256_store_pd(w.acc_b + i, _mm256_blendv_pd(old_b, acc_b, valid));
            _mm256_store_pd(w.last_alpha + i, _mm256_blendv_pd(la, alpha, valid));
            _mm256_store_pd(w.last_r + i, _mm256_blendv_pd(_mm256_load_pd(w.last_r + i), cr, valid));
            _mm256_store_pd(w.last_g + i, _mm256_blendv_pd(_mm256_load_pd(w.last_g + i), cg, valid));
            _mm256_store_pd(w.last_b + i, _mm256_blendv_pd(_mm256_load_pd(w.last_b + i), cb, valid));

            __m256d dalpha = _mm256_mul_pd(_mm256_sub_pd(cr, acc_r), dr);
            dalpha = _mm256_fmadd_pd(_mm256_sub_pd(cg, acc_g), dg, dalpha);
            dalpha = _mm256_fmadd_pd(_mm256_sub_pd(cb, acc_b), db, dalpha);
            dalpha = _mm256_mul_pd(dalpha, t);
            const __m256d uncapped = _mm256_cmp_pd(raw, cap, _CMP_LE_OQ);
            const __m256d draw = _mm256_and_pd(_mm256_and_pd(valid, uncapped), dalpha);
            go = _mm256_fmadd_pd(gauss, draw, go);
            const __m256d dpower = _mm256_mul_pd(_mm256_mul_pd(gauss, o), draw);
            gmx = _mm256_fmadd_pd(dpower, _mm256_fmadd_pd(a, dx, _mm256_mul_pd(b, dy)), gmx);
            gmy = _mm256_fmadd_pd(dpower, _mm256_fmadd_pd(c, dy, _mm256_mul_pd(b, dx)), gmy);
            ga = _mm256_fmadd_pd(dpower, _mm256_mul_pd(half, _mm256_mul_pd(dx, dx)), ga);
            gb = _mm256_fnmadd_pd(dpower, _mm256_mul_pd(dx, dy), gb);
            gc = _mm256_fmadd_pd(dpower, _mm256_mul_pd(half, _mm256_mul_pd(dy, dy)), gc);
        }
        g.mean_x[k] = hsum(gmx);
        g.mean_y[k] = hsum(gmy);
        g.conic_a[k] = hsum(ga);
        g.conic_b[k] = hsum(gb);
        g.conic_c[k] = hsum(gc);
        g.opacity[k] = hsum(go);
        g.color_r[k] = hsum(gr);
        g.color_g[k] = hsum(gg);
        g.color_b[k] = hsum(gbl);
    }
}

// Same operation order as the scalar reference, no fused multiply-adds, so
// results are bit-identical.
void adam_update_avx2(std::size_t n, double* param, double* m, double* v, const double* grad,
                      const AdamParams& ap) {
    const __m256d b1 = _mm256_set1_pd(ap.beta1), b2 = _mm256_set1_pd(ap.beta2);
    const __m256d c1 = _mm256_set1_pd(1.0 - ap.beta1), c2 = _mm256_set1_pd(1.0 - ap.beta2);
    const __m256d bias1 = _mm256_set1_pd(ap.bias1), bias2 = _mm256_set1_pd(ap.bias2);
    const __m256d lr = _mm256_set1_pd(ap.lr), eps = _mm256_set1_pd(ap.eps);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m256d gi = _mm256_loadu_pd(grad + i);
        const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(c1, gi));
        const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                         _mm256_mul_pd(c2, _mm256_mul_pd(gi, gi)));
        _mm256_storeu_pd(m + i, mi);
        _mm256_storeu_pd(v + i, vi);
        const __m256d mhat = _mm256_div_pd(mi, bias1);
        const __m256d vhat = _mm256_div_pd(vi, bias2);
        const __m256d step = _mm256_div_pd(_mm256_mul_pd(lr, mhat), _mm256_add_pd(_mm256_sqrt_pd(vhat), eps));
        _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
    }
    if (i < n) detail::kScalarTable.adam_update(n - i, param + i, m + i, v + i, grad + i, ap);
}

void axpy_avx2(std::size_t n, double a, const double* x, double* y) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, _mm256_loadu_pd(x + i))));
    }
    for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

} // namespace

namespace detail {
const KernelTable kAvx2Table{SimdLevel::Avx2,         exp_avx2,         composite_forward_avx2,
                             composite_backward_avx2, adam_update_avx2, axpy_avx2};
} // namespace detail

} // namespace splatctl::kernels

#endif
