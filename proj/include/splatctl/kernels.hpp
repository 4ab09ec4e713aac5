#pragma once

// Data-parallel inner loops. Each kernel has a scalar reference and, on x86-64,
// an AVX2+FMA variant selected at runtime. The SPLATCTL_SIMD environment
// variable (scalar | avx2) overrides detection.

#include <cstddef>
#include <string_view>

namespace splatctl::kernels {

enum class SimdLevel { Scalar, Avx2 };

std::string_view level_name(SimdLevel level);

inline constexpr std::size_t kLanes = 4;
inline constexpr std::size_t padded(std::size_t n) { return (n + kLanes - 1) / kLanes * kLanes; }

struct CompositeParams {
    double alpha_cap = 0.99;
    double alpha_min = 1.0 / 255.0;
    double transmittance_min = 1e-4;
};

// Depth-ordered splats of one tile, structure-of-arrays.
struct SplatBlock {
    std::size_t count = 0;
    const double* mean_x = nullptr;
    const double* mean_y = nullptr;
    const double* conic_a = nullptr; // inverse 2D covariance [[a, b], [b, c]]
    const double* conic_b = nullptr;
    const double* conic_c = nullptr;
    const double* opacity = nullptr;
    const double* color_r = nullptr;
    const double* color_g = nullptr;
    const double* color_b = nullptr;
};

// Per-pixel state of one tile. All arrays hold padded(count) entries; padding
// lanes must start with transmittance 0 so they never composite.
struct PixelBlock {
    std::size_t count = 0;
    const double* px = nullptr; // sample positions (pixel centers)
    const double* py = nullptr;
    double* transmittance = nullptr; // forward: in 1, out final; backward: in final (read-only use)
    double* out_r = nullptr;         // forward output color / backward dL/dC
    double* out_g = nullptr;
    double* out_b = nullptr;
    double* n_contrib = nullptr; // list position + 1 of the last composited splat
    double* done = nullptr;      // forward scratch
};

// Per-splat gradients of one tile, written (not accumulated).
struct SplatGrads {
    double* mean_x = nullptr;
    double* mean_y = nullptr;
    double* conic_a = nullptr;
    double* conic_b = nullptr;
    double* conic_c = nullptr;
    double* opacity = nullptr;
    double* color_r = nullptr;
    double* color_g = nullptr;
    double* color_b = nullptr;
};

// Scratch for the backward pass: 8 arrays of padded(count) doubles.
struct BackwardScratch {
    double* transmittance = nullptr;
    double* acc_r = nullptr;
    double* acc_g = nullptr;
    double* acc_b = nullptr;
    double* last_alpha = nullptr;
    double* last_r = nullptr;
    double* last_g = nullptr;
    double* last_b = nullptr;
};

struct AdamParams {
    double lr = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
    double bias1 = 1.0; // 1 - beta1^t
    double bias2 = 1.0; // 1 - beta2^t
};

struct KernelTable {
    SimdLevel level;
    void (*exp)(std::size_t n, const double* in, double* out);
    void (*composite_forward)(const SplatBlock& splats, const PixelBlock& pixels,
                              const CompositeParams& params);
    void (*composite_backward)(const SplatBlock& splats, const PixelBlock& pixels,
                               const CompositeParams& params, const BackwardScratch& scratch,
                               const SplatGrads& grads);
    void (*adam_update)(std::size_t n, double* param, double* m, double* v, const double* grad,
                        const AdamParams& params);
    // y += a * x
    void (*axpy)(std::size_t n, double a, const double* x, double* y);
};

bool supported(SimdLevel level);
// Throws DomainError when `level` is not supported on this machine.
const KernelTable& table_for(SimdLevel level);
const KernelTable& active();
void set_active(SimdLevel level);

namespace detail {
extern const KernelTable kScalarTable;
#if defined(__x86_64__) || defined(_M_X64)
extern const KernelTable kAvx2Table;
#endif
} // namespace detail

} // namespace splatctl::kernels
