#include "splatctl/sh.hpp"

namespace splatctl::sh {
namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                          -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                          0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                          -0.5900435899266435};

// Gradients of each basis function w.r.t. the (unnormalized-treated) direction.
std::array<Vec3, kMaxBands> basis_gradient(int degree, const Vec3& d) {
    std::array<Vec3, kMaxBands> g;
    g.fill(Vec3::Zero());
    const double x = d.x(), y = d.y(), z = d.z();
    if (degree >= 1) {
        g[1] = {0.0, -kC1, 0.0};
        g[2] = {0.0, 0.0, kC1};
        g[3] = {-kC1, 0.0, 0.0};
    }
    if (degree >= 2) {
        g[4] = {kC2[0] * y, kC2[0] * x, 0.0};
        g[5] = {0.0, kC2[1] * z, kC2[1] * y};
        g[6] = {-2.0 * kC2[2] * x, -2.0 * kC2[2] * y, 4.0 * kC2[2] * z};
        g[7] = {kC2[3] * z, 0.0, kC2[3] * x};
        g[8] = {2.0 * kC2[4] * x, -2.0 * kC2[4] * y, 0.0};
    }
    if (degree >= 3) {
        const double xx = x * x, yy = y * y, zz = z * z;
        g[9] = {6.0 * kC3[0] * x * y, kC3[0] * (3.0 * xx - 3.0 * yy), 0.0};
        g[10] = {kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y};
        g[11] = {-2.0 * kC3[2] * x * y, kC3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * kC3[2] * y * z};
        g[12] = {-6.0 * kC3[3] * x * z, -6.0 * kC3[3] * y * z, kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)};
        g[13] = {kC3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * kC3[4] * x * y, 8.0 * kC3[4] * x * z};
        g[14] = {2.0 * kC3[5] * x * z, -2.0 * kC3[5] * y * z, kC3[5] * (xx - yy)};
        g[15] = {kC3[6] * (3.0 * xx - 3.0 * yy), -6.0 * kC3[6] * x * y, 0.0};
    }
    return g;
}

} // namespace

std::array<double, kMaxBands> basis(int degree, const Vec3& d) {
    std::array<double, kMaxBands> b{};
    const double x = d.x(), y = d.y(), z = d.z();
    b[0] = kC0;
    if (degree >= 1) {
        b[1] = -kC1 * y;
        b[2] = kC1 * z;
        b[3] = -kC1 * x;
    }
    if (degree >= 2) {
        const double xx = x * x, yy = y * y, zz = z * z;
        b[4] = kC2[0] * x * y;
        b[5] = kC2[1] * y * z;
        b[6] = kC2[2] * (2.0 * zz - xx - yy);
        b[7] = kC2[3] * x * z;
        b[8] = kC2[4] * (xx - yy);
        if (degree >= 3) {
            b[9] = kC3[0] * y * (3.0 * xx - yy);
            b[10] = kC3[1] * x * y * z;
            b[11] = kC3[2] * y * (4.0 * zz - xx - yy);
            b[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = kC3[4] * x * (4.0 * zz - xx - yy);
            b[14] = kC3[5] * z * (xx - yy);
            b[15] = kC3[6] * x * (xx - 3.0 * yy);
        }
    }
    return b;
}

Vec3 evaluate(int degree, int bands, std::span<const double> coeffs, const Vec3& dir) {
    const auto b = basis(degree, dir);
    const int used = sh_band_count(degree);
    Vec3 color = Vec3::Zero();
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = 0; k < used; ++k) acc += coeffs[c * bands + k] * b[k];
        color[c] = acc;
    }
    return color;
}

Vec3 backward(int degree, int bands, std::span<const double> coeffs, const Vec3& dir,
              const Vec3& dcolor, std::span<double> dcoeffs) {
    const auto b = basis(degree, dir);
    const int used = sh_band_count(degree);
    for (int c = 0; c < 3; ++c) {
        for (int k = 0; k < used; ++k) dcoeffs[c * bands + k] += dcolor[c] * b[k];
    }
    if (degree == 0) return Vec3::Zero();
    const auto g = basis_gradient(degree, dir);
    Vec3 ddir = Vec3::Zero();
    for (int k = 1; k < used; ++k) {
        double w = 0.0;
        for (int c = 0; c < 3; ++c) w += dcolor[c] * coeffs[c * bands + k];
        ddir += w * g[k];
    }
    return ddir;
}

} // namespace splatctl::sh
