#pragma once

#include "splatctl/core.hpp"

#include <array>
#include <span>

namespace splatctl::sh {

inline constexpr int kMaxBands = 16;
inline constexpr double kC0 = 0.28209479177387814;

// Real SH basis (3DGS sign convention) at a unit direction, up to `degree`.
// Entries past sh_band_count(degree) are zero.
std::array<double, kMaxBands> basis(int degree, const Vec3& dir);

// Raw SH color (before the +0.5 shift). `coeffs` is 3 x bands, channel-major.
Vec3 evaluate(int degree, int bands, std::span<const double> coeffs, const Vec3& dir);

// Accumulates d(loss)/d(coeffs) into `dcoeffs` and returns d(loss)/d(dir),
// given d(loss)/d(raw color).
Vec3 backward(int degree, int bands, std::span<const double> coeffs, const Vec3& dir,
              const Vec3& dcolor, std::span<double> dcoeffs);

} // namespace splatctl::sh
