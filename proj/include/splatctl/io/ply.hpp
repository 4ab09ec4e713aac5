#pragma once

#include "splatctl/core.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace splatctl {

enum class PlyScalar { Float64, Float32 };

// Binary little-endian PLY with the 3DGS vertex layout:
// x y z nx ny nz f_dc_0..2 f_rest_0..(3B'-1) opacity scale_0..2 rot_0..3,
// raw parameters, zero normals, f_rest channel-major. Float64 round-trips
// bit-exactly; Float32 matches common viewers. The active SH degree travels
// in a header comment.
void export_ply(const GaussianSet& set, const std::filesystem::path& path, PlyScalar scalar = PlyScalar::Float64);

// Accepts float or double properties in the layout above; the SH degree is
// inferred from the f_rest count. Throws PlyHeaderError, PlyPropertyError,
// PlyTruncatedError.
GaussianSet import_ply(const std::filesystem::path& path);

// Names of the vertex properties for a given maximum SH degree.
std::vector<std::string> gaussian_ply_properties(int max_sh_degree);

// Point cloud with optional colors in [0, 1]: float x y z, uchar red green blue.
void write_points_ply(const std::filesystem::path& path, const std::vector<Vec3>& points,
                      const std::vector<Vec3>& colors);
// Colors default to 0.5 gray when absent.
void read_points_ply(const std::filesystem::path& path, std::vector<Vec3>& points, std::vector<Vec3>& colors);

} // namespace splatctl
