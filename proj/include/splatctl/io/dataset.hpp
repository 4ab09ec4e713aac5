#pragma once

#include "splatctl/core.hpp"
#include "splatctl/image.hpp"
#include "splatctl/random.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace splatctl {

inline constexpr std::size_t kTestEvery = 8;

struct Dataset {
    std::vector<Camera> cameras;
    std::vector<Image> images;
    std::vector<std::string> names;
    std::vector<std::size_t> train; // ascending frame indices
    std::vector<std::size_t> test;  // exactly {i : i % 8 == 0}
    std::vector<Vec3> init_points;
    std::vector<Vec3> init_colors; // RGB in [0, 1]

    std::size_t size() const { return cameras.size(); }
    // Throws ShapeError when cameras, images and names disagree.
    void check() const;
};

// Recomputes `train` / `test` from the frame count.
void assign_split(Dataset& d);

// transforms.json (camera_angle_x, frames[].file_path, frames[].transform_matrix
// camera-to-world in OpenGL axes), PNG frames, optional points3d.ply.
// Throws ManifestError, EmptyDatasetError, ImageError, PoseError.
Dataset load_dataset(const std::filesystem::path& dir);

// Writes the layout load_dataset reads. Requires fx == fy, centered
// principal points and a shared resolution.
void save_dataset(const Dataset& d, const std::filesystem::path& dir);

// 1.1 x radius of the bounding sphere of the camera centers (around their mean).
double scene_extent(const std::vector<Camera>& cameras);

// One Gaussian per point: isotropic scale from the mean distance to the 3
// nearest neighbors, identity rotation, opacity 0.1, DC from color. Without
// points, `n_random_fallback` positions are drawn uniformly in the box
// [-box_half, box_half]^3 with uniform random colors.
GaussianSet init_gaussians(const std::vector<Vec3>& points, const std::vector<Vec3>& colors,
                           std::size_t n_random_fallback, std::uint64_t seed, int max_sh_degree = 3,
                           double box_half = 1.3);

inline constexpr double kInitOpacity = 0.1;

// SH DC coefficient whose evaluated color is `c` (before clamping).
double rgb_to_sh_dc(double c);
double sh_dc_to_rgb(double dc);

struct SynthOptions {
    std::size_t k = 64;
    std::uint64_t seed = 42;
    std::size_t n_views = 28;
    int resolution = 128;
    int max_sh_degree = 3;
    double camera_radius = 3.0;
    double camera_angle_x = 0.8;
    double init_noise = 0.05;
    int threads = 1;
};

struct SynthScene {
    GaussianSet ground_truth;
    Dataset dataset;
};

// Random Gaussians in the unit ball, cameras on a sphere around the origin,
// images rendered by the rasterizer, init points = truth + N(0, init_noise).
SynthScene synth_scene(const SynthOptions& opt);

} // namespace splatctl
