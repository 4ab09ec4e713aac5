#pragma once

#include "splatctl/core.hpp"
#include "splatctl/image.hpp"

#include <cstdint>
#include <vector>

namespace splatctl {

// Rasterizer conventions (3DGS defaults).
struct RenderSettings {
    double dilation = 0.3;          // added to the 2D covariance diagonal, pixels^2
    double alpha_cap = 0.99;
    double alpha_min = 1.0 / 255.0; // contributions below are skipped
    double transmittance_min = 1e-4;
    double near_plane = 0.01;
    double det_min = 1e-12; // pre-dilation 2D covariance determinant floor
    int tile_size = 16;
    int threads = 1;
};

struct Projected2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity(); // dilated
    double depth = 0.0;
    Vec3 sh_color = Vec3::Zero(); // after +0.5 shift and clamp at 0
    bool visible = false;
};

// Gradients (or any per-parameter quantity) shaped like a GaussianSet.
struct GaussianGrads {
    std::vector<double> positions;
    std::vector<double> log_scales;
    std::vector<double> rotations;
    std::vector<double> opacity_logits;
    std::vector<double> sh;

    static GaussianGrads zeros_like(const GaussianSet& set);
    std::size_t size() const { return opacity_logits.size(); }
    // Throws ShapeError unless every array matches `set`.
    void check_matches(const GaussianSet& set) const;
};

struct RenderBuffers {
    Image image;
    std::vector<double> final_transmittance; // H x W
    std::vector<Projected2D> projected;      // one per Gaussian, set order

    // Replay data for the backward pass.
    Camera camera;
    RenderSettings settings;
    std::size_t gaussian_count = 0;
    std::size_t sh_stride = 0;
    int sh_degree = 0;
    std::vector<std::uint32_t> order;        // visible Gaussians, ascending depth then index
    std::vector<std::uint32_t> tile_offsets; // CSR offsets, tiles row-major
    std::vector<std::uint32_t> tile_entries; // positions into `order`
    std::vector<std::uint32_t> n_contrib;    // per pixel: tile-list prefix actually traversed
    int tiles_x = 0;
    int tiles_y = 0;
};

// Projects every Gaussian: pinhole mean, EWA covariance with dilation,
// SH color at the view direction, visibility.
std::vector<Projected2D> project(const GaussianSet& set, const Camera& cam,
                                 const RenderSettings& settings = {});

RenderBuffers rasterize_forward(const GaussianSet& set, const Camera& cam,
                                const RenderSettings& settings = {});

// Exact gradients of sum(dL_dimage * image) w.r.t. every raw parameter of `set`.
// Throws ShapeError if `set` or `dL_dimage` do not match the forward call.
GaussianGrads rasterize_backward(const RenderBuffers& buffers, const GaussianSet& set,
                                 const Image& dL_dimage);

} // namespace splatctl
