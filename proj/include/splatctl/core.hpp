#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace splatctl {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d; // quaternions are stored (w, x, y, z)
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kOpacityClampLo = 1e-6;
inline constexpr double kOpacityClampHi = 1.0 - 1e-6;

constexpr int sh_band_count(int degree) { return (degree + 1) * (degree + 1); }

// One Gaussian in raw (pre-activation) parameter space.
struct RawGaussian {
    Vec3 position = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Vec4 rotation{1.0, 0.0, 0.0, 0.0};
    double opacity_logit = 0.0;
    std::vector<double> sh; // 3 * bands, channel-major, DC first
};

// Index-level description of a structural change: `removed` lists indices
// (strictly increasing, pre-edit numbering) that were deleted, after which
// `appended` new entries were pushed to the back. Survivors keep their order.
struct TopologyEdit {
    std::vector<std::size_t> removed;
    std::size_t appended = 0;

    bool empty() const { return removed.empty() && appended == 0; }
};

// Structure-of-arrays Gaussian model. Every array shares the leading
// dimension size(); `ids` are stable handles that survive compaction.
class GaussianSet {
public:
    GaussianSet() = default;
    explicit GaussianSet(int max_sh_degree);

    std::size_t size() const { return opacity_logits.size(); }
    bool empty() const { return opacity_logits.empty(); }
    int max_sh_degree() const { return max_sh_degree_; }
    int bands() const { return sh_band_count(max_sh_degree_); }
    std::size_t sh_stride() const { return 3 * static_cast<std::size_t>(bands()); }

    // Throws ShapeError when array lengths disagree.
    void check_shapes() const;

    std::uint64_t append(const RawGaussian& g);
    RawGaussian get(std::size_t i) const;

    // Removes the given strictly increasing indices; returns the matching edit.
    TopologyEdit remove(std::span<const std::size_t> sorted_indices);
    void reserve(std::size_t n);

    std::span<double> sh_of(std::size_t i) { return {sh.data() + i * sh_stride(), sh_stride()}; }
    std::span<const double> sh_of(std::size_t i) const {
        return {sh.data() + i * sh_stride(), sh_stride()};
    }
    Vec3 position(std::size_t i) const { return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]}; }
    Vec3 log_scale(std::size_t i) const {
        return {log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]};
    }
    Vec4 rotation(std::size_t i) const {
        return {rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]};
    }

    std::vector<double> positions;      // N x 3
    std::vector<double> log_scales;     // N x 3
    std::vector<double> rotations;      // N x 4, unnormalized
    std::vector<double> opacity_logits; // N
    std::vector<double> sh;             // N x 3 x bands
    std::vector<std::uint64_t> ids;     // N
    int active_sh_degree = 0;

private:
    int max_sh_degree_ = 3;
    std::uint64_t next_id_ = 0;
};

// Activated, render-ready parameters. SH coefficients are not copied.
struct ActivatedSet {
    std::vector<Vec3> positions;
    std::vector<Vec3> scales;
    std::vector<Vec4> rotations; // unit quaternions
    std::vector<double> opacities;
    std::vector<double> quat_norms; // norms of the stored quaternions
};

double sigmoid(double x);

// Throws DegenerateRotationError on a zero-norm quaternion.
ActivatedSet activate(const GaussianSet& raw);

// Clamps to [1e-6, 1 - 1e-6]; inputs further than 1e-3 outside (0, 1) throw DomainError.
double opacity_to_logit(double alpha);
// Throws DomainError for non-positive or non-finite scales.
double scale_to_log(double s);

Vec4 normalize_quaternion(const Vec4& q);
Mat3 rotation_from_quaternion(const Vec4& unit_q);
// Sigma = R S S^T R^T
Mat3 build_covariance(const Vec3& scale, const Vec4& unit_q);

struct Camera {
    int width = 1;
    int height = 1;
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    Mat4 world_to_camera = Mat4::Identity();

    Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    Vec3 center() const { return -rotation().transpose() * translation(); }

    // Throws DomainError when the intrinsics or pose are invalid.
    void validate() const;
};

// Camera looking from `eye` at `target`, +y of the image pointing along -up.
Camera look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height,
                      double fx, double fy);

} // namespace splatctl
