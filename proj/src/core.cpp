#include "splatctl/core.hpp"

#include "splatctl/error.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <string>

namespace splatctl {

GaussianSet::GaussianSet(int max_sh_degree) : max_sh_degree_(max_sh_degree) {
    if (max_sh_degree < 0 || max_sh_degree > 3) {
        throw DomainError("SH degree must lie in [0, 3], got " + std::to_string(max_sh_degree));
    }
}

void GaussianSet::check_shapes() const {
    const std::size_t n = size();
    if (positions.size() != 3 * n || log_scales.size() != 3 * n || rotations.size() != 4 * n ||
        sh.size() != sh_stride() * n || ids.size() != n) {
        throw ShapeError("GaussianSet arrays disagree on the Gaussian count");
    }
    if (active_sh_degree < 0 || active_sh_degree > max_sh_degree_) {
        throw ShapeError("active SH degree outside [0, max degree]");
    }
}

void GaussianSet::reserve(std::size_t n) {
    positions.reserve(3 * n);
    log_scales.reserve(3 * n);
    rotations.reserve(4 * n);
    opacity_logits.reserve(n);
    sh.reserve(sh_stride() * n);
    ids.reserve(n);
}

std::uint64_t GaussianSet::append(const RawGaussian& g) {
    if (g.sh.size() != sh_stride()) {
        throw ShapeError("appended Gaussian has " + std::to_string(g.sh.size()) +
                         " SH coefficients, expected " + std::to_string(sh_stride()));
    }
    positions.insert(positions.end(), g.position.data(), g.position.data() + 3);
    log_scales.insert(log_scales.end(), g.log_scale.data(), g.log_scale.data() + 3);
    rotations.insert(rotations.end(), g.rotation.data(), g.rotation.data() + 4);
    opacity_logits.push_back(g.opacity_logit);
    sh.insert(sh.end(), g.sh.begin(), g.sh.end());
    ids.push_back(next_id_);
    return next_id_++;
}

RawGaussian GaussianSet::get(std::size_t i) const {
    RawGaussian g;
    g.position = position(i);
    g.log_scale = log_scale(i);
    g.rotation = rotation(i);
    g.opacity_logit = opacity_logits[i];
    auto coeffs = sh_of(i);
    g.sh.assign(coeffs.begin(), coeffs.end());
    return g;
}

namespace {

template <typename T>
void compact(std::vector<T>& v, std::size_t width, std::span<const std::size_t> removed) {
    std::size_t write = 0;
    std::size_t r = 0;
    const std::size_t n = v.size() / width;
    for (std::size_t i = 0; i < n; ++i) {
        if (r < removed.size() && removed[r] == i) {
            ++r;
            continue;
        }
        if (write != i) {
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * width), width,
                        v.begin() + static_cast<std::ptrdiff_t>(write * width));
        }
        ++write;
    }
    v.resize(write * width);
}

} // namespace

TopologyEdit GaussianSet::remove(std::span<const std::size_t> sorted_indices) {
    for (std::size_t k = 0; k < sorted_indices.size(); ++k) {
        if (sorted_indices[k] >= size() || (k > 0 && sorted_indices[k] <= sorted_indices[k - 1])) {
            throw ShapeError("removal indices must be strictly increasing and in range");
        }
    }
    compact(positions, 3, sorted_indices);
    compact(log_scales, 3, sorted_indices);
    compact(rotations, 4, sorted_indices);
    compact(opacity_logits, 1, sorted_indices);
    compact(sh, sh_stride(), sorted_indices);
    compact(ids, 1, sorted_indices);
    return TopologyEdit{{sorted_indices.begin(), sorted_indices.end()}, 0};
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec4 normalize_quaternion(const Vec4& q) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw DegenerateRotationError("quaternion has zero or non-finite norm");
    }
    return q / n;
}

ActivatedSet activate(const GaussianSet& raw) {
    raw.check_shapes();
    const std::size_t n = raw.size();
    ActivatedSet out;
    out.positions.resize(n);
    out.scales.resize(n);
    out.rotations.resize(n);
    out.opacities.resize(n);
    out.quat_norms.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.positions[i] = raw.position(i);
        out.scales[i] = raw.log_scale(i).array().exp();
        const Vec4 q = raw.rotation(i);
        out.rotations[i] = normalize_quaternion(q);
        out.quat_norms[i] = q.norm();
        out.opacities[i] = sigmoid(raw.opacity_logits[i]);
    }
    return out;
}

double opacity_to_logit(double alpha) {
    if (!std::isfinite(alpha) || alpha < -1e-3 || alpha > 1.0 + 1e-3) {
        throw DomainError("opacity " + std::to_string(alpha) + " is outside (0, 1)");
    }
    const double a = std::clamp(alpha, kOpacityClampLo, kOpacityClampHi);
    return std::log(a / (1.0 - a));
}

double scale_to_log(double s) {
    if (!(s > 0.0) || !std::isfinite(s)) {
        throw DomainError("scale must be positive and finite");
    }
    return std::log(s);
}

Mat3 rotation_from_quaternion(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 build_covariance(const Vec3& scale, const Vec4& unit_q) {
    const Mat3 m = rotation_from_quaternion(unit_q) * scale.asDiagonal();
    Mat3 sigma = m * m.transpose();
    // Exact symmetry regardless of rounding in the product.
    return 0.5 * (sigma + sigma.transpose());
}

void Camera::validate() const {
    if (width < 1 || height < 1) throw DomainError("camera size must be at least 1x1");
    if (!(fx > 0.0) || !(fy > 0.0)) throw DomainError("focal lengths must be positive");
    const Mat3 r = rotation();
    if (((r * r.transpose()) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
        throw DomainError("world_to_camera rotation block is not orthonormal");
    }
}

Camera look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height,
                      double fx, double fy) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 down = -(up - up.dot(forward) * forward);
    if (down.norm() < 1e-12) throw DomainError("look-at up vector is parallel to the view direction");
    down.normalize();
    const Vec3 right = down.cross(forward);
    Mat3 r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.world_to_camera.setIdentity();
    cam.world_to_camera.topLeftCorner<3, 3>() = r;
    cam.world_to_camera.topRightCorner<3, 1>() = -r * eye;
    return cam;
}

} // namespace splatctl
