#include "splatctl/io/dataset.hpp"

#include "splatctl/error.hpp"
#include "splatctl/io/ply.hpp"
#include "splatctl/io/png.hpp"
#include "splatctl/render.hpp"
#include "splatctl/sh.hpp"

#include <Eigen/LU>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace splatctl {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// OpenGL camera axes (x right, y up, z backward) to x right, y down, z forward.
const Mat4 kGlFlip = Eigen::Vector4d(1.0, -1.0, -1.0, 1.0).asDiagonal();

fs::path resolve_frame(const fs::path& dir, const std::string& file_path) {
    fs::path p = dir / file_path;
    if (!p.has_extension()) p += ".png";
    return p;
}

Mat4 parse_matrix(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 4) throw ManifestError(where + ": transform_matrix must be 4x4");
    Mat4 m;
    for (int r = 0; r < 4; ++r) {
        if (!j[r].is_array() || j[r].size() != 4) throw ManifestError(where + ": transform_matrix must be 4x4");
        for (int c = 0; c < 4; ++c) {
            if (!j[r][c].is_number()) throw ManifestError(where + ": transform_matrix entries must be numbers");
            m(r, c) = j[r][c].get<double>();
        }
    }
    return m;
}

// Mean distance to the (up to) 3 nearest neighbors, via a sweep over x-sorted points.
std::vector<double> knn3_mean_distance(const std::vector<Vec3>& pts) {
    const std::size_t n = pts.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pts[a].x() < pts[b].x() || (pts[a].x() == pts[b].x() && a < b);
    });
    std::vector<double> out(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const Vec3& p = pts[order[r]];
        double best[3] = {INFINITY, INFINITY, INFINITY}; // squared, ascending
        auto offer = [&](std::size_t j) {
            const double d2 = (pts[j] - p).squaredNorm();
            if (d2 >= best[2]) return;
            best[2] = d2;
            if (best[2] < best[1]) std::swap(best[2], best[1]);
            if (best[1] < best[0]) std::swap(best[1], best[0]);
        };
        for (std::size_t s = r + 1; s < n; ++s) {
            const double dx = pts[order[s]].x() - p.x();
            if (dx * dx >= best[2]) break;
            offer(order[s]);
        }
        for (std::size_t s = r; s-- > 0;) {
            const double dx = p.x() - pts[order[s]].x();
            if (dx * dx >= best[2]) break;
            offer(order[s]);
        }
        double sum = 0.0;
        int cnt = 0;
        for (double b : best) {
            if (std::isfinite(b)) {
                sum += std::sqrt(b);
                ++cnt;
            }
        }
        out[order[r]] = cnt > 0 ? sum / cnt : 0.0;
    }
    return out;
}

} // namespace

void Dataset::check() const {
    if (images.size() != cameras.size() || names.size() != cameras.size()) {
        throw ShapeError("dataset cameras, images and names differ in length");
    }
    if (init_colors.size() != init_points.size()) throw ShapeError("init points and colors differ in length");
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        if (images[i].width != cameras[i].width || images[i].height != cameras[i].height) {
            throw ShapeError(fmt::format("frame {} image size differs from its camera", i));
        }
    }
}

void assign_split(Dataset& d) {
    d.train.clear();
    d.test.clear();
    for (std::size_t i = 0; i < d.size(); ++i) (i % kTestEvery == 0 ? d.test : d.train).push_back(i);
}

Dataset load_dataset(const fs::path& dir) {
    const fs::path manifest = dir / "transforms.json";
    std::ifstream in(manifest);
    if (!in) throw ManifestError("missing manifest: " + manifest.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ManifestError(manifest.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("camera_angle_x") || !j["camera_angle_x"].is_number()) {
        throw ManifestError(manifest.string() + ": camera_angle_x missing");
    }
    const double angle_x = j["camera_angle_x"].get<double>();
    if (!(angle_x > 0.0 && angle_x < std::numbers::pi)) throw ManifestError(manifest.string() + ": camera_angle_x out of range");
    if (!j.contains("frames") || !j["frames"].is_array() || j["frames"].empty()) {
        throw EmptyDatasetError(manifest.string() + ": no frames");
    }

    Dataset d;
    for (std::size_t i = 0; i < j["frames"].size(); ++i) {
        const json& f = j["frames"][i];
        const std::string where = fmt::format("{} frame {}", manifest.string(), i);
        if (!f.contains("file_path") || !f["file_path"].is_string()) throw ManifestError(where + ": file_path missing");
        if (!f.contains("transform_matrix")) throw ManifestError(where + ": transform_matrix missing");
        const std::string name = f["file_path"].get<std::string>();
        Image img = read_png(resolve_frame(dir, name));

        const Mat4 c2w = parse_matrix(f["transform_matrix"], where) * kGlFlip;
        Eigen::FullPivLU<Mat4> lu(c2w);
        if (!lu.isInvertible() || std::abs(c2w.topLeftCorner<3, 3>().determinant()) < 1e-9) {
            throw PoseError(where + ": camera-to-world matrix is not invertible");
        }
        Camera cam;
        cam.width = img.width;
        cam.height = img.height;
        cam.fx = cam.fy = 0.5 * img.width / std::tan(0.5 * angle_x);
        cam.cx = 0.5 * img.width;
        cam.cy = 0.5 * img.height;
        cam.world_to_camera = lu.inverse();
        try {
            cam.validate();
        } catch (const DomainError& e) {
            throw PoseError(where + ": " + e.what());
        }
        d.cameras.push_back(cam);
        d.images.push_back(std::move(img));
        d.names.push_back(name);
    }
    const fs::path points = dir / "points3d.ply";
    if (fs::exists(points)) read_points_ply(points, d.init_points, d.init_colors);
    assign_split(d);
    d.check();
    return d;
}

void save_dataset(const Dataset& d, const fs::path& dir) {
    d.check();
    if (d.size() == 0) throw EmptyDatasetError("refusing to save an empty dataset");
    const Camera& c0 = d.cameras.front();
    for (const Camera& c : d.cameras) {
        if (c.width != c0.width || c.height != c0.height || c.fx != c0.fx || c.fy != c.fx ||
            c.cx != 0.5 * c.width || c.cy != 0.5 * c.height) {
            throw DomainError("manifest layout needs shared square-pixel centered intrinsics");
        }
    }
    fs::create_directories(dir / "images");
    json j;
    j["camera_angle_x"] = 2.0 * std::atan(0.5 * c0.width / c0.fx);
    j["frames"] = json::array();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const std::string name = fmt::format("images/r_{:03d}", i);
        write_png(dir / (name + ".png"), d.images[i]);
        const Mat4 c2w = d.cameras[i].world_to_camera.inverse() * kGlFlip;
        json m = json::array();
        for (int r = 0; r < 4; ++r) m.push_back({c2w(r, 0), c2w(r, 1), c2w(r, 2), c2w(r, 3)});
        j["frames"].push_back({{"file_path", name}, {"transform_matrix", m}});
    }
    std::ofstream out(dir / "transforms.json");
    out << j.dump(2) << '\n';
    if (!out) throw DataError("cannot write manifest in " + dir.string());
    if (!d.init_points.empty()) write_points_ply(dir / "points3d.ply", d.init_points, d.init_colors);
}

double scene_extent(const std::vector<Camera>& cameras) {
    if (cameras.empty()) return 1.0;
    Vec3 mean = Vec3::Zero();
    for (const Camera& c : cameras) mean += c.center();
    mean /= static_cast<double>(cameras.size());
    double r = 0.0;
    for (const Camera& c : cameras) r = std::max(r, (c.center() - mean).norm());
    return 1.1 * (r > 0.0 ? r : 1.0);
}

double rgb_to_sh_dc(double c) { return (c - 0.5) / sh::kC0; }
double sh_dc_to_rgb(double dc) { return dc * sh::kC0 + 0.5; }

GaussianSet init_gaussians(const std::vector<Vec3>& points, const std::vector<Vec3>& colors,
                           std::size_t n_random_fallback, std::uint64_t seed, int max_sh_degree, double box_half) {
    if (!colors.empty() && colors.size() != points.size()) throw ShapeError("point and color counts differ");
    std::vector<Vec3> pts = points;
    std::vector<Vec3> cols = colors;
    if (pts.empty()) {
        Rng rng(seed);
        for (std::size_t i = 0; i < n_random_fallback; ++i) {
            Vec3 p, c;
            for (int a = 0; a < 3; ++a) p[a] = rng.uniform(-box_half, box_half);
            for (int a = 0; a < 3; ++a) c[a] = rng.uniform();
            pts.push_back(p);
            cols.push_back(c);
        }
    }
    if (cols.empty()) cols.assign(pts.size(), Vec3::Constant(0.5));

    const std::vector<double> dist = knn3_mean_distance(pts);
    const double log_floor = std::log(1e-7);
    GaussianSet set(max_sh_degree);
    set.reserve(pts.size());
    RawGaussian g;
    g.sh.assign(set.sh_stride(), 0.0);
    const auto bands = static_cast<std::size_t>(set.bands());
    g.opacity_logit = opacity_to_logit(kInitOpacity);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        g.position = pts[i];
        const double ls = dist[i] > 0.0 ? std::max(std::log(dist[i]), log_floor) : log_floor;
        g.log_scale = Vec3::Constant(ls);
        for (std::size_t c = 0; c < 3; ++c) g.sh[c * bands] = rgb_to_sh_dc(cols[i][static_cast<int>(c)]);
        set.append(g);
    }
    return set;
}

SynthScene synth_scene(const SynthOptions& opt) {
    if (opt.k == 0) throw DomainError("synth_scene needs k >= 1");
    if (opt.n_views == 0) throw DomainError("synth_scene needs at least one view");
    if (opt.resolution <= 0) throw DomainError("synth_scene resolution must be positive");
    Rng rng(opt.seed);
    SynthScene scene;
    GaussianSet& gt = scene.ground_truth;
    gt = GaussianSet(opt.max_sh_degree);
    const auto bands = static_cast<std::size_t>(gt.bands());
    std::vector<Vec3> colors;
    RawGaussian g;
    g.sh.assign(gt.sh_stride(), 0.0);
    const double log_lo = std::log(0.02);
    const double log_hi = std::log(0.15);
    for (std::size_t i = 0; i < opt.k; ++i) {
        Vec3 p;
        do {
            for (int a = 0; a < 3; ++a) p[a] = rng.uniform(-1.0, 1.0);
        } while (p.squaredNorm() > 1.0);
        g.position = p;
        for (int a = 0; a < 3; ++a) g.log_scale[a] = rng.uniform(log_lo, log_hi);
        Vec4 q;
        do {
            for (int a = 0; a < 4; ++a) q[a] = rng.normal();
        } while (q.norm() < 1e-6);
        g.rotation = q.normalized();
        g.opacity_logit = opacity_to_logit(rng.uniform(0.5, 0.95));
        Vec3 c;
        for (int a = 0; a < 3; ++a) c[a] = rng.uniform();
        for (std::size_t ch = 0; ch < 3; ++ch) g.sh[ch * bands] = rgb_to_sh_dc(c[static_cast<int>(ch)]);
        colors.push_back(c);
        gt.append(g);
    }

    Dataset& d = scene.dataset;
    const int res = opt.resolution;
    const double f = 0.5 * res / std::tan(0.5 * opt.camera_angle_x);
    RenderSettings rs;
    rs.threads = opt.threads;
    // Fibonacci sphere: near-uniform, deterministic view directions.
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (std::size_t i = 0; i < opt.n_views; ++i) {
        const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(opt.n_views);
        const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * static_cast<double>(i);
        const Vec3 eye = opt.camera_radius * Vec3(rho * std::cos(phi), rho * std::sin(phi), z);
        const Vec3 up = std::abs(z) > 0.99 ? Vec3::UnitY() : Vec3::UnitZ();
        Camera cam = look_at_camera(eye, Vec3::Zero(), up, res, res, f, f);
        d.images.push_back(rasterize_forward(gt, cam, rs).image);
        d.cameras.push_back(cam);
        d.names.push_back(fmt::format("r_{:03d}", i));
    }
    for (std::size_t i = 0; i < opt.k; ++i) {
        Vec3 p = gt.position(i);
        for (int a = 0; a < 3; ++a) p[a] += opt.init_noise * rng.normal();
        d.init_points.push_back(p);
        d.init_colors.push_back(colors[i]);
    }
    assign_split(d);
    return scene;
}

} // namespace splatctl
