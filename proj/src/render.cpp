#include "splatctl/render.hpp"

#include "aligned.hpp"
#include "parallel.hpp"
#include "splatctl/error.hpp"
#include "splatctl/kernels.hpp"
#include "splatctl/sh.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace splatctl {

using Mat23 = Eigen::Matrix<double, 2, 3>;

GaussianGrads GaussianGrads::zeros_like(const GaussianSet& set) {
    GaussianGrads g;
    g.positions.assign(set.positions.size(), 0.0);
    g.log_scales.assign(set.log_scales.size(), 0.0);
    g.rotations.assign(set.rotations.size(), 0.0);
    g.opacity_logits.assign(set.opacity_logits.size(), 0.0);
    g.sh.assign(set.sh.size(), 0.0);
    return g;
}

void GaussianGrads::check_matches(const GaussianSet& set) const {
    if (positions.size() != set.positions.size() || log_scales.size() != set.log_scales.size() ||
        rotations.size() != set.rotations.size() || opacity_logits.size() != set.opacity_logits.size() ||
        sh.size() != set.sh.size()) {
        throw ShapeError("gradient arrays do not match the Gaussian set");
    }
}

namespace {

// Everything the backward pass needs about one projected Gaussian.
struct Detail {
    bool visible = false;
    Vec3 t = Vec3::Zero(); // camera space
    Mat23 jac = Mat23::Zero();
    Mat23 m = Mat23::Zero(); // jac * W
    Mat3 sigma = Mat3::Zero();
    Mat3 rot = Mat3::Identity();
    Vec3 scale = Vec3::Ones();
    Vec4 q_unit{1, 0, 0, 0};
    double q_norm = 1.0;
    Mat2 cov = Mat2::Identity(); // dilated
    Mat2 conic = Mat2::Identity();
    Vec2 mean = Vec2::Zero();
    Vec3 dir = Vec3::UnitZ();
    double dist = 1.0;
    Vec3 raw_color = Vec3::Zero(); // SH + 0.5, before clamping
    double opacity = 0.0;
};

Detail project_one(const GaussianSet& set, std::size_t i, const Camera& cam, const Mat3& w, const Vec3& tw,
                   const Vec3& center, const RenderSettings& rs) {
    Detail d;
    const Vec3 p = set.position(i);
    d.t = w * p + tw;
    const Vec4 q = set.rotation(i);
    d.q_norm = q.norm();
    d.q_unit = normalize_quaternion(q);
    d.scale = set.log_scale(i).array().exp();
    d.opacity = sigmoid(set.opacity_logits[i]);
    if (!(d.t.z() > rs.near_plane)) return d;

    d.rot = rotation_from_quaternion(d.q_unit);
    const Mat3 a = d.rot * d.scale.asDiagonal();
    d.sigma = a * a.transpose();
    const double tz = d.t.z(), tz2 = tz * tz;
    d.jac << cam.fx / tz, 0.0, -cam.fx * d.t.x() / tz2, 0.0, cam.fy / tz, -cam.fy * d.t.y() / tz2;
    d.m = d.jac * w;
    const Mat2 cov = d.m * d.sigma * d.m.transpose();
    if (!(cov.determinant() > rs.det_min)) return d;
    d.cov = cov;
    d.cov(0, 0) += rs.dilation;
    d.cov(1, 1) += rs.dilation;
    const double det = d.cov.determinant();
    d.conic << d.cov(1, 1) / det, -d.cov(0, 1) / det, -d.cov(1, 0) / det, d.cov(0, 0) / det;
    d.mean = {cam.fx * d.t.x() / tz + cam.cx, cam.fy * d.t.y() / tz + cam.cy};

    const Vec3 v = p - center;
    d.dist = v.norm();
    d.dir = v / d.dist;
    d.raw_color = sh::evaluate(set.active_sh_degree, set.bands(), set.sh_of(i), d.dir) + Vec3::Constant(0.5);
    d.visible = true;
    return d;
}

std::vector<Detail> project_all(const GaussianSet& set, const Camera& cam, const RenderSettings& rs) {
    const Mat3 w = cam.rotation();
    const Vec3 tw = cam.translation();
    const Vec3 center = cam.center();
    std::vector<Detail> out(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) out[i] = project_one(set, i, cam, w, tw, center, rs);
    return out;
}

Projected2D to_public(const Detail& d) {
    Projected2D p;
    p.visible = d.visible;
    p.depth = d.t.z();
    if (!d.visible) return p;
    p.mean2d = d.mean;
    p.cov2d = d.cov;
    p.sh_color = d.raw_color.cwiseMax(0.0);
    return p;
}

// Splat parameters in depth order.
struct SplatArrays {
    std::array<detail::aligned_vector<double>, 9> v;
    kernels::SplatBlock block(std::size_t offset, std::size_t count) const {
        return {count,
                v[0].data() + offset,
                v[1].data() + offset,
                v[2].data() + offset,
                v[3].data() + offset,
                v[4].data() + offset,
                v[5].data() + offset,
                v[6].data() + offset,
                v[7].data() + offset,
                v[8].data() + offset};
    }
};

struct PixelScratch {
    std::array<detail::aligned_vector<double>, 8> pix;   // px py T r g b n_contrib done
    std::array<detail::aligned_vector<double>, 8> back;  // backward scratch
    SplatArrays splats;

    void resize(std::size_t pixels, std::size_t splat_count) {
        for (auto& a : pix) a.resize(pixels);
        for (auto& a : back) a.resize(pixels);
        for (auto& a : splats.v) a.resize(std::max<std::size_t>(splat_count, 1));
    }
};

struct TileRect {
    int x0, y0, w, h;
};

TileRect tile_rect(const RenderBuffers& b, std::size_t tile) {
    const int ts = b.settings.tile_size;
    const int tx = static_cast<int>(tile % static_cast<std::size_t>(b.tiles_x));
    const int ty = static_cast<int>(tile / static_cast<std::size_t>(b.tiles_x));
    const int x0 = tx * ts, y0 = ty * ts;
    return {x0, y0, std::min(ts, b.camera.width - x0), std::min(ts, b.camera.height - y0)};
}

void fill_positions(PixelScratch& s, const TileRect& r) {
    const std::size_t count = static_cast<std::size_t>(r.w) * static_cast<std::size_t>(r.h);
    const std::size_t n = kernels::padded(count);
    std::size_t k = 0;
    for (int ly = 0; ly < r.h; ++ly) {
        for (int lx = 0; lx < r.w; ++lx, ++k) {
            s.pix[0][k] = r.x0 + lx + 0.5;
            s.pix[1][k] = r.y0 + ly + 0.5;
        }
    }
    for (; k < n; ++k) {
        s.pix[0][k] = 0.0;
        s.pix[1][k] = 0.0;
    }
}

void gather_splats(const RenderBuffers& b, const SplatArrays& by_rank, std::size_t tile, SplatArrays& out,
                   std::size_t& count) {
    const std::size_t begin = b.tile_offsets[tile], end = b.tile_offsets[tile + 1];
    count = end - begin;
    for (std::size_t e = begin; e < end; ++e) {
        const std::uint32_t rank = b.tile_entries[e];
        for (std::size_t c = 0; c < 9; ++c) out.v[c][e - begin] = by_rank.v[c][rank];
    }
}

SplatArrays rank_arrays(const std::vector<Detail>& details, const std::vector<std::uint32_t>& order) {
    SplatArrays s;
    for (auto& a : s.v) a.resize(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
        const Detail& d = details[order[r]];
        const Vec3 color = d.raw_color.cwiseMax(0.0);
        s.v[0][r] = d.mean.x();
        s.v[1][r] = d.mean.y();
        s.v[2][r] = d.conic(0, 0);
        s.v[3][r] = d.conic(0, 1);
        s.v[4][r] = d.conic(1, 1);
        s.v[5][r] = d.opacity;
        s.v[6][r] = color.x();
        s.v[7][r] = color.y();
        s.v[8][r] = color.z();
    }
    return s;
}

std::size_t max_tile_list(const RenderBuffers& b) {
    std::size_t m = 0;
    for (std::size_t t = 0; t + 1 < b.tile_offsets.size(); ++t) {
        m = std::max<std::size_t>(m, b.tile_offsets[t + 1] - b.tile_offsets[t]);
    }
    return m;
}

void bin_tiles(RenderBuffers& b, const std::vector<Detail>& details) {
    const int ts = b.settings.tile_size;
    const int width = b.camera.width, height = b.camera.height;
    b.tiles_x = (width + ts - 1) / ts;
    b.tiles_y = (height + ts - 1) / ts;
    const std::size_t n_tiles = static_cast<std::size_t>(b.tiles_x) * static_cast<std::size_t>(b.tiles_y);

    struct Range {
        int tx0, tx1, ty0, ty1; // inclusive, empty when tx0 > tx1
    };
    std::vector<Range> ranges(b.order.size());
    std::vector<std::uint32_t> counts(n_tiles + 1, 0);
    for (std::size_t r = 0; r < b.order.size(); ++r) {
        const Detail& d = details[b.order[r]];
        // alpha >= alpha_min  <=>  d^T conic d <= 2 ln(opacity / alpha_min)
        const double q = 2.0 * std::log(d.opacity / b.settings.alpha_min);
        const double ex = std::sqrt(q * d.cov(0, 0)) * (1.0 + 1e-9) + 1e-9;
        const double ey = std::sqrt(q * d.cov(1, 1)) * (1.0 + 1e-9) + 1e-9;
        const double px0 = std::max(0.0, std::ceil(d.mean.x() - ex - 0.5));
        const double px1 = std::min(width - 1.0, std::floor(d.mean.x() + ex - 0.5));
        const double py0 = std::max(0.0, std::ceil(d.mean.y() - ey - 0.5));
        const double py1 = std::min(height - 1.0, std::floor(d.mean.y() + ey - 0.5));
        Range rg{1, 0, 1, 0};
        if (px0 <= px1 && py0 <= py1) {
            rg = {static_cast<int>(px0) / ts, static_cast<int>(px1) / ts, static_cast<int>(py0) / ts,
                  static_cast<int>(py1) / ts};
            for (int ty = rg.ty0; ty <= rg.ty1; ++ty) {
                for (int tx = rg.tx0; tx <= rg.tx1; ++tx) ++counts[static_cast<std::size_t>(ty) * b.tiles_x + tx + 1];
            }
        }
        ranges[r] = rg;
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    b.tile_offsets = counts;
    b.tile_entries.assign(counts.back(), 0);
    std::vector<std::uint32_t> cursor(counts.begin(), counts.end() - 1);
    for (std::size_t r = 0; r < ranges.size(); ++r) {
        const Range& rg = ranges[r];
        for (int ty = rg.ty0; ty <= rg.ty1; ++ty) {
            for (int tx = rg.tx0; tx <= rg.tx1; ++tx) {
                b.tile_entries[cursor[static_cast<std::size_t>(ty) * b.tiles_x + tx]++] = static_cast<std::uint32_t>(r);
            }
        }
    }
}

kernels::CompositeParams composite_params(const RenderSettings& rs) {
    return {rs.alpha_cap, rs.alpha_min, rs.transmittance_min};
}

} // namespace

std::vector<Projected2D> project(const GaussianSet& set, const Camera& cam, const RenderSettings& settings) {
    cam.validate();
    set.check_shapes();
    const auto details = project_all(set, cam, settings);
    std::vector<Projected2D> out(details.size());
    std::transform(details.begin(), details.end(), out.begin(), to_public);
    return out;
}

RenderBuffers rasterize_forward(const GaussianSet& set, const Camera& cam, const RenderSettings& settings) {
    cam.validate();
    set.check_shapes();
    if (settings.tile_size < 1) throw DomainError("tile size must be positive");

    RenderBuffers b;
    b.camera = cam;
    b.settings = settings;
    b.gaussian_count = set.size();
    b.sh_stride = set.sh_stride();
    b.sh_degree = set.active_sh_degree;

    const auto details = project_all(set, cam, settings);
    b.projected.resize(details.size());
    std::transform(details.begin(), details.end(), b.projected.begin(), to_public);

    for (std::size_t i = 0; i < details.size(); ++i) {
        if (details[i].visible && details[i].opacity >= settings.alpha_min) b.order.push_back(static_cast<std::uint32_t>(i));
    }
    std::sort(b.order.begin(), b.order.end(), [&](std::uint32_t l, std::uint32_t r) {
        const double dl = details[l].t.z(), dr = details[r].t.z();
        return dl < dr || (dl == dr && l < r);
    });
    bin_tiles(b, details);
    const SplatArrays by_rank = rank_arrays(details, b.order);

    const std::size_t pixels = static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height);
    b.image = Image(cam.width, cam.height);
    b.final_transmittance.assign(pixels, 1.0);
    b.n_contrib.assign(pixels, 0);

    const auto& kt = kernels::active();
    const auto cp = composite_params(settings);
    const std::size_t longest = max_tile_list(b);
    const std::size_t tile_pixels = kernels::padded(static_cast<std::size_t>(settings.tile_size) * settings.tile_size);
    const std::size_t n_tiles = b.tile_offsets.size() - 1;

    detail::parallel_for(n_tiles, settings.threads, [&](std::size_t tile) {
        thread_local PixelScratch s;
        s.resize(tile_pixels, longest);
        const TileRect r = tile_rect(b, tile);
        const std::size_t count = static_cast<std::size_t>(r.w) * static_cast<std::size_t>(r.h);
        fill_positions(s, r);
        for (std::size_t k = 0; k < kernels::padded(count); ++k) {
            const bool real = k < count;
            s.pix[2][k] = real ? 1.0 : 0.0;
            s.pix[3][k] = s.pix[4][k] = s.pix[5][k] = 0.0;
            s.pix[6][k] = 0.0;
            s.pix[7][k] = real ? 0.0 : 1.0;
        }
        std::size_t splat_count = 0;
        gather_splats(b, by_rank, tile, s.splats, splat_count);
        if (splat_count > 0) {
            kernels::PixelBlock pb{count,           s.pix[0].data(), s.pix[1].data(), s.pix[2].data(), s.pix[3].data(),
                                   s.pix[4].data(), s.pix[5].data(), s.pix[6].data(), s.pix[7].data()};
            kt.composite_forward(s.splats.block(0, splat_count), pb, cp);
        }
        std::size_t k = 0;
        for (int ly = 0; ly < r.h; ++ly) {
            for (int lx = 0; lx < r.w; ++lx, ++k) {
                const int x = r.x0 + lx, y = r.y0 + ly;
                const std::size_t pix = static_cast<std::size_t>(y) * cam.width + x;
                b.image.data[3 * pix] = s.pix[3][k];
                b.image.data[3 * pix + 1] = s.pix[4][k];
                b.image.data[3 * pix + 2] = s.pix[5][k];
                b.final_transmittance[pix] = s.pix[2][k];
                b.n_contrib[pix] = static_cast<std::uint32_t>(s.pix[6][k]);
            }
        }
    });
    return b;
}

GaussianGrads rasterize_backward(const RenderBuffers& b, const GaussianSet& set, const Image& dL_dimage) {
    set.check_shapes();
    if (set.size() != b.gaussian_count || set.sh_stride() != b.sh_stride || set.active_sh_degree != b.sh_degree) {
        throw ShapeError("Gaussian set does not match the forward render");
    }
    if (dL_dimage.width != b.camera.width || dL_dimage.height != b.camera.height ||
        dL_dimage.data.size() != dL_dimage.pixel_count() * 3) {
        throw ShapeError("image gradient does not match the rendered image size");
    }

    const RenderSettings& rs = b.settings;
    const Camera& cam = b.camera;
    const auto details = project_all(set, cam, rs);
    const SplatArrays by_rank = rank_arrays(details, b.order);

    const std::size_t total = b.tile_entries.size();
    std::array<std::vector<double>, 9> partial;
    for (auto& p : partial) p.assign(total, 0.0);

    const auto& kt = kernels::active();
    const auto cp = composite_params(rs);
    const std::size_t longest = max_tile_list(b);
    const std::size_t tile_pixels = kernels::padded(static_cast<std::size_t>(rs.tile_size) * rs.tile_size);
    const std::size_t n_tiles = b.tile_offsets.size() - 1;

    detail::parallel_for(n_tiles, rs.threads, [&](std::size_t tile) {
        const std::size_t begin = b.tile_offsets[tile];
        std::size_t splat_count = 0;
        thread_local PixelScratch s;
        s.resize(tile_pixels, longest);
        gather_splats(b, by_rank, tile, s.splats, splat_count);
        if (splat_count == 0) return;
        const TileRect r = tile_rect(b, tile);
        const std::size_t count = static_cast<std::size_t>(r.w) * static_cast<std::size_t>(r.h);
        fill_positions(s, r);
        std::size_t k = 0;
        for (int ly = 0; ly < r.h; ++ly) {
            for (int lx = 0; lx < r.w; ++lx, ++k) {
                const std::size_t pix = static_cast<std::size_t>(r.y0 + ly) * cam.width + (r.x0 + lx);
                s.pix[2][k] = b.final_transmittance[pix];
                s.pix[3][k] = dL_dimage.data[3 * pix];
                s.pix[4][k] = dL_dimage.data[3 * pix + 1];
                s.pix[5][k] = dL_dimage.data[3 * pix + 2];
                s.pix[6][k] = b.n_contrib[pix];
            }
        }
        for (; k < kernels::padded(count); ++k) {
            s.pix[2][k] = s.pix[3][k] = s.pix[4][k] = s.pix[5][k] = s.pix[6][k] = 0.0;
        }
        kernels::PixelBlock pb{count,           s.pix[0].data(), s.pix[1].data(), s.pix[2].data(), s.pix[3].data(),
                               s.pix[4].data(), s.pix[5].data(), s.pix[6].data(), s.pix[7].data()};
        kernels::BackwardScratch ws{s.back[0].data(), s.back[1].data(), s.back[2].data(), s.back[3].data(),
                                    s.back[4].data(), s.back[5].data(), s.back[6].data(), s.back[7].data()};
        kernels::SplatGrads sg{partial[0].data() + begin, partial[1].data() + begin, partial[2].data() + begin,
                               partial[3].data() + begin, partial[4].data() + begin, partial[5].data() + begin,
                               partial[6].data() + begin, partial[7].data() + begin, partial[8].data() + begin};
        kt.composite_backward(s.splats.block(0, splat_count), pb, cp, ws, sg);
    });

    // Fixed-order reduction: tiles in raster order, entries in list order.
    std::vector<std::array<double, 9>> g2d(b.order.size(), std::array<double, 9>{});
    for (std::size_t e = 0; e < total; ++e) {
        auto& acc = g2d[b.tile_entries[e]];
        for (std::size_t c = 0; c < 9; ++c) acc[c] += partial[c][e];
    }

    GaussianGrads out = GaussianGrads::zeros_like(set);
    const Mat3 w = cam.rotation();
    const int bands = set.bands();
    for (std::size_t r = 0; r < b.order.size(); ++r) {
        const std::size_t i = b.order[r];
        const Detail& d = details[i];
        const auto& g = g2d[r];

        // opacity
        out.opacity_logits[i] += g[5] * d.opacity * (1.0 - d.opacity);

        // color -> SH, view direction
        Vec3 dcolor(g[6], g[7], g[8]);
        for (int c = 0; c < 3; ++c) {
            if (d.raw_color[c] < 0.0) dcolor[c] = 0.0;
        }
        std::span<double> dsh(out.sh.data() + i * set.sh_stride(), set.sh_stride());
        const Vec3 ddir = sh::backward(set.active_sh_degree, bands, set.sh_of(i), d.dir, dcolor, dsh);
        Vec3 dpos = (ddir - d.dir * d.dir.dot(ddir)) / d.dist;

        // conic -> dilated covariance
        Mat2 g_conic;
        g_conic << g[2], 0.5 * g[3], 0.5 * g[3], g[4];
        const Mat2 g_cov = -d.conic * g_conic * d.conic;

        // cov = M Sigma M^T
        const Mat3 g_sigma = d.m.transpose() * g_cov * d.m;
        const Mat23 g_m = 2.0 * g_cov * d.m * d.sigma;
        const Mat23 g_j = g_m * w.transpose();

        const double tx = d.t.x(), ty = d.t.y(), tz = d.t.z();
        const double tz2 = tz * tz, tz3 = tz2 * tz;
        Vec3 dt = Vec3::Zero();
        dt.x() += cam.fx / tz * g[0] - cam.fx / tz2 * g_j(0, 2);
        dt.y() += cam.fy / tz * g[1] - cam.fy / tz2 * g_j(1, 2);
        dt.z() += -cam.fx * tx / tz2 * g[0] - cam.fy * ty / tz2 * g[1] - cam.fx / tz2 * g_j(0, 0) +
                  2.0 * cam.fx * tx / tz3 * g_j(0, 2) - cam.fy / tz2 * g_j(1, 1) + 2.0 * cam.fy * ty / tz3 * g_j(1, 2);
        dpos += w.transpose() * dt;
        for (int c = 0; c < 3; ++c) out.positions[3 * i + c] += dpos[c];

        // Sigma = A A^T, A = R S
        const Mat3 a = d.rot * d.scale.asDiagonal();
        const Mat3 g_a = 2.0 * g_sigma * a;
        const Mat3 rt_ga = d.rot.transpose() * g_a;
        for (int c = 0; c < 3; ++c) out.log_scales[3 * i + c] += rt_ga(c, c) * d.scale[c];
        const Mat3 gr = g_a * d.scale.asDiagonal();

        const double qw = d.q_unit[0], qx = d.q_unit[1], qy = d.q_unit[2], qz = d.q_unit[3];
        Vec4 dq;
        dq[0] = 2.0 * (-qz * gr(0, 1) + qy * gr(0, 2) + qz * gr(1, 0) - qx * gr(1, 2) - qy * gr(2, 0) + qx * gr(2, 1));
        dq[1] = 2.0 * (qy * gr(0, 1) + qz * gr(0, 2) + qy * gr(1, 0) - 2.0 * qx * gr(1, 1) - qw * gr(1, 2) +
                       qz * gr(2, 0) + qw * gr(2, 1) - 2.0 * qx * gr(2, 2));
        dq[2] = 2.0 * (-2.0 * qy * gr(0, 0) + qx * gr(0, 1) + qw * gr(0, 2) + qx * gr(1, 0) + qz * gr(1, 2) -
                       qw * gr(2, 0) + qz * gr(2, 1) - 2.0 * qy * gr(2, 2));
        dq[3] = 2.0 * (-2.0 * qz * gr(0, 0) - qw * gr(0, 1) + qx * gr(0, 2) + qw * gr(1, 0) - 2.0 * qz * gr(1, 1) +
                       qy * gr(1, 2) + qx * gr(2, 0) + qy * gr(2, 1));
        const Vec4 dq_raw = (dq - d.q_unit * d.q_unit.dot(dq)) / d.q_norm;
        for (int c = 0; c < 4; ++c) out.rotations[4 * i + c] += dq_raw[c];
    }
    return out;
}

} // namespace splatctl
