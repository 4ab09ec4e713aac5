#pragma once

#include "splatctl/loss.hpp"
#include "splatctl/render.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

namespace splatctl::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdRelTol = 1e-3;
inline constexpr double kFdAbsFloor = 1e-8;
// One-sided differences further apart than this (relative) mean the loss
// jumps or kinks inside [x - h, x + h]; central differences are then not a
// derivative estimate.
inline constexpr double kKinkRel = 0.05;

struct GradProblem {
    GaussianSet set;
    Camera cam;
    Image target;
    LossConfig cfg;
    double lambda_alpha = 1e-3;
    RenderSettings rs;

    double loss(const GaussianSet& s) const {
        const RenderBuffers b = rasterize_forward(s, cam, rs);
        return total_loss(b.image, target, s, cfg, lambda_alpha).value;
    }

    GaussianGrads analytic() const {
        const RenderBuffers b = rasterize_forward(set, cam, rs);
        const TotalLoss tl = total_loss(b.image, target, set, cfg, lambda_alpha);
        GaussianGrads g = rasterize_backward(b, set, tl.dL_dimage);
        for (std::size_t i = 0; i < g.opacity_logits.size(); ++i) g.opacity_logits[i] += tl.dL_dopacity_logit[i];
        return g;
    }
};

struct GradReport {
    std::size_t checked = 0;
    std::size_t non_smooth = 0;
    double max_rel_err = 0.0;
    std::string worst;
};

inline double fd_rel_err(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kFdAbsFloor});
}

// Random scene in the 16 x 16 regime with up to `max_n` Gaussians.
inline GradProblem random_grad_problem(Rng& rng, std::size_t max_n = 10) {
    GradProblem p;
    p.set = random_set(rng, 1 + rng.index(max_n), static_cast<int>(rng.index(4)));
    p.cam = front_camera();
    p.target = random_image(rng, 16, 16);
    return p;
}

// Central differences over every raw parameter of `p.set`.
inline GradReport check_gradients(const GradProblem& p) {
    const GaussianGrads g = p.analytic();
    const double l0 = p.loss(p.set);
    GradReport r;
    GaussianSet s = p.set;
    auto run = [&](const char* name, std::vector<double>& arr, const std::vector<double>& grad) {
        for (std::size_t k = 0; k < arr.size(); ++k) {
            const double x0 = arr[k];
            arr[k] = x0 + kFdStep;
            const double lp = p.loss(s);
            arr[k] = x0 - kFdStep;
            const double lm = p.loss(s);
            arr[k] = x0;
            const double fd = (lp - lm) / (2.0 * kFdStep);
            const double fwd = (lp - l0) / kFdStep;
            const double bwd = (l0 - lm) / kFdStep;
            ++r.checked;
            if (std::abs(fwd - bwd) > kKinkRel * std::max({std::abs(fwd), std::abs(bwd), 1e-6})) {
                ++r.non_smooth;
                continue;
            }
            const double e = fd_rel_err(grad[k], fd);
            if (e > r.max_rel_err) {
                r.max_rel_err = e;
                char buf[160];
                std::snprintf(buf, sizeof buf, "%s[%zu] analytic %.9g fd %.9g", name, k, grad[k], fd);
                r.worst = buf;
            }
        }
    };
    run("positions", s.positions, g.positions);
    run("log_scales", s.log_scales, g.log_scales);
    run("rotations", s.rotations, g.rotations);
    run("opacity_logits", s.opacity_logits, g.opacity_logits);
    run("sh", s.sh, g.sh);
    return r;
}

} // namespace splatctl::testing
