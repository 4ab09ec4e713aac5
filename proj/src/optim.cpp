#include "splatctl/optim.hpp"

#include "splatctl/error.hpp"
#include "splatctl/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace splatctl {

namespace {

void resize_zero(Moments& mo, std::size_t n) {
    mo.m.assign(n, 0.0);
    mo.v.assign(n, 0.0);
}

void check_len(const Moments& mo, std::size_t n, const char* name) {
    if (mo.m.size() != n || mo.v.size() != n) throw ShapeError(std::string("optimizer moments misaligned: ") + name);
}

// Removes rows `removed` (strictly increasing) of width `w`, then appends `appended` zero rows.
void edit_rows(std::vector<double>& a, std::size_t w, const TopologyEdit& edit) {
    const std::size_t n = a.size() / w;
    std::size_t out = 0;
    std::size_t r = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (r < edit.removed.size() && edit.removed[r] == i) {
            ++r;
            continue;
        }
        if (out != i) std::copy_n(a.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                                  a.begin() + static_cast<std::ptrdiff_t>(out * w));
        ++out;
    }
    a.resize(out * w);
    a.resize((out + edit.appended) * w, 0.0);
}

void edit_moments(Moments& mo, std::size_t w, const TopologyEdit& edit) {
    edit_rows(mo.m, w, edit);
    edit_rows(mo.v, w, edit);
}

} // namespace

void OptimConfig::validate() const {
    const double lrs[] = {lr_position_init, lr_position_final, lr_log_scale, lr_rotation,
                          lr_opacity,       lr_sh_dc,          lr_sh_rest};
    for (double lr : lrs) {
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rates must be finite and non-negative");
    }
    if (lr_position_init <= 0.0 || lr_position_final <= 0.0) throw ConfigError("position learning rates must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
    if (!(scene_extent > 0.0) || !std::isfinite(scene_extent)) throw ConfigError("scene_extent must be positive");
    if (t_max <= 0) throw ConfigError("t_max must be positive");
    if (sh_interval <= 0) throw ConfigError("sh_interval must be positive");
}

OptimState OptimState::for_set(const GaussianSet& set) {
    OptimState s;
    const std::size_t n = set.size();
    s.sh_stride = set.sh_stride();
    resize_zero(s.positions, 3 * n);
    resize_zero(s.log_scales, 3 * n);
    resize_zero(s.rotations, 4 * n);
    resize_zero(s.opacity_logits, n);
    resize_zero(s.sh, s.sh_stride * n);
    return s;
}

void OptimState::check_matches(const GaussianSet& set) const {
    const std::size_t n = set.size();
    if (sh_stride != set.sh_stride()) throw ShapeError("optimizer SH stride differs from the model");
    check_len(positions, 3 * n, "positions");
    check_len(log_scales, 3 * n, "log_scales");
    check_len(rotations, 4 * n, "rotations");
    check_len(opacity_logits, n, "opacity_logits");
    check_len(sh, sh_stride * n, "sh");
}

double position_lr(long t, const OptimConfig& cfg) {
    const double r = std::clamp(static_cast<double>(t) / static_cast<double>(cfg.t_max), 0.0, 1.0);
    if (r == 0.0) return cfg.lr_position_init * cfg.scene_extent;
    if (r == 1.0) return cfg.lr_position_final * cfg.scene_extent;
    const double log_lr = (1.0 - r) * std::log(cfg.lr_position_init) + r * std::log(cfg.lr_position_final);
    return std::exp(log_lr) * cfg.scene_extent;
}

void adam_step(GaussianSet& set, const GaussianGrads& grads, OptimState& state, const OptimConfig& cfg, long t) {
    grads.check_matches(set);
    state.check_matches(set);
    ++state.step;

    kernels::AdamParams ap;
    ap.beta1 = cfg.beta1;
    ap.beta2 = cfg.beta2;
    ap.eps = cfg.eps;
    ap.bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    ap.bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const auto& k = kernels::active();

    auto run = [&](std::vector<double>& p, Moments& mo, const std::vector<double>& g, double lr) {
        ap.lr = lr;
        k.adam_update(p.size(), p.data(), mo.m.data(), mo.v.data(), g.data(), ap);
    };
    run(set.positions, state.positions, grads.positions, position_lr(t, cfg));
    run(set.log_scales, state.log_scales, grads.log_scales, cfg.lr_log_scale);
    run(set.rotations, state.rotations, grads.rotations, cfg.lr_rotation);
    run(set.opacity_logits, state.opacity_logits, grads.opacity_logits, cfg.lr_opacity);

    // SH rows are [DC, rest...] per colour channel.
    const std::size_t bands = static_cast<std::size_t>(set.bands());
    const std::size_t rows = set.size() * 3;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t o = r * bands;
        ap.lr = cfg.lr_sh_dc;
        k.adam_update(1, set.sh.data() + o, state.sh.m.data() + o, state.sh.v.data() + o, grads.sh.data() + o, ap);
        if (bands > 1) {
            ap.lr = cfg.lr_sh_rest;
            k.adam_update(bands - 1, set.sh.data() + o + 1, state.sh.m.data() + o + 1, state.sh.v.data() + o + 1,
                          grads.sh.data() + o + 1, ap);
        }
    }
}

void sync_topology(OptimState& state, const TopologyEdit& edit) {
    const std::size_t n = state.size();
    for (std::size_t k = 0; k < edit.removed.size(); ++k) {
        if (edit.removed[k] >= n || (k > 0 && edit.removed[k] <= edit.removed[k - 1])) {
            throw ShapeError("topology edit does not match optimizer state");
        }
    }
    edit_moments(state.positions, 3, edit);
    edit_moments(state.log_scales, 3, edit);
    edit_moments(state.rotations, 4, edit);
    edit_moments(state.opacity_logits, 1, edit);
    if (state.sh_stride > 0) edit_moments(state.sh, state.sh_stride, edit);
}

bool maybe_promote_sh(GaussianSet& set, long t, long sh_interval) {
    if (sh_interval <= 0 || t <= 0 || t % sh_interval != 0) return false;
    if (set.active_sh_degree >= set.max_sh_degree()) return false;
    ++set.active_sh_degree;
    return true;
}

} // namespace splatctl
