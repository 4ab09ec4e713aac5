#pragma once

#include "splatctl/core.hpp"
#include "splatctl/render.hpp"

#include <vector>

namespace splatctl {

struct OptimConfig {
    double lr_position_init = 1.6e-4; // times scene_extent
    double lr_position_final = 1.6e-6;
    double lr_log_scale = 5e-3;
    double lr_rotation = 1e-3;
    double lr_opacity = 5e-2;
    double lr_sh_dc = 2.5e-3;
    double lr_sh_rest = 2.5e-3 / 20.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
    double scene_extent = 1.0;
    long t_max = 30000;
    long sh_interval = 1000;

    // Throws ConfigError.
    void validate() const;
};

struct Moments {
    std::vector<double> m;
    std::vector<double> v;
};

// Adam moments aligned with a GaussianSet, one pair per parameter array.
struct OptimState {
    Moments positions;
    Moments log_scales;
    Moments rotations;
    Moments opacity_logits;
    Moments sh;
    std::size_t sh_stride = 0;
    long step = 0;

    static OptimState for_set(const GaussianSet& set);
    std::size_t size() const { return opacity_logits.m.size(); }
    // Throws ShapeError unless every moment array matches `set`.
    void check_matches(const GaussianSet& set) const;
};

// Log-linear decay from lr_init to lr_final (both scaled by scene_extent);
// constant at lr_final past t_max.
double position_lr(long t, const OptimConfig& cfg);

// One Adam update over every group. `t` selects the position learning rate;
// the bias-correction step counter lives in `state`. Throws ShapeError.
void adam_step(GaussianSet& set, const GaussianGrads& grads, OptimState& state, const OptimConfig& cfg, long t);

// Mirrors a structural edit on the moment arrays; appended entries start at
// zero. Throws ShapeError when the edit does not fit the current state.
void sync_topology(OptimState& state, const TopologyEdit& edit);

// Raises active_sh_degree by one when t is a positive multiple of
// `sh_interval`, up to the set's maximum. Returns true on promotion.
bool maybe_promote_sh(GaussianSet& set, long t, long sh_interval);

} // namespace splatctl
