#include "splatctl/error.hpp"
#include "splatctl/loss.hpp"
#include "splatctl/optim.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace splatctl;
using namespace splatctl::testing;

namespace {

GaussianGrads random_grads(Rng& rng, const GaussianSet& set) {
    GaussianGrads g = GaussianGrads::zeros_like(set);
    for (auto* v : {&g.positions, &g.log_scales, &g.rotations, &g.opacity_logits, &g.sh}) {
        for (double& x : *v) x = rng.normal();
    }
    return g;
}

} // namespace

TEST(AdamStep, ZeroGradientLeavesParametersAndDecaysMoments) {
    Rng rng(1);
    GaussianSet set = random_set(rng, 5, 2);
    OptimState st = OptimState::for_set(set);
    OptimConfig cfg;
    adam_step(set, random_grads(rng, set), st, cfg, 0);
    const GaussianSet before = set;
    const OptimState sb = st;
    // Moments nonzero now, so a zero-gradient step still moves parameters by m_hat / sqrt(v_hat).
    // Reset them to isolate the zero-gradient behavior.
    st = OptimState::for_set(set);
    adam_step(set, GaussianGrads::zeros_like(set), st, cfg, 1);
    EXPECT_EQ(set.positions, before.positions);
    EXPECT_EQ(set.sh, before.sh);
    EXPECT_EQ(set.opacity_logits, before.opacity_logits);

    OptimState decay = sb;
    GaussianSet s2 = before;
    adam_step(s2, GaussianGrads::zeros_like(s2), decay, cfg, 1);
    for (std::size_t k = 0; k < decay.positions.m.size(); ++k) {
        EXPECT_DOUBLE_EQ(decay.positions.m[k], 0.9 * sb.positions.m[k]);
        EXPECT_DOUBLE_EQ(decay.positions.v[k], 0.999 * sb.positions.v[k]);
    }
}

TEST(AdamStep, FirstStepMovesByLearningRateAgainstGradientSign) {
    Rng rng(2);
    GaussianSet set = random_set(rng, 4, 1);
    const GaussianSet before = set;
    OptimState st = OptimState::for_set(set);
    OptimConfig cfg;
    cfg.scene_extent = 2.0;
    const GaussianGrads g = random_grads(rng, set);
    adam_step(set, g, st, cfg, 0);
    auto check = [](const std::vector<double>& after, const std::vector<double>& prior, const std::vector<double>& grad,
                    double lr) {
        for (std::size_t k = 0; k < after.size(); ++k) {
            EXPECT_NEAR(after[k] - prior[k], -lr * (grad[k] > 0 ? 1.0 : -1.0), 1e-12 * lr + 1e-15);
        }
    };
    check(set.positions, before.positions, g.positions, 1.6e-4 * 2.0);
    check(set.log_scales, before.log_scales, g.log_scales, 5e-3);
    check(set.rotations, before.rotations, g.rotations, 1e-3);
    check(set.opacity_logits, before.opacity_logits, g.opacity_logits, 5e-2);
    const int bands = set.bands();
    for (std::size_t k = 0; k < set.sh.size(); ++k) {
        const double lr = (k % bands) == 0 ? 2.5e-3 : 2.5e-3 / 20;
        EXPECT_NEAR(set.sh[k] - before.sh[k], -lr * (g.sh[k] > 0 ? 1.0 : -1.0), 1e-12 * lr);
    }
    EXPECT_EQ(st.step, 1);
}

TEST(AdamStep, MatchesClosedFormAdamOverSeveralSteps) {
    Rng rng(3);
    GaussianSet set = random_set(rng, 1, 0);
    OptimState st = OptimState::for_set(set);
    OptimConfig cfg;
    double x = set.opacity_logits[0], m = 0, v = 0;
    for (int k = 1; k <= 5; ++k) {
        GaussianGrads g = GaussianGrads::zeros_like(set);
        const double gk = 0.3 * k - 1.0;
        g.opacity_logits[0] = gk;
        adam_step(set, g, st, cfg, k - 1);
        m = 0.9 * m + 0.1 * gk;
        v = 0.999 * v + 0.001 * gk * gk;
        const double mh = m / (1 - std::pow(0.9, k)), vh = v / (1 - std::pow(0.999, k));
        x -= 5e-2 * mh / (std::sqrt(vh) + 1e-15);
        EXPECT_NEAR(set.opacity_logits[0], x, 1e-14);
    }
}

TEST(AdamStep, DeterministicAcrossCalls) {
    Rng rng(4);
    const GaussianSet set0 = random_set(rng, 30, 3);
    const GaussianGrads g = random_grads(rng, set0);
    auto run = [&] {
        GaussianSet set = set0;
        OptimState st = OptimState::for_set(set);
        for (int k = 0; k < 3; ++k) adam_step(set, g, st, OptimConfig{}, k);
        return set.positions;
    };
    EXPECT_EQ(run(), run());
}

TEST(AdamStep, ShapeMismatchThrows) {
    Rng rng(5);
    GaussianSet set = random_set(rng, 3, 0);
    OptimState st = OptimState::for_set(set);
    GaussianGrads g = GaussianGrads::zeros_like(set);
    g.positions.pop_back();
    EXPECT_THROW(adam_step(set, g, st, OptimConfig{}, 0), ShapeError);
    OptimState wrong = OptimState::for_set(random_set(rng, 4, 0));
    EXPECT_THROW(adam_step(set, GaussianGrads::zeros_like(set), wrong, OptimConfig{}, 0), ShapeError);
}

TEST(AdamStep, RegularizationAloneDrivesOpacityDown) {
    Rng rng(6);
    GaussianSet set = random_set(rng, 20, 0);
    OptimState st = OptimState::for_set(set);
    const Image img(12, 12, 0.3);
    LossConfig lc;
    for (int it = 0; it < 200; ++it) {
        const TotalLoss tl = total_loss(img, img, set, lc, 1e-4);
        GaussianGrads g = GaussianGrads::zeros_like(set);
        g.opacity_logits = tl.dL_dopacity_logit;
        const std::vector<double> prior = set.opacity_logits;
        adam_step(set, g, st, OptimConfig{}, it);
        for (std::size_t i = 0; i < set.size(); ++i) ASSERT_LT(set.opacity_logits[i], prior[i]);
    }
}

TEST(SyncTopology, PruneKeepsSurvivorMomentsBitExact) {
    Rng rng(7);
    GaussianSet set = random_set(rng, 5, 1);
    OptimState st = OptimState::for_set(set);
    adam_step(set, random_grads(rng, set), st, OptimConfig{}, 0);
    const OptimState before = st;
    const std::size_t idx[] = {3};
    sync_topology(st, set.remove(idx));
    EXPECT_EQ(st.size(), 4u);
    st.check_matches(set);
    for (std::size_t i = 0, j = 0; i < 5; ++i) {
        if (i == 3) continue;
        EXPECT_EQ(st.opacity_logits.v[j], before.opacity_logits.v[i]);
        for (int a = 0; a < 3; ++a) EXPECT_EQ(st.positions.m[3 * j + a], before.positions.m[3 * i + a]);
        for (std::size_t k = 0; k < st.sh_stride; ++k) {
            EXPECT_EQ(st.sh.m[j * st.sh_stride + k], before.sh.m[i * st.sh_stride + k]);
        }
        ++j;
    }
}

TEST(SyncTopology, AppendedChildrenStartAtZero) {
    Rng rng(8);
    GaussianSet set = random_set(rng, 1, 0);
    OptimState st = OptimState::for_set(set);
    adam_step(set, random_grads(rng, set), st, OptimConfig{}, 0);
    TopologyEdit edit;
    edit.removed = {0};
    edit.appended = 8;
    sync_topology(st, edit);
    EXPECT_EQ(st.size(), 8u);
    for (double m : st.positions.m) EXPECT_EQ(m, 0.0);
    for (double v : st.rotations.v) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(st.sh.m.size(), 8u * st.sh_stride);
}

TEST(SyncTopology, EmptyEditIsIdentity) {
    Rng rng(9);
    GaussianSet set = random_set(rng, 6, 1);
    OptimState st = OptimState::for_set(set);
    adam_step(set, random_grads(rng, set), st, OptimConfig{}, 0);
    const OptimState before = st;
    sync_topology(st, TopologyEdit{});
    EXPECT_EQ(st.positions.m, before.positions.m);
    EXPECT_EQ(st.sh.v, before.sh.v);
}

TEST(SyncTopology, InconsistentEditThrows) {
    Rng rng(10);
    OptimState st = OptimState::for_set(random_set(rng, 3, 0));
    TopologyEdit out_of_range;
    out_of_range.removed = {5};
    EXPECT_THROW(sync_topology(st, out_of_range), ShapeError);
    TopologyEdit unsorted;
    unsorted.removed = {2, 1};
    EXPECT_THROW(sync_topology(st, unsorted), ShapeError);
}

TEST(PositionLr, EndpointsAndMidpoint) {
    OptimConfig cfg;
    cfg.scene_extent = 3.0;
    cfg.t_max = 8000;
    EXPECT_DOUBLE_EQ(position_lr(0, cfg), 1.6e-4 * 3.0);
    EXPECT_DOUBLE_EQ(position_lr(8000, cfg), 1.6e-6 * 3.0);
    EXPECT_NEAR(position_lr(4000, cfg), std::sqrt(1.6e-4 * 1.6e-6) * 3.0, 1e-18);
    EXPECT_DOUBLE_EQ(position_lr(20000, cfg), 1.6e-6 * 3.0);
    EXPECT_GT(position_lr(100, cfg), position_lr(101, cfg));
}

TEST(PromoteSh, IntervalSemantics) {
    GaussianSet set(3);
    EXPECT_FALSE(maybe_promote_sh(set, 999, 1000));
    EXPECT_EQ(set.active_sh_degree, 0);
    EXPECT_TRUE(maybe_promote_sh(set, 1000, 1000));
    EXPECT_EQ(set.active_sh_degree, 1);
    EXPECT_FALSE(maybe_promote_sh(set, 0, 1000));
    set.active_sh_degree = 3;
    EXPECT_FALSE(maybe_promote_sh(set, 5000, 1000));
    EXPECT_EQ(set.active_sh_degree, 3);
    GaussianSet dc_only(0);
    EXPECT_FALSE(maybe_promote_sh(dc_only, 1000, 1000));
    EXPECT_EQ(dc_only.active_sh_degree, 0);
}

TEST(OptimConfig, Validation) {
    OptimConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.beta1 = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.lr_opacity = -1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.scene_extent = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}
