#include "splatctl/error.hpp"
#include "splatctl/harness.hpp"
#include "splatctl/io/ply.hpp"
#include "splatctl/loss.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace splatctl;
using namespace splatctl::testing;
namespace fs = std::filesystem;

namespace {

const SynthScene& small_scene() {
    static const SynthScene s = [] {
        SynthOptions opt;
        opt.k = 8;
        opt.n_views = 9;
        opt.resolution = 32;
        return synth_scene(opt);
    }();
    return s;
}

RunConfig small_config(long t_max) {
    RunConfig cfg = RunConfig::defaults(Profile::Desk);
    cfg.set("t_max", std::to_string(t_max));
    cfg.set("checkpoint_interval", "100");
    cfg.set("sh_interval", "100");
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SweepRecord record(double lambda, std::size_t count, double psnr) {
    SweepRecord r;
    r.lambda_alpha = lambda;
    r.final_count = count;
    r.test_psnr = psnr;
    return r;
}

} // namespace

TEST(Histogram, SingleBinForUniformOpacity) {
    GaussianSet set(0);
    for (int i = 0; i < 17; ++i) {
        RawGaussian g;
        g.opacity_logit = 0.0;
        g.sh = {0, 0, 0};
        set.append(g);
    }
    const OpacityHistogram h = opacity_histogram(set);
    EXPECT_EQ(h[32], 17u);
    EXPECT_EQ(std::accumulate(h.begin(), h.end(), std::size_t{0}), 17u);
    EXPECT_DOUBLE_EQ(mean_activated_opacity(set), 0.5);
    EXPECT_DOUBLE_EQ(mean_activated_scale(set), 1.0);
    EXPECT_EQ(mean_activated_scale(GaussianSet(0)), 0.0);
}

TEST(Train, LargeLambdaCollapsesWithoutCrashing) {
    RunConfig cfg = small_config(2000);
    cfg.set("lambda_alpha", "1.0");
    const TrainResult r = train(small_scene().dataset, cfg);
    EXPECT_TRUE(r.collapsed);
    EXPECT_EQ(r.model.size(), 0u);
    EXPECT_LT(r.iterations, 2000);
    ASSERT_FALSE(r.checkpoints.empty());
    EXPECT_EQ(r.checkpoints.back().count, 0u);
}

TEST(Train, NoRegularizationNoSplittingKeepsCount) {
    RunConfig cfg = small_config(300);
    cfg.set("lambda_alpha", "0");
    cfg.set("tau_split", "0");
    std::size_t prunes = 0;
    TrainHooks hooks;
    hooks.on_iteration = [&](long, const GaussianSet&, const ControlState&, const std::vector<ControlEvent>& ev) {
        for (const auto& e : ev) {
            EXPECT_NE(e.kind, EventKind::SplitBatch);
            if (e.kind == EventKind::Pruned) prunes += e.n_removed;
        }
    };
    const TrainResult r = train(small_scene().dataset, cfg, hooks);
    EXPECT_EQ(r.initial_count, 8u);
    EXPECT_EQ(r.model.size() + prunes, 8u);
    EXPECT_FALSE(r.collapsed);
}

TEST(Train, PruneLeavesNoLowOpacityGaussians) {
    RunConfig cfg = small_config(600);
    cfg.set("lambda_alpha", "1e-4");
    TrainHooks hooks;
    std::size_t checked = 0, removed_total = 0, reported_total = 0;
    hooks.on_prune = [&](long t, const GaussianSet& set, const std::vector<std::uint64_t>& removed) {
        ++checked;
        EXPECT_EQ(t % 100, 0);
        EXPECT_TRUE(set.empty() || min_activated_opacity(set) >= 0.005);
        for (std::uint64_t id : removed) EXPECT_EQ(std::count(set.ids.begin(), set.ids.end(), id), 0);
        removed_total += removed.size();
    };
    const TrainResult r = train(small_scene().dataset, cfg, hooks);
    for (const auto& e : r.events) {
        if (e.kind == EventKind::Pruned) reported_total += e.n_removed;
    }
    EXPECT_GT(checked, 0u);
    EXPECT_EQ(removed_total, reported_total);
    EXPECT_GT(removed_total, 0u);
}

TEST(Train, SplitEventsShrinkMeanScale) {
    RunConfig cfg = small_config(600);
    cfg.set("lambda_alpha", "1e-5");
    TrainHooks hooks;
    double prev = 0.0;
    std::size_t prev_n = 0;
    int seen = 0;
    hooks.on_iteration = [&](long, const GaussianSet& set, const ControlState&, const std::vector<ControlEvent>& ev) {
        const double now = mean_activated_scale(set);
        for (const auto& e : ev) {
            // A round issued as one batch replaces every Gaussian by eight at 1/1.6 scale.
            if (prev > 0.0 && e.kind == EventKind::SplitBatch && e.n_removed * 8 == e.count_after) {
                EXPECT_LT(now, prev);
                EXPECT_NEAR(now * 1.6 / prev, 1.0, 0.02) << "n " << prev_n;
                ++seen;
            }
        }
        prev = now;
        prev_n = set.size();
    };
    train(small_scene().dataset, cfg, hooks);
    EXPECT_GT(seen, 0);
}

TEST(Train, SameSeedGivesIdenticalOutputs) {
    RunConfig cfg = small_config(250);
    cfg.set("lambda_alpha", "1e-5");
    const fs::path a = temp_dir("harness_det_a"), b = temp_dir("harness_det_b");
    cfg.output = a.string();
    train(small_scene().dataset, cfg);
    cfg.output = b.string();
    train(small_scene().dataset, cfg);
    for (const char* f : {"model.ply", "events.csv", "checkpoints.csv", "opacity_hist.csv", "train_summary.csv"}) {
        ASSERT_TRUE(fs::exists(a / f)) << f;
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    }
    EXPECT_EQ(slurp(a / "checkpoints" / "ckpt_000200.ply"), slurp(b / "checkpoints" / "ckpt_000200.ply"));
}

TEST(Train, EmptyTrainingSplitThrows) {
    Dataset d = small_scene().dataset;
    d.train.clear();
    EXPECT_THROW(train(d, small_config(10)), EmptyDatasetError);
}

TEST(Evaluate, GroundTruthHitsTheCap) {
    const SynthScene& s = small_scene();
    const EvalResult r = evaluate(s.ground_truth, s.dataset, s.dataset.test);
    ASSERT_EQ(r.views.size(), 2u);
    for (const auto& v : r.views) {
        EXPECT_EQ(v.psnr, kPsnrCap);
        EXPECT_NEAR(v.ssim, 1.0, 1e-12);
    }
    EXPECT_EQ(r.count, 8u);
    const EvalResult again = evaluate(s.ground_truth, s.dataset, s.dataset.test);
    EXPECT_EQ(again.mean_ssim, r.mean_ssim);
}

TEST(Evaluate, EmptyModelRendersBlack) {
    const SynthScene& s = small_scene();
    const EvalResult r = evaluate(GaussianSet(3), s.dataset, {0});
    EXPECT_EQ(r.count, 0u);
    EXPECT_DOUBLE_EQ(r.views[0].psnr, psnr(Image(32, 32), s.dataset.images[0]));
    EXPECT_THROW(evaluate(GaussianSet(3), s.dataset, {99}), ShapeError);
}

TEST(Diagnostics, HistogramsMatchRecordedCounts) {
    RunConfig cfg = small_config(300);
    cfg.set("lambda_alpha", "1e-5");
    const fs::path dir = temp_dir("harness_diag");
    cfg.output = dir.string();
    const TrainResult r = train(small_scene().dataset, cfg);
    const DiagnosticsResult d = diagnostics(dir);
    ASSERT_EQ(d.iterations.size(), r.checkpoints.size());
    for (std::size_t k = 0; k < d.iterations.size(); ++k) {
        EXPECT_EQ(d.iterations[k], r.checkpoints[k].iteration);
        EXPECT_EQ(d.counts[k], r.checkpoints[k].count);
        EXPECT_EQ(std::accumulate(d.histograms[k].begin(), d.histograms[k].end(), std::size_t{0}), d.counts[k]);
        EXPECT_EQ(d.histograms[k], r.checkpoints[k].histogram);
        EXPECT_NEAR(d.mean_scales[k], r.checkpoints[k].mean_scale, 1e-12);
    }
    EXPECT_TRUE(fs::exists(dir / "diag_opacity_hist.csv"));
    EXPECT_TRUE(fs::exists(dir / "diag_size.csv"));
    EXPECT_THROW(diagnostics(temp_dir("harness_nodiag")), CheckpointError);
}

TEST(Sweep, GridValidation) {
    const RunConfig cfg = small_config(10);
    EXPECT_THROW(sweep(small_scene().dataset, cfg, {}), ConfigError);
    EXPECT_THROW(sweep(small_scene().dataset, cfg, {1e-5, 1e-5}), ConfigError);
    EXPECT_THROW(sweep(small_scene().dataset, cfg, {2e-5, 1e-5}), ConfigError);
}

TEST(Sweep, OneRowPerGridPoint) {
    RunConfig cfg = small_config(120);
    const fs::path dir = temp_dir("harness_sweep");
    cfg.output = dir.string();
    const auto recs = sweep(small_scene().dataset, cfg, {1e-6, 1e-5, 1e-4});
    ASSERT_EQ(recs.size(), 3u);
    const std::string csv = slurp(dir / "sweep.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), kSweepCsvHeader);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_TRUE(fs::exists(dir / "monotonicity.txt"));
    EXPECT_TRUE(fs::exists(dir / "curve.csv"));
    EXPECT_TRUE(fs::exists(dir / "lambda_2" / "model.ply"));
    EXPECT_EQ(sweep_csv(recs), csv);
}

TEST(Monotonicity, DetectsIncreases) {
    EXPECT_TRUE(check_monotonicity({record(1, 100, 0), record(2, 100, 0), record(3, 40, 0)}).nonincreasing);
    const MonotonicityReport bad = check_monotonicity({record(1, 100, 0), record(2, 101, 0), record(3, 40, 0)});
    EXPECT_FALSE(bad.nonincreasing);
    EXPECT_EQ(bad.lines.size(), 2u);
}

TEST(CurveShape, ConcaveSaturatingCurvePasses) {
    // psnr = 30 - 400 / count: concave and increasing.
    std::vector<SweepRecord> recs;
    for (std::size_t n : {2000u, 1000u, 500u, 250u, 125u}) recs.push_back(record(1.0 / n, n, 30.0 - 400.0 / n));
    const CurveShape c = curve_shape(recs, 0.1);
    EXPECT_TRUE(c.concave);
    ASSERT_EQ(c.points.size(), 5u);
    EXPECT_EQ(c.points.front().count, 125u);
    EXPECT_EQ(c.points.front().phase, 'A');
    EXPECT_LE(c.worst_excess_db, 0.0);
}

TEST(CurveShape, ConvexKinkBeyondAllowanceFails) {
    std::vector<SweepRecord> recs = {record(3, 100, 20.0), record(2, 200, 20.5), record(1, 300, 21.5)};
    const CurveShape c = curve_shape(recs, 0.1);
    EXPECT_FALSE(c.concave);
    EXPECT_NEAR(c.worst_excess_db, 0.5, 1e-12);
    EXPECT_TRUE(curve_shape(recs, 0.6).concave);
}

TEST(CurveShape, PhaseLabelsFollowSlopes) {
    std::vector<SweepRecord> recs = {record(4, 100, 20.0), record(3, 200, 30.0), record(2, 300, 33.0),
                                     record(1, 400, 33.5), record(0.5, 500, 33.4)};
    const CurveShape c = curve_shape(recs);
    const std::string csv = curve_csv(c);
    EXPECT_EQ(c.points[1].phase, 'A');
    EXPECT_EQ(c.points[2].phase, 'B');
    EXPECT_EQ(c.points[3].phase, 'C');
    EXPECT_EQ(c.points[4].phase, 'D');
    EXPECT_NE(csv.find("phase"), std::string::npos);
}
