// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any fails. Tolerances are pinned below.

#include "gradcheck.hpp"
#include "splatctl/control.hpp"
#include "splatctl/densify.hpp"
#include "splatctl/harness.hpp"
#include "splatctl/io/ply.hpp"
#include "splatctl/loss.hpp"
#include "splatctl/render.hpp"
#include "splatctl/sh.hpp"
#include "splatctl/sparsify.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <functional>
#include <sstream>
#include <set>
#include <unordered_set>

using namespace splatctl;
using namespace splatctl::testing;
namespace fs = std::filesystem;

namespace {

// [1]
constexpr int kGradScenes = 20;
constexpr double kGradMaxSeconds = 120.0;
constexpr double kGradMaxNonSmoothFraction = 0.01;
// [2]
constexpr int kSplitAlphaSamples = 1000;
constexpr double kSplitAlphaTol = 1e-12;
// [3]
constexpr double kSplitCenterAlphaTol = 0.1;
constexpr double kSplitMinPsnr = 25.0;
// [4]
constexpr double kPruneTau = 0.005;
// [6]
const std::vector<double> kSweepGrid = {5e-6, 1e-5, 2e-5, 5e-5, 1e-4};
constexpr double kSweepMaxRatio = 0.5;
constexpr double kSweepMaxSeconds = 45.0 * 60.0;
// [7]
constexpr double kConcavityAllowanceDb = 0.1;
// [8]
constexpr double kRecoveryMinPsnr = 30.0;
// [9]
constexpr long kSelfCorrectWindow = 1500;
constexpr double kSelfCorrectMinFraction = 0.30;
// [10]
constexpr double kMetricTol = 1e-9;
constexpr long kDeterminismIterations = 400;
// [11]
constexpr int kShutoffTauSplit = 2;
constexpr double kShutoffLambda = 1e-5;
constexpr long kShutoffWindow = 500;
constexpr long kShutoffTMax = 3000;

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const char* name, const Outcome& o) {
    if (!o.pass) ++failures;
    fmt::print("{} [{:2}] {}: {}\n", o.pass ? "PASS" : "FAIL", id, name, o.detail);
    std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(2024);
    std::size_t checked = 0, non_smooth = 0;
    double worst = 0.0;
    std::string where;
    for (int s = 0; s < kGradScenes; ++s) {
        const GradProblem p = random_grad_problem(rng);
        const GradReport r = check_gradients(p);
        checked += r.checked;
        non_smooth += r.non_smooth;
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            where = fmt::format("scene {} {}", s, r.worst);
        }
    }
    const double secs = seconds_since(t0);
    const double frac = static_cast<double>(non_smooth) / static_cast<double>(checked);
    Outcome o;
    o.pass = worst < kFdRelTol && frac <= kGradMaxNonSmoothFraction && secs < kGradMaxSeconds;
    o.detail = fmt::format("max rel err {:.3g} (< {:g}) over {} entries, {} skipped at alpha-threshold kinks "
                           "({:.2f}%), {:.1f}s{}",
                           worst, kFdRelTol, checked - non_smooth, non_smooth, 100.0 * frac, secs,
                           where.empty() ? "" : "; worst " + where);
    return o;
}

Outcome split_algebra() {
    bool ok = true;
    ActivatedGaussian p;
    p.scale = Vec3(2, 2, 2);
    for (const auto& c : split_one(p)) {
        for (int a = 0; a < 3; ++a) ok &= std::abs(c.position[a]) == 0.5;
    }
    p.scale = Vec3(1.6, 3.2, 0.8);
    for (const auto& c : split_one(p)) ok &= (c.scale - Vec3(1, 2, 0.5)).norm() <= 1e-15;
    p.opacity = 0.75;
    ok &= std::abs(split_one(p)[0].opacity - 0.5) <= kSplitAlphaTol;
    Rng rng(6);
    double worst = 0.0;
    for (int k = 0; k < kSplitAlphaSamples; ++k) {
        p.opacity = rng.uniform(1e-6, 1.0 - 1e-6);
        const double c = split_one(p)[0].opacity;
        worst = std::max(worst, std::abs((1.0 - c) * (1.0 - c) - (1.0 - p.opacity)));
    }
    ok &= worst <= kSplitAlphaTol;
    return {ok, fmt::format("unit examples {}; max |(1-a_c)^2-(1-a_p)| over {} samples {:.2g} (<= {:g})",
                            ok ? "hold" : "differ", kSplitAlphaSamples, worst, kSplitAlphaTol)};
}

Outcome split_render_consistency() {
    Camera cam = look_at_camera(Vec3(0, 0, -4), Vec3::Zero(), Vec3(0, -1, 0), 64, 64, 120, 120);
    GaussianSet parent(0);
    RawGaussian g;
    g.log_scale = Vec3::Constant(std::log(0.25));
    g.opacity_logit = opacity_to_logit(0.8);
    g.sh = {0.5 / sh::kC0, 0.5 / sh::kC0, 0.5 / sh::kC0}; // white
    parent.append(g);
    GaussianSet children = parent;
    Rng rng(1);
    SplitBatchCursor cur = SplitBatchCursor::start_round(children, 1, rng);
    issue_batch(cur, children);
    const RenderBuffers a = rasterize_forward(parent, cam);
    const RenderBuffers b = rasterize_forward(children, cam);
    const std::size_t center = 32 * 64 + 32;
    const double da = std::abs((1.0 - a.final_transmittance[center]) - (1.0 - b.final_transmittance[center]));
    const double p = psnr(b.image, a.image);
    return {da <= kSplitCenterAlphaTol && p >= kSplitMinPsnr,
            fmt::format("center alpha {:.4f} -> {:.4f} (|d| {:.4f} <= {:g}); PSNR {:.2f} dB (>= {:g})",
                        1.0 - a.final_transmittance[center], 1.0 - b.final_transmittance[center], da,
                        kSplitCenterAlphaTol, p, kSplitMinPsnr)};
}

// Scripted prune counts; a round consists of `batches_per_round` batches.
class ScriptedTarget final : public ControlTarget {
public:
    std::deque<std::size_t> removals;
    std::function<std::size_t()> generator;
    int batches_per_round = 1;
    int pending = 0;
    std::size_t n = 1u << 30;

    std::size_t prune(double) override {
        std::size_t r = 0;
        if (generator) {
            r = generator();
        } else if (!removals.empty()) {
            r = removals.front();
            removals.pop_front();
        }
        n -= r;
        return r;
    }
    SplitOutcome split_next_batch(std::size_t) override {
        if (pending == 0) pending = batches_per_round;
        --pending;
        return {1, pending > 0};
    }
    std::size_t count() const override { return n; }
};

std::string trajectory(const std::vector<ControlEvent>& ev) {
    std::string s;
    for (const auto& e : ev) s += fmt::format("{}:{} ", e.t, event_name(e.kind));
    return s;
}

Outcome scheduler_conformance() {
    std::vector<std::string> bad;
    ControlConfig cfg; // prune 100, tau_remove 2000, delay 200, 6 rounds

    // Runs a script for `iters` iterations from a given state.
    auto run = [&](ControlState s, ScriptedTarget& target, long iters) {
        std::vector<ControlEvent> all;
        for (long i = 0; i < iters; ++i) {
            for (const auto& e : step(s, cfg, target)) all.push_back(e);
        }
        return std::make_pair(s, all);
    };

    {   // prune only
        ScriptedTarget t;
        t.removals = {5000};
        ControlState s0 = ControlState::initial(1e-5);
        const auto [s, ev] = run(s0, t, 1);
        if (trajectory(ev) != "0:pruned " || s.n_split != 0 || s.t_until != 0) bad.push_back("prune-only");
    }
    {   // prune + split, delay window, then a second round
        ScriptedTarget t;
        t.removals = {100, 50};
        const auto [s, ev] = run(ControlState::initial(1e-5), t, 301);
        if (trajectory(ev) != "0:pruned 0:split_batch 200:pruned 200:split_batch " || s.n_split != 2 ||
            s.t_until != 400) {
            bad.push_back("prune+split/delay: " + trajectory(ev));
        }
    }
    {   // mid-round OR branch: large removals still continue a pending round
        ScriptedTarget t;
        t.batches_per_round = 3;
        t.removals = {100, 9000, 9000, 9000};
        const auto [s, ev] = run(ControlState::initial(1e-5), t, 601);
        const std::string want = "0:pruned 0:split_batch 200:pruned 200:split_batch 400:pruned 400:split_batch "
                                 "600:pruned ";
        if (trajectory(ev) != want || s.n_split != 1 || s.has_next_batch) bad.push_back("or-branch: " + trajectory(ev));
    }
    {   // delay window: no prune before t_until
        ScriptedTarget t;
        ControlState s0 = ControlState::initial(1e-5);
        s0.t = 100;
        s0.t_until = 250;
        const auto [s, ev] = run(s0, t, 201);
        if (trajectory(ev) != "300:pruned 300:split_batch ") bad.push_back("delay: " + trajectory(ev));
    }
    {   // shutoff once all rounds are spent
        ScriptedTarget t;
        ControlState s0 = ControlState::initial(1e-5);
        s0.n_split = 6;
        const auto [s, ev] = run(s0, t, 201);
        if (trajectory(ev) != "0:pruned 0:lambda_disabled 100:pruned 200:pruned " || s.live_lambda_alpha != 0.0) {
            bad.push_back("shutoff: " + trajectory(ev));
        }
    }

    // Invariants on random scripts.
    Rng rng(99);
    std::size_t violations = 0, steps = 0;
    for (int trial = 0; trial < 300; ++trial) {
        ControlConfig c;
        c.prune_interval = 1 + static_cast<long>(rng.index(150));
        c.t_delay = static_cast<long>(rng.index(400));
        c.tau_split = static_cast<int>(rng.index(7));
        c.tau_remove = 1 + rng.index(3000);
        ScriptedTarget t;
        t.batches_per_round = 1 + static_cast<int>(rng.index(4));
        t.generator = [&] { return rng.index(6000); };
        ControlState s = ControlState::initial(1e-5);
        long last_split = -1;
        int rounds = 0, disables = 0;
        for (long it = 0; it < 4000; ++it, ++steps) {
            const int before = s.n_split;
            for (const auto& e : step(s, c, t)) {
                if (e.kind == EventKind::Pruned && last_split >= 0 && it < last_split + c.t_delay) ++violations;
                if (e.kind == EventKind::SplitBatch) {
                    if (before >= c.tau_split) ++violations;
                    last_split = it;
                    if (!s.has_next_batch) ++rounds;
                }
                if (e.kind == EventKind::LambdaDisabled && (++disables > 1 || s.n_split != c.tau_split)) ++violations;
            }
            if (s.n_split != rounds || s.n_split > c.tau_split) ++violations;
            if (s.live_lambda_alpha != (disables ? 0.0 : s.configured_lambda_alpha)) ++violations;
        }
    }
    if (violations) bad.push_back(fmt::format("{} invariant violations", violations));
    std::string detail = bad.empty() ? "5 scripted branches reproduced" : "mismatch in " + bad.front();
    return {bad.empty(), fmt::format("{}; {} random steps, {} invariant violations", detail, steps, violations)};
}

// Prune observations and self-correction bookkeeping for the smallest-lambda run.
struct RunObserver {
    std::size_t prunes = 0;
    std::size_t invariant_failures = 0;
    std::size_t idempotence_failures = 0;

    struct Round {
        long t = 0;
        std::size_t before = 0;
        std::size_t population = 0;
        std::unordered_set<std::uint64_t> ids;
        std::size_t pruned = 0;
    };
    std::vector<Round> rounds;
    std::size_t count_before_round = 0;
    bool round_open = false;

    TrainHooks hooks() {
        TrainHooks h;
        h.on_prune = [this](long t, const GaussianSet& set, const std::vector<std::uint64_t>& removed) {
            ++prunes;
            if (!set.empty() && min_activated_opacity(set) < kPruneTau) ++invariant_failures;
            GaussianSet copy = set;
            if (prune(copy, kPruneTau).n_removed != 0) ++idempotence_failures;
            for (Round& r : rounds) {
                if (t <= r.t || t > r.t + kSelfCorrectWindow) continue;
                for (std::uint64_t id : removed) r.pruned += r.ids.count(id);
            }
        };
        h.on_iteration = [this](long t, const GaussianSet& set, const ControlState& cs,
                                const std::vector<ControlEvent>& ev) {
            for (const ControlEvent& e : ev) {
                if (e.kind == EventKind::Pruned && !round_open) count_before_round = e.count_after;
                if (e.kind != EventKind::SplitBatch) continue;
                round_open = cs.has_next_batch;
                if (!cs.has_next_batch) {
                    Round r;
                    r.t = t;
                    r.before = count_before_round;
                    r.population = set.size();
                    r.ids.insert(set.ids.begin(), set.ids.end());
                    rounds.push_back(std::move(r));
                }
            }
        };
        return h;
    }
};

Outcome prune_invariant(const RunObserver& obs) {
    const bool ok = obs.prunes > 0 && obs.invariant_failures == 0 && obs.idempotence_failures == 0;
    return {ok, fmt::format("{} prune events in the smallest-lambda run; {} left opacity < {:g}, {} not idempotent",
                            obs.prunes, obs.invariant_failures, kPruneTau, obs.idempotence_failures)};
}

Outcome self_correction(const RunObserver& obs, long t_max) {
    bool ok = !obs.rounds.empty();
    std::string parts;
    for (const auto& r : obs.rounds) {
        const double frac = static_cast<double>(r.pruned) / static_cast<double>(r.population);
        const long window = std::min(kSelfCorrectWindow, t_max - 1 - r.t);
        ok &= frac >= kSelfCorrectMinFraction;
        parts += fmt::format("{}t{}: {}->{} pruned {:.0f}%{}", parts.empty() ? "" : ", ", r.t, r.before, r.population,
                             100.0 * frac, window < kSelfCorrectWindow ? fmt::format(" (window {})", window) : "");
    }
    return {ok, fmt::format("{} rounds, need >= {:.0f}% of each post-split population pruned within {} it: {}",
                            obs.rounds.size(), 100.0 * kSelfCorrectMinFraction, kSelfCorrectWindow, parts)};
}

Outcome metrics_io_determinism(const Dataset& data, const RunConfig& base, const GaussianSet& model,
                               const fs::path& workdir) {
    std::vector<std::string> bad;
    Rng rng(10);
    const Image x = random_image(rng, 32, 32);
    if (std::abs(ssim(x, x) - 1.0) > kMetricTol) bad.push_back("SSIM(x,x)");
    Image a(8, 8, 0.5), b(8, 8, 0.6);
    if (std::abs(psnr(a, b) - 20.0) > kMetricTol) bad.push_back("PSNR at MSE 0.01");

    const fs::path ply = workdir / "roundtrip.ply";
    export_ply(model, ply);
    const GaussianSet back = import_ply(ply);
    if (back.positions != model.positions || back.log_scales != model.log_scales ||
        back.rotations != model.rotations || back.opacity_logits != model.opacity_logits || back.sh != model.sh ||
        back.active_sh_degree != model.active_sh_degree) {
        bad.push_back("PLY round trip");
    }

    RunConfig cfg = base;
    cfg.set("t_max", std::to_string(kDeterminismIterations));
    cfg.set("checkpoint_interval", "100");
    cfg.loss.lambda_alpha = kSweepGrid.front();
    std::vector<std::string> files = {"model.ply", "events.csv", "checkpoints.csv", "opacity_hist.csv"};
    for (long c = 100; c <= kDeterminismIterations; c += 100) files.push_back(fmt::format("checkpoints/ckpt_{:06d}.ply", c));
    std::vector<std::string> runs[2];
    for (int r = 0; r < 2; ++r) {
        const fs::path dir = workdir / fmt::format("determinism_{}", r);
        fs::remove_all(dir);
        cfg.output = dir.string();
        train(data, cfg);
        for (const auto& f : files) runs[r].push_back(slurp(dir / f));
    }
    std::size_t differing = 0;
    for (std::size_t k = 0; k < files.size(); ++k) differing += runs[0][k] != runs[1][k] || runs[0][k].empty();
    if (differing) bad.push_back(fmt::format("{} of {} run files differ", differing, files.size()));

    return {bad.empty(), bad.empty() ? fmt::format("SSIM(x,x)=1, PSNR(MSE 0.01)={:.12g} dB, PLY round trip bit-exact "
                                                   "({} Gaussians), {} output files identical across two runs",
                                                   psnr(a, b), model.size(), files.size())
                                     : "failed: " + bad.front()};
}

Outcome shutoff(const Dataset& data, const RunConfig& base, const fs::path& workdir) {
    RunConfig cfg = base;
    cfg.set("tau_split", std::to_string(kShutoffTauSplit));
    cfg.set("t_max", std::to_string(kShutoffTMax));
    cfg.loss.lambda_alpha = kShutoffLambda;
    cfg.output = (workdir / "shutoff").string();
    long t_off = -1;
    bool live_zero = true;
    std::vector<double> mean_opacity; // after the control step of t_off + k
    TrainHooks h;
    h.on_iteration = [&](long t, const GaussianSet& set, const ControlState& cs, const std::vector<ControlEvent>& ev) {
        for (const auto& e : ev) {
            if (e.kind == EventKind::LambdaDisabled) t_off = t;
        }
        if (t_off < 0) return;
        live_zero &= cs.live_lambda_alpha == 0.0;
        if (t - t_off <= kShutoffWindow) mean_opacity.push_back(mean_activated_opacity(set));
    };
    train(data, cfg, h);
    if (t_off < 0 || static_cast<long>(mean_opacity.size()) <= kShutoffWindow) {
        return {false, fmt::format("shutoff at t={} leaves {} of {} observed iterations", t_off, mean_opacity.size(),
                                   kShutoffWindow + 1)};
    }
    // The trend is judged at the prune cadence; single-view steps make per-iteration values noisy.
    std::vector<double> sampled;
    for (long k = 0; k <= kShutoffWindow; k += cfg.control.prune_interval) sampled.push_back(mean_opacity[k]);
    std::size_t sampled_drops = 0, step_drops = 0;
    for (std::size_t k = 1; k < sampled.size(); ++k) sampled_drops += sampled[k] < sampled[k - 1];
    for (std::size_t k = 1; k < mean_opacity.size(); ++k) step_drops += mean_opacity[k] < mean_opacity[k - 1];
    std::string series;
    for (double v : sampled) series += fmt::format("{}{:.4f}", series.empty() ? "" : " ", v);
    return {live_zero && sampled_drops == 0,
            fmt::format("shutoff at t={}, live lambda {} afterwards; mean opacity every {} it: {} ({} decreases); "
                        "{} of {} single-iteration steps dip",
                        t_off, live_zero ? "0" : "nonzero", cfg.control.prune_interval, series, sampled_drops,
                        step_drops, kShutoffWindow)};
}

} // namespace

int main(int argc, char** argv) {
    fs::path workdir = "acceptance_runs";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--workdir") == 0 && i + 1 < argc) {
            workdir = argv[++i];
        } else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
        } else {
            fmt::print(stderr, "usage: {} [--workdir DIR] [--only N,N,...]\n", argv[0]);
            return 2;
        }
    }
    auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
    fs::create_directories(workdir);

    int ran = 0;
    auto run = [&](int id, const char* name, const std::function<Outcome()>& check) {
        if (!want(id)) return;
        ++ran;
        report(id, name, check());
    };

    run(1, "gradient correctness", gradient_correctness);
    run(2, "split algebra", split_algebra);
    run(3, "split render consistency", split_render_consistency);

    const SynthScene scene = synth_scene(SynthOptions{}); // seed 42, k 64, 28 views (24 train), 128 px
    const RunConfig base = RunConfig::defaults(Profile::Desk);
    const long t_max = base.control.t_max;

    // Criteria 4 and 6-10 share the sweep; the smallest-lambda run is observed.
    RunObserver observer;
    std::vector<SweepRecord> recs;
    double sweep_s = 0.0;
    if (want(4) || want(6) || want(7) || want(8) || want(9) || want(10)) {
        RunConfig sweep_cfg = base;
        sweep_cfg.output = (workdir / "sweep").string();
        const auto t0 = std::chrono::steady_clock::now();
        recs = sweep(scene.dataset, sweep_cfg, kSweepGrid, {},
                     [&](std::size_t k) { return k == 0 ? observer.hooks() : TrainHooks{}; });
        sweep_s = seconds_since(t0);
    }

    run(4, "pruning invariant", [&] { return prune_invariant(observer); });
    run(5, "scheduler conformance", scheduler_conformance);
    run(6, "control monotonicity", [&]() -> Outcome {
        const MonotonicityReport m = check_monotonicity(recs);
        bool any_failed = false;
        std::string counts;
        for (const auto& r : recs) {
            any_failed |= r.failed || r.collapsed;
            counts += fmt::format("{}{:g}:{}", counts.empty() ? "" : " ", r.lambda_alpha, r.final_count);
        }
        const double ratio = static_cast<double>(recs.back().final_count) / static_cast<double>(recs.front().final_count);
        return {!any_failed && m.nonincreasing && ratio <= kSweepMaxRatio && sweep_s < kSweepMaxSeconds,
                fmt::format("counts {}; nonincreasing {}; ratio {:.3f} (<= {:g}); sweep {:.0f}s (< {:.0f}s)", counts,
                            m.nonincreasing ? "yes" : "no", ratio, kSweepMaxRatio, sweep_s, kSweepMaxSeconds)};
    });
    run(7, "curve shape", [&]() -> Outcome {
        const CurveShape c = curve_shape(recs, kConcavityAllowanceDb);
        std::string pts;
        for (const auto& p : c.points) {
            pts += fmt::format("{}({}, {:.2f}dB, {})", pts.empty() ? "" : " ", p.count, p.psnr, p.phase);
        }
        return {c.concave, fmt::format("worst rise above previous slope {:.3f} dB (<= {:g}); {}", c.worst_excess_db,
                                       kConcavityAllowanceDb, pts)};
    });
    run(8, "recovery oracle", [&]() -> Outcome {
        const SweepRecord& r = recs.front();
        return {!r.failed && r.test_psnr >= kRecoveryMinPsnr,
                fmt::format("lambda {:g}: test PSNR {:.2f} dB (>= {:g}), SSIM {:.4f}, {} Gaussians", r.lambda_alpha,
                            r.test_psnr, kRecoveryMinPsnr, r.test_ssim, r.final_count)};
    });
    run(9, "self-correction", [&] { return self_correction(observer, t_max); });
    run(10, "metrics and IO", [&] {
        return metrics_io_determinism(scene.dataset, base, import_ply(workdir / "sweep" / "lambda_0" / "model.ply"),
                                      workdir);
    });
    run(11, "lambda shutoff", [&] { return shutoff(scene.dataset, base, workdir); });

    fmt::print("{} of {} criteria passed\n", ran - failures, ran);
    return failures == 0 ? 0 : 1;
}
