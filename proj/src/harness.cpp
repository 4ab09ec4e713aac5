#include "splatctl/harness.hpp"

#include "splatctl/densify.hpp"
#include "splatctl/error.hpp"
#include "splatctl/io/ply.hpp"
#include "splatctl/io/png.hpp"
#include "splatctl/loss.hpp"
#include "splatctl/optim.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <regex>

namespace splatctl {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSplitStream = 0x9E3779B97F4A7C15ULL;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Forwards to the model target and reports each prune to the hooks.
class ObservedTarget final : public ControlTarget {
public:
    ObservedTarget(ModelTarget& inner, const GaussianSet& set, const long& t, const TrainHooks& hooks)
        : inner_(inner), set_(set), t_(t), hooks_(hooks) {}

    std::size_t prune(double tau_alpha) override {
        if (!hooks_.on_prune) return inner_.prune(tau_alpha);
        std::vector<std::uint64_t> before = set_.ids;
        const std::size_t n = inner_.prune(tau_alpha);
        std::vector<std::uint64_t> after = set_.ids, removed;
        // Ids are not sorted once splits have appended children.
        std::sort(before.begin(), before.end());
        std::sort(after.begin(), after.end());
        std::set_difference(before.begin(), before.end(), after.begin(), after.end(), std::back_inserter(removed));
        hooks_.on_prune(t_, set_, removed);
        return n;
    }
    SplitOutcome split_next_batch(std::size_t n_batch) override { return inner_.split_next_batch(n_batch); }
    std::size_t count() const override { return inner_.count(); }

private:
    ModelTarget& inner_;
    const GaussianSet& set_;
    const long& t_;
    const TrainHooks& hooks_;
};

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    return out;
}

std::string histogram_row(long iteration, const OpacityHistogram& h) {
    std::string row = fmt::format("{}", iteration);
    for (std::size_t b : h) row += fmt::format(",{}", b);
    return row;
}

std::string histogram_header() {
    std::string h = "iteration";
    for (std::size_t b = 0; b < kHistogramBins; ++b) h += fmt::format(",bin_{}", b);
    return h;
}

constexpr const char* kCheckpointHeader =
    "iteration,count,loss,rgb_loss,opacity_l1,mean_scale,live_lambda_alpha,active_sh_degree";

std::string checkpoint_row(const CheckpointRecord& c) {
    return fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{}", c.iteration, c.count, c.loss, c.rgb_loss,
                       c.opacity_l1, c.mean_scale, c.live_lambda_alpha, c.active_sh_degree);
}

} // namespace

OpacityHistogram opacity_histogram(const GaussianSet& set) {
    OpacityHistogram h{};
    for (double logit : set.opacity_logits) {
        const double a = sigmoid(logit);
        const auto b = static_cast<std::size_t>(std::clamp(a * kHistogramBins, 0.0, kHistogramBins - 1.0));
        ++h[b];
    }
    return h;
}

double mean_activated_scale(const GaussianSet& set) {
    if (set.empty()) return 0.0;
    long double sum = 0.0L;
    for (double ls : set.log_scales) sum += std::exp(ls);
    return static_cast<double>(sum / static_cast<long double>(set.log_scales.size()));
}

double mean_activated_opacity(const GaussianSet& set) {
    if (set.empty()) return 0.0;
    long double sum = 0.0L;
    for (double logit : set.opacity_logits) sum += sigmoid(logit);
    return static_cast<double>(sum / static_cast<long double>(set.size()));
}

double min_activated_opacity(const GaussianSet& set) {
    double m = 1.0;
    for (double logit : set.opacity_logits) m = std::min(m, sigmoid(logit));
    return m;
}

TrainResult train(const Dataset& data, const RunConfig& cfg, const TrainHooks& hooks) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    data.check();
    if (data.train.empty()) throw EmptyDatasetError("dataset has no training views");

    TrainResult res;
    GaussianSet& set = res.model;
    set = init_gaussians(data.init_points, data.init_colors, cfg.n_random_init, cfg.seed, cfg.max_sh_degree);
    res.initial_count = set.size();
    res.control = cfg.resolved_control(set.size());
    const ControlConfig& ccfg = res.control;

    std::vector<Camera> train_cams;
    for (std::size_t i : data.train) train_cams.push_back(data.cameras[i]);
    OptimConfig ocfg = cfg.optim;
    ocfg.scene_extent = res.scene_extent = scene_extent(train_cams);

    RenderSettings rs;
    rs.threads = cfg.threads;

    const bool write = !cfg.output.empty();
    const fs::path out_dir(cfg.output);
    std::ofstream events_csv, ckpt_csv, hist_csv;
    if (write) {
        fs::create_directories(out_dir / "checkpoints");
        open_out(out_dir / "config.txt") << cfg.dump();
        events_csv = open_out(out_dir / "events.csv");
        events_csv << kEventLogHeader << '\n';
        ckpt_csv = open_out(out_dir / "checkpoints.csv");
        ckpt_csv << kCheckpointHeader << '\n';
        hist_csv = open_out(out_dir / "opacity_hist.csv");
        hist_csv << histogram_header() << '\n';
    }

    OptimState ostate = OptimState::for_set(set);
    Rng view_rng(cfg.seed);
    Rng split_rng(cfg.seed ^ kSplitStream);
    ModelTarget model_target(set, split_rng, [&](const TopologyEdit& e) { sync_topology(ostate, e); });
    ControlState& cs = res.final_state;
    cs = ControlState::initial(cfg.loss.lambda_alpha);
    ObservedTarget target(model_target, set, cs.t, hooks);

    long double loss_acc = 0.0L, rgb_acc = 0.0L;
    long since_ckpt = 0;
    auto checkpoint = [&](long completed) {
        CheckpointRecord c;
        c.iteration = completed;
        c.count = set.size();
        c.loss = since_ckpt ? static_cast<double>(loss_acc / since_ckpt) : 0.0;
        c.rgb_loss = since_ckpt ? static_cast<double>(rgb_acc / since_ckpt) : 0.0;
        c.opacity_l1 = opacity_l1(set);
        c.mean_scale = mean_activated_scale(set);
        c.live_lambda_alpha = cs.live_lambda_alpha;
        c.active_sh_degree = set.active_sh_degree;
        c.histogram = opacity_histogram(set);
        loss_acc = rgb_acc = 0.0L;
        since_ckpt = 0;
        res.checkpoints.push_back(c);
        if (write) {
            ckpt_csv << checkpoint_row(c) << '\n';
            hist_csv << histogram_row(c.iteration, c.histogram) << '\n';
            export_ply(set, out_dir / "checkpoints" / fmt::format("ckpt_{:06d}.ply", completed));
        }
        if (hooks.on_checkpoint) hooks.on_checkpoint(c);
    };

    const long t_max = ccfg.t_max;
    for (long t = 0; t < t_max; ++t) {
        const std::size_t view = data.train[view_rng.index(data.train.size())];
        const RenderBuffers buf = rasterize_forward(set, data.cameras[view], rs);
        const TotalLoss tl = total_loss(buf.image, data.images[view], set, cfg.loss, cs.live_lambda_alpha);
        GaussianGrads grads = rasterize_backward(buf, set, tl.dL_dimage);
        for (std::size_t i = 0; i < set.size(); ++i) grads.opacity_logits[i] += tl.dL_dopacity_logit[i];
        adam_step(set, grads, ostate, ocfg, t);
        maybe_promote_sh(set, t, ocfg.sh_interval);
        loss_acc += tl.value;
        rgb_acc += tl.rgb;
        ++since_ckpt;

        const std::vector<ControlEvent> events = step(cs, ccfg, target);
        for (const ControlEvent& e : events) {
            res.events.push_back(e);
            if (write) events_csv << format_event(e) << '\n';
        }
        if (hooks.on_iteration) hooks.on_iteration(t, set, cs, events);
        res.iterations = t + 1;
        if ((t + 1) % cfg.checkpoint_interval == 0 || t + 1 == t_max || set.empty()) checkpoint(t + 1);
        if (set.empty()) {
            res.collapsed = true;
            break;
        }
    }

    if (write) {
        export_ply(set, out_dir / "model.ply");
        std::ofstream m = open_out(out_dir / "train_summary.csv");
        m << "initial_count,final_count,iterations,collapsed,n_split,lambda_disabled,tau_remove,n_batch,scene_extent\n";
        m << fmt::format("{},{},{},{},{},{},{},{},{:.17g}\n", res.initial_count, set.size(), res.iterations,
                         res.collapsed ? 1 : 0, cs.n_split, cs.lambda_disabled ? 1 : 0, ccfg.tau_remove, ccfg.n_batch,
                         res.scene_extent);
    }
    res.wall_s = seconds_since(t0);
    return res;
}

EvalResult evaluate(const GaussianSet& model, const Dataset& data, const std::vector<std::size_t>& frames,
                    const RenderSettings& settings) {
    data.check();
    EvalResult r;
    r.count = model.size();
    for (std::size_t f : frames) {
        if (f >= data.size()) throw ShapeError(fmt::format("frame {} outside the dataset", f));
        const Image img = rasterize_forward(model, data.cameras[f], settings).image;
        r.views.push_back({f, psnr(img, data.images[f]), ssim(img, data.images[f])});
    }
    if (!r.views.empty()) {
        for (const ViewMetrics& v : r.views) {
            r.mean_psnr += v.psnr;
            r.mean_ssim += v.ssim;
        }
        r.mean_psnr /= static_cast<double>(r.views.size());
        r.mean_ssim /= static_cast<double>(r.views.size());
    }
    return r;
}

std::vector<SweepRecord> sweep(const Dataset& data, const RunConfig& cfg, const std::vector<double>& grid,
                               const std::function<void(const SweepRecord&)>& on_record,
                               const std::function<TrainHooks(std::size_t)>& hooks_for) {
    if (grid.empty()) throw ConfigError("lambda grid is empty");
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (!(grid[k] >= 0.0) || (k > 0 && !(grid[k] > grid[k - 1]))) {
            throw ConfigError("lambda grid must be non-negative and strictly increasing");
        }
    }
    RenderSettings rs;
    rs.threads = cfg.threads;
    std::vector<SweepRecord> out;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        SweepRecord rec;
        rec.lambda_alpha = grid[k];
        RunConfig run = cfg;
        run.loss.lambda_alpha = grid[k];
        if (!cfg.output.empty()) run.output = (fs::path(cfg.output) / fmt::format("lambda_{}", k)).string();
        try {
            const TrainResult tr = train(data, run, hooks_for ? hooks_for(k) : TrainHooks{});
            rec.final_count = tr.model.size();
            rec.collapsed = tr.collapsed;
            rec.series = tr.checkpoints;
            const EvalResult te = evaluate(tr.model, data, data.test, rs);
            const EvalResult tt = evaluate(tr.model, data, data.train, rs);
            rec.test_psnr = te.mean_psnr;
            rec.test_ssim = te.mean_ssim;
            rec.train_psnr = tt.mean_psnr;
            rec.train_ssim = tt.mean_ssim;
            rec.wall_s = tr.wall_s;
        } catch (const Error& e) {
            rec.failed = true;
            rec.error = e.what();
        }
        if (on_record) on_record(rec);
        out.push_back(std::move(rec));
    }
    if (!cfg.output.empty()) {
        open_out(fs::path(cfg.output) / "sweep.csv") << sweep_csv(out);
        std::ofstream mono = open_out(fs::path(cfg.output) / "monotonicity.txt");
        const MonotonicityReport m = check_monotonicity(out);
        for (const std::string& l : m.lines) mono << l << '\n';
        mono << (m.nonincreasing ? "nonincreasing: yes\n" : "nonincreasing: no\n");
        open_out(fs::path(cfg.output) / "curve.csv") << curve_csv(curve_shape(out));
    }
    return out;
}

std::string sweep_csv(const std::vector<SweepRecord>& records) {
    std::string s = std::string(kSweepCsvHeader) + '\n';
    for (const SweepRecord& r : records) {
        s += fmt::format("{:.17g},{},{:.17g},{:.17g},{:.3f}\n", r.lambda_alpha, r.final_count, r.test_psnr, r.test_ssim,
                         r.wall_s);
    }
    return s;
}

MonotonicityReport check_monotonicity(const std::vector<SweepRecord>& records) {
    MonotonicityReport m;
    for (std::size_t k = 1; k < records.size(); ++k) {
        const SweepRecord& a = records[k - 1];
        const SweepRecord& b = records[k];
        const bool ok = !a.failed && !b.failed && b.final_count <= a.final_count;
        m.nonincreasing = m.nonincreasing && ok;
        m.lines.push_back(fmt::format("lambda {:.3g} -> {:.3g}: count {} -> {} {}", a.lambda_alpha, b.lambda_alpha,
                                      a.final_count, b.final_count, ok ? "ok" : "VIOLATION"));
    }
    return m;
}

CurveShape curve_shape(const std::vector<SweepRecord>& records, double allowance_db) {
    CurveShape c;
    for (const SweepRecord& r : records) {
        if (!r.failed) c.points.push_back({r.final_count, r.test_psnr, r.lambda_alpha, '?'});
    }
    std::sort(c.points.begin(), c.points.end(), [](const CurvePoint& a, const CurvePoint& b) {
        return a.count < b.count || (a.count == b.count && a.lambda_alpha > b.lambda_alpha);
    });
    const std::size_t n = c.points.size();
    for (std::size_t i = 0; i + 2 < n; ++i) {
        const CurvePoint &p0 = c.points[i], &p1 = c.points[i + 1], &p2 = c.points[i + 2];
        const double dn01 = static_cast<double>(p1.count) - static_cast<double>(p0.count);
        const double dn12 = static_cast<double>(p2.count) - static_cast<double>(p1.count);
        // With equal counts the first slope is undefined; only the noise allowance applies.
        const double predicted = dn01 > 0.0 ? p1.psnr + (p1.psnr - p0.psnr) / dn01 * dn12 : p1.psnr;
        const double excess = dn01 > 0.0 ? p2.psnr - predicted : std::abs(p1.psnr - p0.psnr);
        c.worst_excess_db = std::max(c.worst_excess_db, excess);
        if (excess > allowance_db) c.concave = false;
    }

    std::vector<double> slopes;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double dn = static_cast<double>(c.points[i + 1].count) - static_cast<double>(c.points[i].count);
        slopes.push_back(dn > 0.0 ? (c.points[i + 1].psnr - c.points[i].psnr) / dn : 0.0);
    }
    const double steepest = slopes.empty() ? 0.0 : *std::max_element(slopes.begin(), slopes.end());
    auto label = [&](double s) {
        if (s < 0.0) return 'D';
        const double r = steepest > 0.0 ? s / steepest : 0.0;
        return r >= 0.6 ? 'A' : (r >= 0.2 ? 'B' : 'C');
    };
    // Each point takes the slope of the segment arriving at it; the first takes the first segment's.
    for (std::size_t i = 0; i < n; ++i) {
        if (slopes.empty()) break;
        c.points[i].phase = label(slopes[i == 0 ? 0 : i - 1]);
    }
    return c;
}

std::string curve_csv(const CurveShape& shape) {
    std::string s = "final_count,test_psnr,lambda_alpha,phase_heuristic\n";
    for (const CurvePoint& p : shape.points) {
        s += fmt::format("{},{:.17g},{:.17g},{}\n", p.count, p.psnr, p.lambda_alpha, p.phase);
    }
    return s;
}

DiagnosticsResult diagnostics(const fs::path& run_dir) {
    const fs::path dir = run_dir / "checkpoints";
    if (!fs::is_directory(dir)) throw CheckpointError("no checkpoints directory in " + run_dir.string());
    const std::regex pattern(R"(ckpt_(\d+)\.ply)");
    std::vector<std::pair<long, fs::path>> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) files.emplace_back(std::stol(m[1].str()), entry.path());
    }
    if (files.empty()) throw CheckpointError("no checkpoint files in " + dir.string());
    std::sort(files.begin(), files.end());

    DiagnosticsResult d;
    for (const auto& [it, path] : files) {
        GaussianSet s;
        try {
            s = import_ply(path);
        } catch (const DataError& e) {
            throw CheckpointError(e.what());
        }
        d.iterations.push_back(it);
        d.counts.push_back(s.size());
        d.histograms.push_back(opacity_histogram(s));
        d.mean_scales.push_back(mean_activated_scale(s));
    }
    std::ofstream hist = open_out(run_dir / "diag_opacity_hist.csv");
    hist << histogram_header() << '\n';
    std::ofstream size = open_out(run_dir / "diag_size.csv");
    size << "iteration,count,mean_scale\n";
    for (std::size_t k = 0; k < d.iterations.size(); ++k) {
        hist << histogram_row(d.iterations[k], d.histograms[k]) << '\n';
        size << fmt::format("{},{},{:.17g}\n", d.iterations[k], d.counts[k], d.mean_scales[k]);
    }
    return d;
}

} // namespace splatctl
