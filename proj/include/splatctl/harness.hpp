#pragma once

#include "splatctl/control.hpp"
#include "splatctl/core.hpp"
#include "splatctl/io/config.hpp"
#include "splatctl/io/dataset.hpp"
#include "splatctl/render.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace splatctl {

inline constexpr std::size_t kHistogramBins = 64;
using OpacityHistogram = std::array<std::size_t, kHistogramBins>;

// 64 uniform bins over [0, 1] of activated opacities; counts sum to N.
OpacityHistogram opacity_histogram(const GaussianSet& set);
// Mean over all Gaussians and axes of the activated scale; 0 for N = 0.
double mean_activated_scale(const GaussianSet& set);
double mean_activated_opacity(const GaussianSet& set);
double min_activated_opacity(const GaussianSet& set);

struct CheckpointRecord {
    long iteration = 0; // completed iterations
    std::size_t count = 0;
    double loss = 0.0; // mean total loss since the previous checkpoint
    double rgb_loss = 0.0;
    double opacity_l1 = 0.0;
    double mean_scale = 0.0;
    double live_lambda_alpha = 0.0;
    int active_sh_degree = 0;
    OpacityHistogram histogram{};
};

// Observation points inside the training loop. All optional.
struct TrainHooks {
    // After the control step of iteration t.
    std::function<void(long t, const GaussianSet&, const ControlState&, const std::vector<ControlEvent>&)> on_iteration;
    std::function<void(const CheckpointRecord&)> on_checkpoint;
    // Right after each prune of iteration t, before a split of the same
    // iteration; `removed` holds the ids of the pruned Gaussians.
    std::function<void(long t, const GaussianSet&, const std::vector<std::uint64_t>& removed)> on_prune;
};

struct TrainResult {
    GaussianSet model;
    std::size_t initial_count = 0;
    ControlConfig control; // with count thresholds resolved
    double scene_extent = 1.0;
    std::vector<ControlEvent> events;
    std::vector<CheckpointRecord> checkpoints;
    ControlState final_state;
    long iterations = 0;
    bool collapsed = false;
    double wall_s = 0.0;
};

// The full optimize / prune / split schedule on the training split. When
// cfg.output is set, writes config, event log, checkpoints (summary CSV,
// histogram CSV and PLY snapshots) and the final model there.
// Throws EmptyDatasetError without training views.
TrainResult train(const Dataset& data, const RunConfig& cfg, const TrainHooks& hooks = {});

struct ViewMetrics {
    std::size_t frame = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalResult {
    std::vector<ViewMetrics> views;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    std::size_t count = 0;
};

// Renders `frames` and scores them against the dataset images. Throws
// ShapeError for out-of-range frames or image/camera size disagreement.
EvalResult evaluate(const GaussianSet& model, const Dataset& data, const std::vector<std::size_t>& frames,
                    const RenderSettings& settings = {});

struct SweepRecord {
    double lambda_alpha = 0.0;
    std::size_t final_count = 0;
    double train_psnr = 0.0;
    double train_ssim = 0.0;
    double test_psnr = 0.0;
    double test_ssim = 0.0;
    double wall_s = 0.0;
    bool collapsed = false;
    bool failed = false;
    std::string error;
    std::vector<CheckpointRecord> series;
};

// One independent run per lambda (same seed and data). A failing run is
// flagged and the sweep continues. Throws ConfigError unless the grid is
// nonempty and strictly increasing. Per-run outputs go to
// cfg.output/lambda_<k> when cfg.output is set.
// `hooks_for(k)` supplies the observation hooks of the k-th run.
std::vector<SweepRecord> sweep(const Dataset& data, const RunConfig& cfg, const std::vector<double>& grid,
                               const std::function<void(const SweepRecord&)>& on_record = {},
                               const std::function<TrainHooks(std::size_t)>& hooks_for = {});

inline constexpr const char* kSweepCsvHeader = "lambda_alpha,final_count,test_psnr,test_ssim,wall_s";
std::string sweep_csv(const std::vector<SweepRecord>& records);

struct MonotonicityReport {
    bool nonincreasing = true;
    std::vector<std::string> lines; // one per adjacent pair
};
MonotonicityReport check_monotonicity(const std::vector<SweepRecord>& records);

struct CurvePoint {
    std::size_t count = 0;
    double psnr = 0.0;
    double lambda_alpha = 0.0;
    char phase = '?'; // heuristic A-D label
};

struct CurveShape {
    std::vector<CurvePoint> points; // ascending count
    bool concave = true;
    double worst_excess_db = 0.0; // largest rise above the extrapolated previous slope
};

// Orders (count, PSNR) by count and tests that each triple's third point
// lies no more than `allowance_db` above the line through the first two.
// Phases are labelled from slope thresholds relative to the steepest
// segment, each point taking its incoming segment: A >= 0.6, B >= 0.2,
// C >= 0, D < 0. Heuristic only.
CurveShape curve_shape(const std::vector<SweepRecord>& records, double allowance_db = 0.1);
std::string curve_csv(const CurveShape& shape);

struct DiagnosticsResult {
    std::vector<long> iterations;
    std::vector<std::size_t> counts;
    std::vector<OpacityHistogram> histograms;
    std::vector<double> mean_scales;
};

// Recomputes histograms and mean scales from checkpoints/ckpt_*.ply under
// `run_dir` and writes diag_opacity_hist.csv and diag_size.csv there.
// Throws CheckpointError when no checkpoints exist.
DiagnosticsResult diagnostics(const std::filesystem::path& run_dir);

} // namespace splatctl
