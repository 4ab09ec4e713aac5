#include "splatctl/error.hpp"
#include "splatctl/harness.hpp"
#include "splatctl/io/config.hpp"
#include "splatctl/io/dataset.hpp"
#include "splatctl/io/ply.hpp"
#include "splatctl/io/png.hpp"
#include "splatctl/kernels.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace splatctl;

namespace {

enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kConfig = 2,
    kData = 3,
    kCollapse = 4,
};

// Config file first, then every --<key> flag that was given.
struct ConfigFlags {
    std::string file;
    std::map<std::string, std::string> values;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", file, "flat key = value run configuration");
        for (const ConfigKey& k : config_keys()) {
            cmd->add_option(std::string("--") + k.name, values[k.name], k.help);
        }
    }

    RunConfig resolve(const CLI::App* cmd) const {
        std::string text;
        if (!file.empty()) {
            std::ifstream in(file);
            if (!in) throw ConfigError("cannot read config: " + file);
            std::stringstream ss;
            ss << in.rdbuf();
            text = ss.str();
        }
        // Flags override file entries of the same key.
        std::map<std::string, std::string> merged;
        std::istringstream lines(text);
        std::string line;
        while (std::getline(lines, line)) {
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto eq = line.find('=');
            if (eq == std::string::npos) {
                if (line.find_first_not_of(" \t\r") != std::string::npos) throw ConfigError("malformed config line: " + line);
                continue;
            }
            merged[line.substr(0, eq)] = line.substr(eq + 1);
        }
        text.clear();
        for (const auto& [k, v] : values) {
            if (cmd->count(std::string("--") + k) > 0) merged[k] = v;
        }
        for (const auto& [k, v] : merged) text += k + "=" + v + "\n";
        return parse_config(text);
    }
};

std::vector<double> parse_grid(const std::string& s) {
    std::vector<double> grid;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            grid.push_back(std::stod(item, &used));
            if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("bad lambda grid entry '" + item + "'");
        }
    }
    return grid;
}

void write_eval_csv(std::ostream& out, const EvalResult& r) {
    out << "frame,psnr,ssim\n";
    for (const ViewMetrics& v : r.views) out << fmt::format("{},{:.17g},{:.17g}\n", v.frame, v.psnr, v.ssim);
    out << fmt::format("mean,{:.17g},{:.17g}\n", r.mean_psnr, r.mean_ssim);
}

std::vector<std::size_t> frames_for(const Dataset& d, const std::string& split) {
    if (split == "test") return d.test;
    if (split == "train") return d.train;
    std::vector<std::size_t> all(d.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"splatctl: Gaussian-splatting trainer with count/quality control"};
    app.require_subcommand(1);
    std::string simd;
    app.add_option("--simd", simd, "kernel level: scalar | avx2 (default: best available)")
        ->check(CLI::IsMember({"scalar", "avx2"}));

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic scene and dataset");
    SynthOptions so;
    std::string synth_out;
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--k", so.k, "number of ground-truth Gaussians");
    synth->add_option("--seed", so.seed, "scene seed");
    synth->add_option("--views", so.n_views, "number of views (every 8th is a test view)");
    synth->add_option("--resolution", so.resolution, "image width and height");

    // train
    auto* trainc = app.add_subcommand("train", "train on a dataset");
    ConfigFlags train_flags;
    train_flags.attach(trainc);

    // eval
    auto* evalc = app.add_subcommand("eval", "score a model on a dataset split");
    std::string eval_model, eval_data, eval_split = "test", eval_out;
    evalc->add_option("--model", eval_model, "model PLY")->required();
    evalc->add_option("--data", eval_data, "dataset directory")->required();
    evalc->add_option("--split", eval_split, "test | train | all")->check(CLI::IsMember({"test", "train", "all"}));
    evalc->add_option("--csv", eval_out, "write per-view CSV here instead of stdout");

    // sweep
    auto* sweepc = app.add_subcommand("sweep", "train once per lambda_alpha and report the count/quality curve");
    ConfigFlags sweep_flags;
    sweep_flags.attach(sweepc);
    std::string grid_text = "5e-6,1e-5,2e-5,5e-5,1e-4";
    sweepc->add_option("--grid", grid_text, "comma-separated, strictly increasing lambda_alpha values");

    // diag
    auto* diagc = app.add_subcommand("diag", "opacity histograms and size evolution from a run's checkpoints");
    std::string diag_run;
    diagc->add_option("--run", diag_run, "run output directory")->required();

    // export-ply
    auto* exportc = app.add_subcommand("export-ply", "rewrite a model PLY (float32 for external viewers)");
    std::string export_in, export_out;
    bool export_f32 = false;
    exportc->add_option("--model", export_in, "input PLY")->required();
    exportc->add_option("--out", export_out, "output PLY")->required();
    exportc->add_flag("--float32", export_f32, "store float properties instead of double");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (!simd.empty()) kernels::set_active(simd == "avx2" ? kernels::SimdLevel::Avx2 : kernels::SimdLevel::Scalar);

        if (*synth) {
            const SynthScene s = synth_scene(so);
            save_dataset(s.dataset, synth_out);
            export_ply(s.ground_truth, fs::path(synth_out) / "ground_truth.ply");
            fmt::print("wrote {} views ({} train / {} test) and {} ground-truth Gaussians to {}\n", s.dataset.size(),
                       s.dataset.train.size(), s.dataset.test.size(), s.ground_truth.size(), synth_out);
            return kOk;
        }
        if (*trainc) {
            const RunConfig cfg = train_flags.resolve(trainc);
            if (cfg.data.empty()) throw ConfigError("train needs --data");
            const Dataset d = load_dataset(cfg.data);
            TrainHooks hooks;
            hooks.on_checkpoint = [](const CheckpointRecord& c) {
                fmt::print(stderr, "iter {:6d}  N {:7d}  loss {:.5f}  mean scale {:.4g}  lambda {:.3g}\n", c.iteration,
                           c.count, c.loss, c.mean_scale, c.live_lambda_alpha);
            };
            const TrainResult r = train(d, cfg, hooks);
            RenderSettings rs;
            rs.threads = cfg.threads;
            const EvalResult ev = evaluate(r.model, d, d.test, rs);
            if (!cfg.output.empty()) {
                std::ofstream out(fs::path(cfg.output) / "test_metrics.csv");
                write_eval_csv(out, ev);
            }
            fmt::print("final count {}  test PSNR {:.3f} dB  test SSIM {:.4f}  ({:.1f} s)\n", r.model.size(),
                       ev.mean_psnr, ev.mean_ssim, r.wall_s);
            if (r.collapsed) {
                fmt::print(stderr, "run collapsed: every Gaussian was pruned\n");
                return kCollapse;
            }
            return kOk;
        }
        if (*evalc) {
            const GaussianSet model = import_ply(eval_model);
            const Dataset d = load_dataset(eval_data);
            const EvalResult r = evaluate(model, d, frames_for(d, eval_split));
            if (eval_out.empty()) {
                std::ostringstream ss;
                write_eval_csv(ss, r);
                fmt::print("{}", ss.str());
            } else {
                std::ofstream out(eval_out);
                write_eval_csv(out, r);
            }
            return kOk;
        }
        if (*sweepc) {
            const RunConfig cfg = sweep_flags.resolve(sweepc);
            if (cfg.data.empty()) throw ConfigError("sweep needs --data");
            const std::vector<double> grid = parse_grid(grid_text);
            const Dataset d = load_dataset(cfg.data);
            const auto recs = sweep(d, cfg, grid, [](const SweepRecord& r) {
                fmt::print(stderr, "lambda {:.3g}: N {}  test PSNR {:.3f}  {}{}\n", r.lambda_alpha, r.final_count,
                           r.test_psnr, r.failed ? "FAILED " + r.error : "", r.collapsed ? " (collapsed)" : "");
            });
            fmt::print("{}", sweep_csv(recs));
            const MonotonicityReport m = check_monotonicity(recs);
            for (const auto& l : m.lines) fmt::print(stderr, "{}\n", l);
            return kOk;
        }
        if (*diagc) {
            const DiagnosticsResult d = diagnostics(diag_run);
            fmt::print("{} checkpoints; wrote diag_opacity_hist.csv and diag_size.csv\n", d.iterations.size());
            return kOk;
        }
        if (*exportc) {
            const GaussianSet model = import_ply(export_in);
            export_ply(model, export_out, export_f32 ? PlyScalar::Float32 : PlyScalar::Float64);
            return kOk;
        }
    } catch (const ConfigError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return kConfig;
    } catch (const DataError& e) {
        fmt::print(stderr, "data error: {}\n", e.what());
        return kData;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kInternal;
    }
    return kInternal;
}
