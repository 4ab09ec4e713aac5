#include "splatctl/io/config.hpp"

#include "splatctl/error.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace splatctl {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError(fmt::format("{}: '{}' is not a number", key, v));
    return out;
}

long long parse_int(const std::string& key, const std::string& v) {
    long long out = 0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError(fmt::format("{}: '{}' is not an integer", key, v));
    return out;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
    const long long x = parse_int(key, v);
    if (x < 0) throw ConfigError(fmt::format("{}: must be non-negative", key));
    return static_cast<std::size_t>(x);
}

std::string fmt_double(double x) { return fmt::format("{:.17g}", x); }

struct Binding {
    ConfigKey key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define SPLATCTL_DOUBLE(name, field, help)                                                                  \
    Binding{{name, help}, [](RunConfig& c, const std::string& v) { c.field = parse_double(name, v); },      \
            [](const RunConfig& c) { return fmt_double(c.field); }}
#define SPLATCTL_LONG(name, field, help)                                                                    \
    Binding{{name, help}, [](RunConfig& c, const std::string& v) { c.field = static_cast<decltype(c.field)>(parse_int(name, v)); }, \
            [](const RunConfig& c) { return fmt::format("{}", c.field); }}

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> table{
        Binding{{"profile", "desk | paper; selects defaults for every other key"},
                [](RunConfig& c, const std::string& v) {
                    if (v == "desk") c.profile = Profile::Desk;
                    else if (v == "paper") c.profile = Profile::Paper;
                    else throw ConfigError("profile: expected 'desk' or 'paper', got '" + v + "'");
                },
                [](const RunConfig& c) { return std::string(c.profile == Profile::Desk ? "desk" : "paper"); }},
        Binding{{"seed", "run seed (view sampling, split shuffles, random init)"},
                [](RunConfig& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(parse_count("seed", v)); },
                [](const RunConfig& c) { return fmt::format("{}", c.seed); }},
        Binding{{"data", "dataset directory (transforms.json layout)"},
                [](RunConfig& c, const std::string& v) { c.data = v; }, [](const RunConfig& c) { return c.data; }},
        Binding{{"output", "run output directory"}, [](RunConfig& c, const std::string& v) { c.output = v; },
                [](const RunConfig& c) { return c.output; }},
        SPLATCTL_DOUBLE("lambda_alpha", loss.lambda_alpha, "opacity L1 weight"),
        SPLATCTL_DOUBLE("lambda_dssim", loss.lambda_w, "D-SSIM weight inside the reconstruction loss"),
        SPLATCTL_LONG("ssim_window", loss.ssim_window, "SSIM Gaussian window size (odd)"),
        SPLATCTL_DOUBLE("ssim_sigma", loss.ssim_sigma, "SSIM Gaussian window sigma"),
        SPLATCTL_LONG("prune_interval", control.prune_interval, "iterations between prune checks"),
        SPLATCTL_DOUBLE("tau_alpha", control.tau_alpha, "prune Gaussians with opacity strictly below this"),
        Binding{{"tau_remove", "split when a prune removes fewer than this; 'auto' scales with the initial count"},
                [](RunConfig& c, const std::string& v) {
                    c.tau_remove = v == "auto" ? std::nullopt : std::optional(parse_count("tau_remove", v));
                },
                [](const RunConfig& c) { return c.tau_remove ? fmt::format("{}", *c.tau_remove) : std::string("auto"); }},
        Binding{{"n_batch", "parents split per batch; 'auto' scales with the initial count"},
                [](RunConfig& c, const std::string& v) {
                    c.n_batch = v == "auto" ? std::nullopt : std::optional(parse_count("n_batch", v));
                },
                [](const RunConfig& c) { return c.n_batch ? fmt::format("{}", *c.n_batch) : std::string("auto"); }},
        SPLATCTL_LONG("t_delay", control.t_delay, "iterations without pruning after a split batch"),
        SPLATCTL_LONG("tau_split", control.tau_split, "maximum split rounds before lambda_alpha is zeroed"),
        Binding{{"t_max", "total training iterations"},
                [](RunConfig& c, const std::string& v) { c.control.t_max = c.optim.t_max = static_cast<long>(parse_int("t_max", v)); },
                [](const RunConfig& c) { return fmt::format("{}", c.control.t_max); }},
        SPLATCTL_DOUBLE("lr_position_init", optim.lr_position_init, "initial position LR (times scene extent)"),
        SPLATCTL_DOUBLE("lr_position_final", optim.lr_position_final, "final position LR (times scene extent)"),
        SPLATCTL_DOUBLE("lr_log_scale", optim.lr_log_scale, "log-scale LR"),
        SPLATCTL_DOUBLE("lr_rotation", optim.lr_rotation, "quaternion LR"),
        SPLATCTL_DOUBLE("lr_opacity", optim.lr_opacity, "opacity-logit LR"),
        SPLATCTL_DOUBLE("lr_sh_dc", optim.lr_sh_dc, "SH DC LR"),
        SPLATCTL_DOUBLE("lr_sh_rest", optim.lr_sh_rest, "higher-band SH LR"),
        SPLATCTL_DOUBLE("adam_beta1", optim.beta1, "Adam beta1"),
        SPLATCTL_DOUBLE("adam_beta2", optim.beta2, "Adam beta2"),
        SPLATCTL_DOUBLE("adam_eps", optim.eps, "Adam epsilon"),
        SPLATCTL_LONG("sh_interval", optim.sh_interval, "iterations between SH degree promotions"),
        SPLATCTL_LONG("max_sh_degree", max_sh_degree, "highest SH degree (0..3)"),
        SPLATCTL_LONG("checkpoint_interval", checkpoint_interval, "iterations between checkpoints"),
        Binding{{"n_random_init", "random Gaussians when the dataset has no points"},
                [](RunConfig& c, const std::string& v) { c.n_random_init = parse_count("n_random_init", v); },
                [](const RunConfig& c) { return fmt::format("{}", c.n_random_init); }},
        SPLATCTL_LONG("threads", threads, "renderer worker threads"),
    };
    return table;
}

#undef SPLATCTL_DOUBLE
#undef SPLATCTL_LONG

const Binding& binding(const std::string& key) {
    for (const Binding& b : bindings()) {
        if (key == b.key.name) return b;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

} // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        for (const Binding& b : bindings()) k.push_back(b.key);
        return k;
    }();
    return keys;
}

RunConfig RunConfig::defaults(Profile p) {
    RunConfig c;
    c.profile = p;
    if (p == Profile::Desk) {
        c.control.t_max = c.optim.t_max = 8000;
    } else {
        c.control.t_max = c.optim.t_max = 30000;
        c.tau_remove = 2000;
        c.n_batch = 100000;
        c.checkpoint_interval = 1000;
        c.n_random_init = 100000;
    }
    return c;
}

void RunConfig::set(const std::string& key, const std::string& value) { binding(key).set(*this, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return binding(key).get(*this); }

ControlConfig RunConfig::resolved_control(std::size_t n_init) const {
    ControlConfig c = control;
    const ControlConfig scaled = ControlConfig::desk(n_init);
    c.tau_remove = tau_remove.value_or(scaled.tau_remove);
    c.n_batch = n_batch.value_or(scaled.n_batch);
    c.validate();
    return c;
}

void RunConfig::validate() const {
    loss.validate();
    optim.validate();
    ControlConfig c = control;
    c.tau_remove = tau_remove.value_or(1);
    c.n_batch = n_batch.value_or(1);
    c.validate();
    if (control.t_max != optim.t_max) throw ConfigError("t_max differs between control and optimizer");
    if (max_sh_degree < 0 || max_sh_degree > 3) throw ConfigError("max_sh_degree must lie in [0, 3]");
    if (checkpoint_interval <= 0) throw ConfigError("checkpoint_interval must be positive");
    if (threads <= 0) throw ConfigError("threads must be positive");
}

std::string RunConfig::dump() const {
    std::string out;
    for (const Binding& b : bindings()) out += fmt::format("{} = {}\n", b.key.name, b.get(*this));
    return out;
}

RunConfig parse_config(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected 'key = value'", lineno));
        entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    std::set<std::string> seen;
    Profile profile = Profile::Desk;
    for (const auto& [k, v] : entries) {
        if (!seen.insert(k).second) throw ConfigError("duplicate config key '" + k + "'");
        if (k == "profile") {
            RunConfig probe;
            probe.set(k, v);
            profile = probe.profile;
        }
    }
    RunConfig cfg = RunConfig::defaults(profile);
    for (const auto& [k, v] : entries) cfg.set(k, v);
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

} // namespace splatctl
