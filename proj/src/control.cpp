#include "splatctl/control.hpp"

#include "splatctl/error.hpp"
#include "splatctl/sparsify.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace splatctl {

void ControlConfig::validate() const {
    if (prune_interval <= 0) throw ConfigError("prune_interval must be positive");
    if (!(tau_alpha > 0.0 && tau_alpha < 1.0)) throw ConfigError("tau_alpha must lie in (0, 1)");
    if (tau_remove == 0) throw ConfigError("tau_remove must be positive");
    if (n_batch == 0) throw ConfigError("n_batch must be positive");
    if (t_delay <= 0) throw ConfigError("t_delay must be positive");
    if (tau_split < 0) throw ConfigError("tau_split must be non-negative");
    if (t_max <= 0) throw ConfigError("t_max must be positive");
}

ControlConfig ControlConfig::desk(std::size_t n_init) {
    ControlConfig c;
    const double ratio = static_cast<double>(n_init) / 100000.0;
    c.tau_remove = std::max<std::size_t>(20, static_cast<std::size_t>(std::llround(2000.0 * ratio)));
    c.n_batch = std::max<std::size_t>(500, static_cast<std::size_t>(std::llround(100000.0 * ratio)));
    c.t_max = 8000;
    return c;
}

ControlState ControlState::initial(double lambda_alpha) {
    ControlState s;
    s.configured_lambda_alpha = lambda_alpha;
    s.live_lambda_alpha = lambda_alpha;
    return s;
}

const char* event_name(EventKind k) {
    switch (k) {
    case EventKind::Pruned: return "pruned";
    case EventKind::SplitBatch: return "split_batch";
    case EventKind::LambdaDisabled: return "lambda_disabled";
    }
    return "unknown";
}

std::string format_event(const ControlEvent& e) {
    return fmt::format("{},{},{},{},{:.17g}", e.t, event_name(e.kind), e.n_removed, e.count_after,
                       e.live_lambda_alpha);
}

std::vector<ControlEvent> step(ControlState& s, const ControlConfig& cfg, ControlTarget& target) {
    std::vector<ControlEvent> events;
    if (s.t % cfg.prune_interval == 0 && s.t >= s.t_until) {
        const std::size_t n_removed = target.prune(cfg.tau_alpha);
        events.push_back({s.t, EventKind::Pruned, n_removed, target.count(), s.live_lambda_alpha});
        if (n_removed < cfg.tau_remove || s.has_next_batch) {
            if (s.n_split < cfg.tau_split) {
                const SplitOutcome out = target.split_next_batch(cfg.n_batch);
                s.has_next_batch = out.has_next;
                s.t_until = s.t + cfg.t_delay;
                if (!s.has_next_batch) ++s.n_split;
                events.push_back({s.t, EventKind::SplitBatch, out.parents, target.count(), s.live_lambda_alpha});
            } else if (!s.lambda_disabled) {
                s.live_lambda_alpha = 0.0;
                s.lambda_disabled = true;
                events.push_back({s.t, EventKind::LambdaDisabled, 0, target.count(), 0.0});
            }
        }
    }
    ++s.t;
    return events;
}

ModelTarget::ModelTarget(GaussianSet& set, Rng& rng, EditHook on_edit)
    : set_(set), rng_(rng), on_edit_(std::move(on_edit)) {}

std::size_t ModelTarget::prune(double tau_alpha) {
    PruneResult r = splatctl::prune(set_, tau_alpha);
    if (on_edit_ && !r.edit.empty()) on_edit_(r.edit);
    return r.n_removed;
}

SplitOutcome ModelTarget::split_next_batch(std::size_t n_batch) {
    if (!cursor_ || !cursor_->has_next()) cursor_ = SplitBatchCursor::start_round(set_, n_batch, rng_);
    BatchResult r = issue_batch(*cursor_, set_);
    if (on_edit_ && !r.edit.empty()) on_edit_(r.edit);
    return {r.parents, r.has_next};
}

} // namespace splatctl
