#pragma once

#include "splatctl/core.hpp"
#include "splatctl/densify.hpp"
#include "splatctl/random.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace splatctl {

struct ControlConfig {
    long prune_interval = 100;
    double tau_alpha = 0.005;
    std::size_t tau_remove = 2000;
    std::size_t n_batch = 100000;
    long t_delay = 200;
    int tau_split = 6;
    long t_max = 30000;

    // Throws ConfigError.
    void validate() const;

    // Desk scaling of the count thresholds to the initial population.
    static ControlConfig desk(std::size_t n_init);
};

struct ControlState {
    long t = 0;
    int n_split = 0;
    long t_until = 0;
    bool has_next_batch = false;
    double configured_lambda_alpha = 0.0;
    double live_lambda_alpha = 0.0;
    bool lambda_disabled = false;

    static ControlState initial(double lambda_alpha);
};

enum class EventKind { Pruned, SplitBatch, LambdaDisabled };

const char* event_name(EventKind k);

struct ControlEvent {
    long t = 0;
    EventKind kind = EventKind::Pruned;
    std::size_t n_removed = 0; // split batches report the parents split
    std::size_t count_after = 0;
    double live_lambda_alpha = 0.0;
};

// CSV header and row for the per-event log.
inline constexpr const char* kEventLogHeader = "iteration,event,n_removed,count,live_lambda_alpha";
std::string format_event(const ControlEvent& e);

struct SplitOutcome {
    std::size_t parents = 0;
    bool has_next = false;
};

// The structural operations the scheduler drives. Scripted implementations
// let tests replay arbitrary n_removed sequences.
class ControlTarget {
public:
    virtual ~ControlTarget() = default;
    virtual std::size_t prune(double tau_alpha) = 0;
    // Issues the next batch of the current round, starting a new round when
    // none is pending.
    virtual SplitOutcome split_next_batch(std::size_t n_batch) = 0;
    virtual std::size_t count() const = 0;
};

// One scheduler iteration; returns the events taken (empty when idle).
std::vector<ControlEvent> step(ControlState& state, const ControlConfig& cfg, ControlTarget& target);

// Target bound to a live GaussianSet. Every structural edit is forwarded to
// `on_edit` so dependent per-Gaussian state (optimizer moments) stays aligned.
class ModelTarget final : public ControlTarget {
public:
    using EditHook = std::function<void(const TopologyEdit&)>;

    ModelTarget(GaussianSet& set, Rng& rng, EditHook on_edit = {});

    std::size_t prune(double tau_alpha) override;
    SplitOutcome split_next_batch(std::size_t n_batch) override;
    std::size_t count() const override { return set_.size(); }

    const std::optional<SplitBatchCursor>& cursor() const { return cursor_; }

private:
    GaussianSet& set_;
    Rng& rng_;
    EditHook on_edit_;
    std::optional<SplitBatchCursor> cursor_;
};

} // namespace splatctl
