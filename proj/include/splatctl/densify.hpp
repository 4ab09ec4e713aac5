#pragma once

#include "splatctl/core.hpp"
#include "splatctl/random.hpp"

#include <array>
#include <cstdint>
#include <deque>

namespace splatctl {

inline constexpr double kSplitOffset = 0.25;
inline constexpr double kSplitShrink = 1.6;

struct ActivatedGaussian {
    Vec3 position = Vec3::Zero();
    Vec3 scale = Vec3::Ones();
    Vec4 rotation{1.0, 0.0, 0.0, 0.0}; // unit
    double opacity = 0.5;
};

// Octree split in activated space: children at p + R (delta * s) for the 8
// sign patterns of delta in {-0.25, +0.25}^3 (x slowest), scale s / 1.6 and
// opacity 1 - sqrt(1 - alpha) so two stacked children reproduce the parent.
std::array<ActivatedGaussian, 8> split_one(const ActivatedGaussian& parent);

// Offsets in the order split_one emits children.
std::array<Vec3, 8> split_offsets();

// Shuffled queue of Gaussian ids still to be split in the current round.
struct SplitBatchCursor {
    std::deque<std::uint64_t> pending_ids;
    std::size_t batch_size = 100000;

    static SplitBatchCursor start_round(const GaussianSet& set, std::size_t batch_size, Rng& rng);
    bool has_next() const { return !pending_ids.empty(); }
};

struct BatchResult {
    TopologyEdit edit;
    std::size_t parents = 0;
    bool has_next = false;
};

// Replaces the next batch of still-live parents by their 8 children each.
// Children are appended in parent-queue order times offset order; parents
// are deleted.
BatchResult issue_batch(SplitBatchCursor& cursor, GaussianSet& set);

} // namespace splatctl
