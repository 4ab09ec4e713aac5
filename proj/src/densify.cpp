#include "splatctl/densify.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace splatctl {

std::array<Vec3, 8> split_offsets() {
    std::array<Vec3, 8> out;
    for (int k = 0; k < 8; ++k) {
        out[k] = Vec3((k & 4) ? kSplitOffset : -kSplitOffset, (k & 2) ? kSplitOffset : -kSplitOffset,
                      (k & 1) ? kSplitOffset : -kSplitOffset);
    }
    return out;
}

std::array<ActivatedGaussian, 8> split_one(const ActivatedGaussian& parent) {
    const Mat3 r = rotation_from_quaternion(parent.rotation);
    const double alpha = std::min(parent.opacity, kOpacityClampHi);
    const double child_alpha = 1.0 - std::sqrt(1.0 - alpha);
    const auto offsets = split_offsets();
    std::array<ActivatedGaussian, 8> children;
    for (int k = 0; k < 8; ++k) {
        ActivatedGaussian& c = children[k];
        c.position = parent.position + r * offsets[k].cwiseProduct(parent.scale);
        c.scale = parent.scale / kSplitShrink;
        c.rotation = parent.rotation;
        c.opacity = child_alpha;
    }
    return children;
}

SplitBatchCursor SplitBatchCursor::start_round(const GaussianSet& set, std::size_t batch_size, Rng& rng) {
    std::vector<std::uint64_t> ids(set.ids.begin(), set.ids.end());
    rng.shuffle(ids.begin(), ids.end());
    SplitBatchCursor c;
    c.pending_ids.assign(ids.begin(), ids.end());
    c.batch_size = std::max<std::size_t>(batch_size, 1);
    return c;
}

BatchResult issue_batch(SplitBatchCursor& cursor, GaussianSet& set) {
    std::unordered_map<std::uint64_t, std::size_t> index_of;
    index_of.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) index_of.emplace(set.ids[i], i);

    std::erase_if(cursor.pending_ids, [&](std::uint64_t id) { return !index_of.contains(id); });

    const std::size_t take = std::min(cursor.batch_size, cursor.pending_ids.size());
    std::vector<std::size_t> parents;
    parents.reserve(take);
    for (std::size_t k = 0; k < take; ++k) {
        parents.push_back(index_of.at(cursor.pending_ids.front()));
        cursor.pending_ids.pop_front();
    }

    set.reserve(set.size() + 8 * take);
    for (std::size_t idx : parents) {
        const RawGaussian raw = set.get(idx);
        ActivatedGaussian parent;
        parent.position = raw.position;
        parent.scale = raw.log_scale.array().exp();
        parent.rotation = normalize_quaternion(raw.rotation);
        parent.opacity = sigmoid(raw.opacity_logit);
        for (const ActivatedGaussian& c : split_one(parent)) {
            RawGaussian child;
            child.position = c.position;
            for (int a = 0; a < 3; ++a) child.log_scale[a] = scale_to_log(c.scale[a]);
            child.rotation = raw.rotation; // stored quaternion inherited as-is
            child.opacity_logit = opacity_to_logit(c.opacity);
            child.sh = raw.sh;
            set.append(child);
        }
    }

    std::sort(parents.begin(), parents.end());
    BatchResult result;
    result.edit = set.remove(parents);
    result.edit.appended = 8 * take;
    result.parents = take;
    result.has_next = cursor.has_next();
    return result;
}

} // namespace splatctl
