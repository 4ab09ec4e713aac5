#include "splatctl/sparsify.hpp"

#include "splatctl/error.hpp"

namespace splatctl {

PruneResult prune(GaussianSet& set, double tau_alpha) {
    if (!(tau_alpha > 0.0 && tau_alpha < 1.0)) throw DomainError("tau_alpha must lie in (0, 1)");
    std::vector<std::size_t> doomed;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (sigmoid(set.opacity_logits[i]) < tau_alpha) doomed.push_back(i);
    }
    PruneResult r;
    r.n_removed = doomed.size();
    r.edit = set.remove(doomed);
    return r;
}

} // namespace splatctl
