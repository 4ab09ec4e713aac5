#pragma once

#include "splatctl/core.hpp"

namespace splatctl {

struct PruneResult {
    std::size_t n_removed = 0;
    TopologyEdit edit;
};

// Removes every Gaussian with activated opacity strictly below `tau_alpha`;
// survivors keep their relative order. Throws DomainError unless tau_alpha is in (0, 1).
PruneResult prune(GaussianSet& set, double tau_alpha);

} // namespace splatctl
