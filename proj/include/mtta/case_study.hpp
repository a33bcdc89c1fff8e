#pragma once

#include "mtta/san_model.hpp"

#include <cstdint>
#include <optional>

namespace mtta {

struct CaseStudyParams {
    Index k = 1;
    std::uint64_t seed = 0;
    /// Off-diagonal edge probability; 1/(2k) when unset.
    std::optional<double> density;
};

double default_density(Index k);

/// Unit diagonal plus independent Bernoulli(density) off-diagonal entries,
/// drawn in row-major order from mt19937_64(seed).
Topology random_topology(Index k, std::uint64_t seed, double density);

/// The four-component interdependency pattern used as a fixed example.
Topology figure1_topology();

/// Cyber-physical benchmark: each component has states working, software
/// failed and failed, with rates i/10 and i for the hardware failures and a
/// software failure of rate i that propagates along topology edges.
SanModel generate_case_study(const Topology& topology);
SanModel generate_case_study(const CaseStudyParams& params);

} // namespace mtta
