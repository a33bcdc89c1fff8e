#pragma once

#include "mtta/kron_ops.hpp"
#include "mtta/tensor_train.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mtta {

using Topology = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

struct SyncTransition {
    double rate = 0.0;
    /// One 0/1 matrix per automaton; identity where the transition has no effect.
    std::vector<Matrix> factors;
};

struct SanModel {
    std::vector<Index> state_counts;
    std::vector<Matrix> local;
    std::vector<SyncTransition> syncs;
    std::vector<Vector> pi0_factors;
    Topology topology;

    Index k() const { return static_cast<Index>(state_counts.size()); }
    /// |PS| as a double, since it overflows integers for large k.
    double potential_states() const;
    /// Multi-index of the absorbing state: every automaton in its last state.
    std::vector<Index> absorbing_index() const;
};

/// Throws ModelError naming the offending field.
void validate(const SanModel& model);

SanModel model_from_json(const std::string& text);
std::string model_to_json(const SanModel& model);
SanModel load_model(const std::filesystem::path& path);
void save_model(const SanModel& model, const std::filesystem::path& path);

/// Reorders automata so that new automaton p is old automaton perm[p].
SanModel permute_model(const SanModel& model, const std::vector<Index>& perm);

/// Reverse Cuthill-McKee ordering of the symmetrized topology graph.
std::vector<Index> rcm_order(const Topology& topology);
/// Bandwidth of the symmetrized topology after applying perm.
Index topology_bandwidth(const Topology& topology, const std::vector<Index>& perm);

struct Descriptor {
    KronSumOperator R;
    std::vector<KronTerm> W_terms;
    /// Total exit rates (R + W) e; Delta = -diag(d).
    TTVector d;
    TTMatrix Q;
    /// Upper bound on ||Delta||_inf from factor-wise row sums.
    double delta_bound = 0.0;
};

Descriptor build_descriptor(const SanModel& model, const RoundingPolicy& policy = RoundingPolicy::structural());

/// sum_i maxrow(R_i) + sum_t rate_t prod_i maxrow(W_t,i).
double exit_rate_bound(const SanModel& model);

struct GammaChoice {
    enum class Kind { minimal, scaled, value };
    Kind kind = Kind::minimal;
    double parameter = 1.0;

    /// Parses "min", "scale:<c>" or "value:<v>".
    static GammaChoice parse(const std::string& text);
    std::string to_string() const;
};

double default_gamma(const Descriptor& descriptor, const GammaChoice& choice);

struct Splitting {
    double gamma = 0.0;
    /// D + A_1 = (R_1 - gamma/k I) (+) ... (+) (R_k - gamma/k I).
    KronSumOperator Q1;
    TTMatrix A2;
    /// (A_1 + A_2) e_N, so that S = q e_N^T.
    TTVector q;
    TTVector eN;

    /// -(D + A_1), whose spectrum lies in the right half plane.
    KronSumOperator negated_Q1() const;
};

Splitting build_splitting(const SanModel& model, const Descriptor& descriptor, double gamma,
                          const RoundingPolicy& policy = RoundingPolicy::structural());

} // namespace mtta
