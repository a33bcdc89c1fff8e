#pragma once

#include "mtta/kron_ops.hpp"
#include "mtta/san_model.hpp"

#include <string>
#include <vector>

namespace mtta {

enum class Algorithm { linear, squared, transpose };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& text);

struct SolverConfig {
    Algorithm algorithm = Algorithm::squared;
    GammaChoice gamma;
    double exp_sum_eps = 1e-12;
    /// Truncation of iterates.
    RoundingPolicy rounding{1e-12, std::numeric_limits<Index>::max()};
    /// Truncation of the materialized inverse of -(D + A_1).
    double inverse_tolerance = 1e-12;
    Index max_iter = 100'000;
    double stop_tol = 1e-8;
    /// b = e + reward_shift * e_N.
    double reward_shift = -1.0;
    bool use_rcm = true;
    /// When positive, run exactly this many iterations (squarings for the
    /// squared algorithm) and ignore the stopping rule.
    Index fixed_iterations = 0;

    void validate() const;
};

struct SolveReport {
    Algorithm algorithm = Algorithm::squared;
    double mtta = 0.0;
    Index iterations = 0;
    /// Measure after each iteration; a nondecreasing sequence of lower
    /// bounds when reward_shift = -1.
    std::vector<double> measure_history;
    std::vector<Index> max_rank_history;
    double residual_estimate = 0.0;
    double wall_time = 0.0;
    bool converged = false;

    double gamma = 0.0;
    double spectrum_lower = 0.0;
    double spectrum_upper = 0.0;
    std::size_t exp_sum_terms = 0;
    Index inverse_max_rank = 0;
    /// Largest number of bytes held in TT carriages at any point of the run.
    std::size_t peak_memory_bytes = 0;
    std::vector<Index> permutation;
};

/// Everything an iteration needs: the splitting, the exponential sum, and
/// the materialized inverse of -(D + A_1).
struct PreparedSplitting {
    Splitting split;
    ExponentialSum es;
    double scale = 1.0;
    SpectrumInterval spectrum;
    TTMatrix neg_q1_inverse;
};

PreparedSplitting prepare_splitting(Splitting split, double exp_sum_eps, double inverse_tolerance);

/// M v = -(D + A_1)^{-1} (A_2 v - q (e_N^T v)), applying the inverse term by
/// term through the exponential sum.
TTVector apply_M(const Splitting& split, const ExponentialSum& es, double scale, const TTVector& v,
                 const RoundingPolicy& policy);
/// Same product using the materialized inverse.
TTVector apply_M(const PreparedSplitting& prep, const TTVector& v, const RoundingPolicy& policy);

TTVector reward_vector(const std::vector<Index>& mode_sizes, double reward_shift);

struct NeumannResult {
    TTVector x;
    SolveReport report;
};

/// x ~ (Q - S)^{-1} b summing M^j Q_1^{-1} b term by term.
NeumannResult neumann_linear(const PreparedSplitting& prep, const TTVector& b, const TTVector& pi0,
                             const SolverConfig& cfg);
/// Same series through (I + M)(I + M^2)(I + M^4)...
NeumannResult neumann_squared(const PreparedSplitting& prep, const TTVector& b, const TTVector& pi0,
                              const SolverConfig& cfg);
/// Row vector pi0^T (Q - S)^{-1}, stored as a column.
NeumannResult neumann_transpose(const PreparedSplitting& prep, const TTVector& b, const TTVector& pi0,
                                const SolverConfig& cfg);

SolveReport compute_mtta(const SanModel& model, const SolverConfig& cfg);

} // namespace mtta
