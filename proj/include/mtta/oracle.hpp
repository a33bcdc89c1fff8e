#pragma once

#include "mtta/san_model.hpp"

#include <vector>

namespace mtta {

inline constexpr double kOracleStateCap = 6561; // 3^8

/// Explicit generator over the potential state space, last automaton fastest.
struct DenseChain {
    Matrix Q;
    Vector pi0;
    Index absorbing_index = 0;
};

DenseChain dense_generator(const SanModel& model, double state_cap = kOracleStateCap);

/// -pi0^T Qhat^{-1} e on the transient block. Throws NumericalError when the
/// block is singular.
double dense_mtta(const DenseChain& chain);

/// States reachable from the support of pi0.
std::vector<bool> dense_reachable(const DenseChain& chain);

struct SplittingPremises {
    bool d_nonpositive = false;
    bool a1_nonnegative = false;
    bool a2_nonnegative = false;
    bool last_row_zero = false;    // e_N^T (D + A_1 + A_2) = 0
    bool a1_last_row_zero = false; // e_N^T A_1 = 0
    bool zero_row_sums = false;    // (D + A_1 + A_2) e = 0
    bool inverse_nonpositive = false;
    bool a2_last_column_positive = false; // min_{i<N} [A_2]_{iN} > 0

    bool all() const;
};

struct ContractionReport {
    double rho = 0.0;
    double norm_inf = 0.0;
    double min_a2_last_column = 0.0;
    SplittingPremises premises;
};

/// Dense D, A_1, A_2 and M = -(D + A_1)^{-1}(A_2 - S) built from the model.
struct DenseSplitting {
    Matrix D, A1, A2, S, M;
};

DenseSplitting dense_splitting(const SanModel& model, double gamma, double state_cap = kOracleStateCap);
ContractionReport dense_contraction_checks(const SanModel& model, double gamma,
                                           double state_cap = kOracleStateCap);

} // namespace mtta
