#pragma once

#include "mtta/tensor_train.hpp"

#include <utility>
#include <vector>

namespace mtta {

inline constexpr Index kExpmDimensionCap = 512;

/// e^A by scaling and squaring with a degree <= 13 Pade approximant.
Matrix expm_dense(const Matrix& a, Index dimension_cap = kExpmDimensionCap);

/// 1/x ~ sum_j alpha_j exp(-beta_j x) on [1, r_cond] with sup error `accuracy`.
struct ExponentialSum {
    std::vector<double> alphas;
    std::vector<double> betas;
    double r_cond = 1.0;
    double accuracy = 0.0;

    std::size_t terms() const { return alphas.size(); }
    double evaluate(double x) const;
};

/// Sinc quadrature of 1/x = int exp(t - x e^t) dt with nodes t = j h for
/// j in [j_lo, j_hi]. `accuracy` is filled in by grid evaluation.
ExponentialSum exp_sum_sinc(double h, int j_lo, int j_hi, double r_cond);

/// Picks step and node range for the requested accuracy and verifies the
/// result on a sample grid. Throws NumericalError below the attainable floor.
ExponentialSum exp_sum_coeffs(double r_cond, double eps);

/// Largest |1/x - s(x)| over `samples` log-spaced plus `samples` uniform
/// points of [1, r_cond].
double exp_sum_max_error(const ExponentialSum& es, Index samples = 10'000);

/// Smallest representable accuracy; requests below it are rejected.
inline constexpr double kExpSumFloor = 1e-14;

struct KronSumOperator {
    std::vector<Matrix> factors;

    std::vector<Index> sizes() const;
    TTMatrix to_ttm() const;
};

struct SpectrumInterval {
    double lower = 0.0;
    double upper = 0.0;
};

/// Gershgorin enclosure of the real parts of the spectrum of the Kronecker
/// sum. Throws NumericalError unless the lower end is strictly positive.
SpectrumInterval spectrum_interval(const KronSumOperator& op);

/// Per-term Kronecker exponentials exp(-beta_j * scale * A_i), weighted by
/// alpha_j * scale. Shared by the two inverse routines below.
std::vector<KronTerm> kron_sum_inverse_terms(const KronSumOperator& op, const ExponentialSum& es, double scale);

/// op^{-1} v via the exponential sum applied to scale*op; the scaled spectrum
/// must lie inside [1, es.r_cond].
TTVector kron_sum_inverse_apply(const KronSumOperator& op, const ExponentialSum& es, double scale,
                                const TTVector& v, const RoundingPolicy& policy);
TTMatrix kron_sum_inverse_as_ttm(const KronSumOperator& op, const ExponentialSum& es, double scale,
                                 const RoundingPolicy& policy);

} // namespace mtta
