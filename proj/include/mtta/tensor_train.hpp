#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace mtta {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Default cap on the number of entries a dense expansion may have.
inline constexpr Index kDenseSizeCap = 10'000'000;

/// Truncation control for TT rounding.
struct RoundingPolicy {
    double rel_tolerance = 1e-8;
    Index max_rank = std::numeric_limits<Index>::max();

    /// Tolerance used for operators that are exactly low-rank by construction.
    static RoundingPolicy structural() { return {1e-14, std::numeric_limits<Index>::max()}; }
};

/// Order-3 array of shape (left x mode x right), column-major with the left
/// rank index fastest. The left unfolding ((left*mode) x right) and the right
/// unfolding (left x (mode*right)) are both plain reshapes of the storage.
class Carriage {
public:
    Carriage() = default;
    Carriage(Index left, Index mode, Index right);
    Carriage(Index left, Index mode, Index right, std::vector<double> values);

    Index left_rank() const { return left_; }
    Index mode_size() const { return mode_; }
    Index right_rank() const { return right_; }
    std::size_t size() const { return values_.size(); }

    double operator()(Index a, Index i, Index b) const { return values_[offset(a, i, b)]; }
    double& operator()(Index a, Index i, Index b) { return values_[offset(a, i, b)]; }

    Eigen::Map<const Matrix> left_unfolding() const { return {values_.data(), left_ * mode_, right_}; }
    Eigen::Map<Matrix> left_unfolding() { return {values_.data(), left_ * mode_, right_}; }
    Eigen::Map<const Matrix> right_unfolding() const { return {values_.data(), left_, mode_ * right_}; }
    Eigen::Map<Matrix> right_unfolding() { return {values_.data(), left_, mode_ * right_}; }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    static Carriage from_left_unfolding(const Matrix& m, Index left, Index mode);
    static Carriage from_right_unfolding(const Matrix& m, Index mode, Index right);

private:
    std::size_t offset(Index a, Index i, Index b) const
    {
        return static_cast<std::size_t>(a + left_ * (i + mode_ * b));
    }

    Index left_ = 0;
    Index mode_ = 0;
    Index right_ = 0;
    std::vector<double> values_;
};

/// A tensor in train format. Immutable once built; the constructor checks the
/// boundary ranks and that neighbouring carriages agree on their shared rank.
class TTVector {
public:
    TTVector() = default;
    explicit TTVector(std::vector<Carriage> carriages);

    std::size_t order() const { return carriages_.size(); }
    const Carriage& carriage(std::size_t i) const { return carriages_[i]; }
    std::span<const Carriage> carriages() const { return carriages_; }

    std::vector<Index> mode_sizes() const;
    /// Bond ranks r_0..r_k, boundary ones included.
    std::vector<Index> ranks() const;
    Index max_rank() const;
    /// Total number of stored doubles over all carriages.
    std::size_t element_count() const;

private:
    std::vector<Carriage> carriages_;
};

/// A linear operator in train format. Carriage i has shape
/// (r_i x m_i*n_i x r_{i+1}); the fused mode index is row + m_i * col.
class TTMatrix {
public:
    TTMatrix() = default;
    TTMatrix(TTVector fused, std::vector<Index> row_sizes, std::vector<Index> col_sizes);

    std::size_t order() const { return fused_.order(); }
    const TTVector& fused() const { return fused_; }
    const std::vector<Index>& row_sizes() const { return rows_; }
    const std::vector<Index>& col_sizes() const { return cols_; }
    std::vector<Index> ranks() const { return fused_.ranks(); }
    Index max_rank() const { return fused_.max_rank(); }
    std::size_t element_count() const { return fused_.element_count(); }

private:
    TTVector fused_;
    std::vector<Index> rows_;
    std::vector<Index> cols_;
};

/// Kronecker product term: coefficient times the product of k dense factors.
struct KronTerm {
    double coefficient = 1.0;
    std::vector<Matrix> factors;
};

// Construction ---------------------------------------------------------------

/// Dense vectors and matrices use the Kronecker index convention: the
/// multi-index (i_1, ..., i_k) maps to a linear index with i_k fastest.
TTVector tt_from_dense(const Vector& values, std::span<const Index> mode_sizes,
                       const RoundingPolicy& policy, Index size_cap = kDenseSizeCap);
Vector tt_to_dense(const TTVector& v, Index size_cap = kDenseSizeCap);
Matrix ttm_to_dense(const TTMatrix& a, Index size_cap = kDenseSizeCap);

TTVector tt_rank_one(std::span<const Vector> factors);
TTVector tt_ones(std::span<const Index> mode_sizes);
TTVector tt_zeros(std::span<const Index> mode_sizes);
/// Kronecker basis vector with a single one at the given multi-index.
TTVector tt_basis(std::span<const Index> mode_sizes, std::span<const Index> multi_index);

TTMatrix ttm_from_kron_terms(std::span<const KronTerm> terms);
TTMatrix ttm_identity(std::span<const Index> mode_sizes);
/// Rank-2 representation of A_1 (+) ... (+) A_k.
TTMatrix ttm_kron_sum(std::span<const Matrix> factors);
TTMatrix tt_diag(const TTVector& v);
/// u v^T as an operator; ranks are the pairwise products of the input ranks.
TTMatrix ttm_outer(const TTVector& u, const TTVector& v);
TTMatrix ttm_transpose(const TTMatrix& a);

// Arithmetic -----------------------------------------------------------------

TTVector tt_add(const TTVector& u, const TTVector& v);
TTVector tt_scale(const TTVector& v, double c);
double tt_dot(const TTVector& u, const TTVector& v);
double tt_norm_f(const TTVector& v);

/// Result of a rounding step: the truncated tensor and the achieved relative
/// Frobenius error (which may exceed the tolerance when max_rank binds).
struct Rounded {
    TTVector value;
    double rel_error = 0.0;
};

Rounded tt_round_report(const TTVector& v, const RoundingPolicy& policy);
TTVector tt_round(const TTVector& v, const RoundingPolicy& policy);
TTMatrix ttm_round(const TTMatrix& a, const RoundingPolicy& policy);

/// Exact product A v; ranks multiply.
TTVector ttm_apply(const TTMatrix& a, const TTVector& v);
/// Exact product A^T w, i.e. the row vector w^T A stored as a column.
TTVector ttm_apply_left(const TTVector& w, const TTMatrix& a);
TTMatrix ttm_multiply(const TTMatrix& a, const TTMatrix& b);
TTMatrix ttm_add(const TTMatrix& a, const TTMatrix& b);
TTMatrix ttm_scale(const TTMatrix& a, double c);

/// Rounded products computed by a left-to-right zip-up sweep followed by a
/// regular rounding pass; the full-rank product is never materialized. When
/// given, rel_error receives the relative error of the final rounding pass.
TTVector ttm_apply_rounded(const TTMatrix& a, const TTVector& v, const RoundingPolicy& policy,
                           double* rel_error = nullptr);
TTVector ttm_apply_left_rounded(const TTVector& w, const TTMatrix& a, const RoundingPolicy& policy,
                                double* rel_error = nullptr);
TTMatrix ttm_multiply_rounded(const TTMatrix& a, const TTMatrix& b, const RoundingPolicy& policy,
                              double* rel_error = nullptr);

/// Right-to-left orthogonalization: carriages 2..k get orthonormal rows in
/// their right unfolding; the norm ends up in the first carriage.
TTVector tt_orthogonalize_right(const TTVector& v);

} // namespace mtta
