#include "mtta/tensor_train.hpp"

#include "mtta/errors.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mtta {

// Carriage -------------------------------------------------------------------

Carriage::Carriage(Index left, Index mode, Index right)
    : left_(left), mode_(mode), right_(right),
      values_(static_cast<std::size_t>(left * mode * right), 0.0)
{
    if (left < 1 || mode < 1 || right < 1)
        throw UsageError("carriage dimensions must be positive");
}

Carriage::Carriage(Index left, Index mode, Index right, std::vector<double> values)
    : left_(left), mode_(mode), right_(right), values_(std::move(values))
{
    if (left < 1 || mode < 1 || right < 1)
        throw UsageError("carriage dimensions must be positive");
    if (values_.size() != static_cast<std::size_t>(left * mode * right))
        throw UsageError("carriage value count does not match its shape");
}

Carriage Carriage::from_left_unfolding(const Matrix& m, Index left, Index mode)
{
    Carriage c(left, mode, m.cols());
    if (m.rows() != left * mode)
        throw UsageError("left unfolding has the wrong number of rows");
    c.left_unfolding() = m;
    return c;
}

Carriage Carriage::from_right_unfolding(const Matrix& m, Index mode, Index right)
{
    Carriage c(m.rows(), mode, right);
    if (m.cols() != mode * right)
        throw UsageError("right unfolding has the wrong number of columns");
    c.right_unfolding() = m;
    return c;
}

// TTVector / TTMatrix --------------------------------------------------------

TTVector::TTVector(std::vector<Carriage> carriages) : carriages_(std::move(carriages))
{
    if (carriages_.empty())
        throw UsageError("a tensor train needs at least one carriage");
    if (carriages_.front().left_rank() != 1 || carriages_.back().right_rank() != 1)
        throw UsageError("boundary TT-ranks must be 1");
    for (std::size_t i = 0; i + 1 < carriages_.size(); ++i) {
        if (carriages_[i].right_rank() != carriages_[i + 1].left_rank())
            throw UsageError("adjacent carriages disagree on rank at bond " + std::to_string(i + 1));
    }
}

std::vector<Index> TTVector::mode_sizes() const
{
    std::vector<Index> n;
    n.reserve(carriages_.size());
    for (const auto& c : carriages_)
        n.push_back(c.mode_size());
    return n;
}

std::vector<Index> TTVector::ranks() const
{
    std::vector<Index> r;
    r.reserve(carriages_.size() + 1);
    for (const auto& c : carriages_)
        r.push_back(c.left_rank());
    r.push_back(carriages_.empty() ? 1 : carriages_.back().right_rank());
    return r;
}

Index TTVector::max_rank() const
{
    Index m = 1;
    for (const auto& c : carriages_)
        m = std::max({m, c.left_rank(), c.right_rank()});
    return m;
}

std::size_t TTVector::element_count() const
{
    std::size_t total = 0;
    for (const auto& c : carriages_)
        total += c.size();
    return total;
}

TTMatrix::TTMatrix(TTVector fused, std::vector<Index> row_sizes, std::vector<Index> col_sizes)
    : fused_(std::move(fused)), rows_(std::move(row_sizes)), cols_(std::move(col_sizes))
{
    if (rows_.size() != fused_.order() || cols_.size() != fused_.order())
        throw UsageError("TT-matrix row/column size lists must match the number of carriages");
    for (std::size_t i = 0; i < fused_.order(); ++i) {
        if (fused_.carriage(i).mode_size() != rows_[i] * cols_[i])
            throw UsageError("TT-matrix carriage " + std::to_string(i) + " has the wrong fused mode size");
    }
}

namespace {

void require_same_modes(const std::vector<Index>& a, const std::vector<Index>& b, const char* what)
{
    if (a != b)
        throw UsageError(std::string(what) + ": mode sizes do not match");
}

Index checked_total(std::span<const Index> sizes, Index cap)
{
    double total = 1.0;
    Index exact = 1;
    for (Index n : sizes) {
        total *= static_cast<double>(n);
        exact *= n;
    }
    if (total > static_cast<double>(cap))
        throw NumericalError("dense size " + std::to_string(total) + " exceeds cap " + std::to_string(cap));
    return exact;
}

// Permutes between the Kronecker convention (last index fastest) and the
// carriage-contraction convention (first index fastest).
Vector reverse_index_order(const Vector& in, std::span<const Index> sizes, bool to_first_fastest)
{
    const std::size_t k = sizes.size();
    std::vector<Index> stride_last(k), stride_first(k);
    Index s = 1;
    for (std::size_t j = k; j-- > 0;) {
        stride_last[j] = s;
        s *= sizes[j];
    }
    s = 1;
    for (std::size_t j = 0; j < k; ++j) {
        stride_first[j] = s;
        s *= sizes[j];
    }
    Vector out(in.size());
    std::vector<Index> idx(k, 0);
    for (Index lin = 0; lin < in.size(); ++lin) {
        Index pl = 0, pf = 0;
        for (std::size_t j = 0; j < k; ++j) {
            pl += idx[j] * stride_last[j];
            pf += idx[j] * stride_first[j];
        }
        if (to_first_fastest)
            out[pf] = in[pl];
        else
            out[pl] = in[pf];
        for (std::size_t j = k; j-- > 0;) {
            if (++idx[j] < sizes[j])
                break;
            idx[j] = 0;
        }
    }
    return out;
}

// Contracts all carriages; the result is indexed with the first mode fastest.
Vector contract_first_fastest(const TTVector& v)
{
    Matrix acc = Matrix::Ones(1, 1);
    for (const auto& c : v.carriages()) {
        Matrix next = acc * c.right_unfolding();
        // (P x n*r') reshaped to (P*n x r').
        acc = Eigen::Map<Matrix>(next.data(), acc.rows() * c.mode_size(), c.right_rank());
    }
    return Eigen::Map<Vector>(acc.data(), acc.size());
}

Index truncation_rank(const Vector& sigma, double delta, Index max_rank, double& discarded_sq)
{
    const Index n = sigma.size();
    Index rank = n;
    double tail = 0.0;
    while (rank > 1) {
        const double s = sigma[rank - 1];
        if (tail + s * s > delta * delta)
            break;
        tail += s * s;
        --rank;
    }
    if (rank > max_rank) {
        for (Index j = max_rank; j < rank; ++j)
            tail += sigma[j] * sigma[j];
        rank = max_rank;
    }
    discarded_sq += tail;
    return std::max<Index>(rank, 1);
}

Eigen::BDCSVD<Matrix> thin_svd(const Matrix& m)
{
    return Eigen::BDCSVD<Matrix>(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
}

// Left singular vectors and values only. Wide matrices are first reduced to
// a square triangular factor, which is far cheaper than a full bidiagonal SVD.
struct LeftSvd {
    Matrix u;
    Vector sigma;
};

LeftSvd left_svd(const Matrix& g)
{
    if (g.cols() > g.rows()) {
        const Eigen::HouseholderQR<Matrix> qr(g.transpose());
        const Matrix r = qr.matrixQR().topRows(g.rows()).triangularView<Eigen::Upper>();
        Eigen::BDCSVD<Matrix> svd(r.transpose(), Eigen::ComputeThinU);
        return {svd.matrixU(), svd.singularValues()};
    }
    Eigen::BDCSVD<Matrix> svd(g, Eigen::ComputeThinU);
    return {svd.matrixU(), svd.singularValues()};
}

// Exact core of the operator product A*B at one site. A has shape (m x l),
// B has shape (l x n); the product rank index is aA + rA * aB.
Carriage product_core(const Carriage& a, Index m, Index l, const Carriage& b, Index n)
{
    const Index ra = a.left_rank(), ra2 = a.right_rank();
    const Index rb = b.left_rank(), rb2 = b.right_rank();
    Carriage c(ra * rb, m * n, ra2 * rb2);
    for (Index bb = 0; bb < rb2; ++bb)
        for (Index ba = 0; ba < ra2; ++ba)
            for (Index col = 0; col < n; ++col)
                for (Index lx = 0; lx < l; ++lx)
                    for (Index ab = 0; ab < rb; ++ab) {
                        const double bv = b(ab, lx + l * col, bb);
                        if (bv == 0.0)
                            continue;
                        for (Index row = 0; row < m; ++row)
                            for (Index aa = 0; aa < ra; ++aa)
                                c(aa + ra * ab, row + m * col, ba + ra2 * bb) += a(aa, row + m * lx, ba) * bv;
                    }
    return c;
}

TTVector exact_product(const TTVector& a, std::span<const Index> m, std::span<const Index> l,
                       const TTVector& b, std::span<const Index> n)
{
    std::vector<Carriage> cs;
    cs.reserve(a.order());
    for (std::size_t i = 0; i < a.order(); ++i)
        cs.push_back(product_core(a.carriage(i), m[i], l[i], b.carriage(i), n[i]));
    return TTVector(std::move(cs));
}

// Zip-up product: sweeps left to right carrying the non-orthogonal remainder
// and truncates each bond immediately, so the rank-product carriages are never
// stored. Both operands are right-orthogonalized first so the discarded
// singular values approximate the true truncation error.
TTVector zip_product(const TTVector& a_in, std::span<const Index> m, std::span<const Index> l,
                     const TTVector& b_in, std::span<const Index> n, const RoundingPolicy& policy)
{
    const TTVector a = tt_orthogonalize_right(a_in);
    const TTVector b = tt_orthogonalize_right(b_in);
    const std::size_t k = a.order();
    const double zip_tol = policy.rel_tolerance / (4.0 * std::sqrt(std::max<double>(1.0, double(k) - 1.0)));
    const Index zip_cap = policy.max_rank == std::numeric_limits<Index>::max()
                              ? policy.max_rank
                              : 2 * policy.max_rank;

    std::vector<Carriage> out;
    out.reserve(k);
    Matrix carry = Matrix::Ones(1, 1); // s x (rA*rB), column aA + rA*aB
    for (std::size_t i = 0; i < k; ++i) {
        const Carriage& ca = a.carriage(i);
        const Carriage& cb = b.carriage(i);
        const Index ra = ca.left_rank(), ra2 = ca.right_rank();
        const Index rb = cb.left_rank(), rb2 = cb.right_rank();
        const Index mi = m[i], li = l[i], ni = n[i];
        const Index s = carry.rows();

        // T1[aB] = carry(:, aA, aB) * A(aA, (row, lx, bA)) : s x (m*l*rA')
        std::vector<Matrix> t1(static_cast<std::size_t>(rb));
        for (Index ab = 0; ab < rb; ++ab)
            t1[ab] = carry.middleCols(ra * ab, ra) * ca.right_unfolding();

        Matrix g(s * mi * ni, ra2 * rb2);
        const Eigen::Map<const Matrix> b_left(cb.values().data(), rb * li, ni * rb2);
        Matrix x(s * mi, rb * li);
        for (Index ba = 0; ba < ra2; ++ba) {
            for (Index lx = 0; lx < li; ++lx)
                for (Index ab = 0; ab < rb; ++ab)
                    for (Index row = 0; row < mi; ++row)
                        x.block(s * row, ab + rb * lx, s, 1) =
                            t1[ab].col(row + mi * lx + mi * li * ba);
            const Matrix gba = x * b_left; // (s*m) x (n*rB')
            for (Index bb = 0; bb < rb2; ++bb)
                for (Index col = 0; col < ni; ++col)
                    g.block(s * mi * col, ba + ra2 * bb, s * mi, 1) = gba.col(col + ni * bb);
        }

        if (i + 1 == k) {
            out.push_back(Carriage::from_left_unfolding(g, s, mi * ni));
            break;
        }
        const LeftSvd svd = left_svd(g);
        const Vector& sigma = svd.sigma;
        double discarded = 0.0;
        const double delta = zip_tol * sigma.norm();
        Index rank = sigma.size() == 0 ? 1 : truncation_rank(sigma, delta, zip_cap, discarded);
        if (sigma.size() == 0 || sigma[0] == 0.0)
            rank = 1;
        Matrix u = svd.u.leftCols(rank);
        carry = u.transpose() * g;
        out.push_back(Carriage::from_left_unfolding(u, s, mi * ni));
    }
    return TTVector(std::move(out));
}

std::vector<Index> ones_like(std::size_t k)
{
    return std::vector<Index>(k, 1);
}

} // namespace

// Construction ---------------------------------------------------------------

TTVector tt_from_dense(const Vector& values, std::span<const Index> mode_sizes,
                       const RoundingPolicy& policy, Index size_cap)
{
    if (mode_sizes.empty())
        throw UsageError("tt_from_dense: at least one mode is required");
    const Index total = checked_total(mode_sizes, size_cap);
    if (values.size() != total)
        throw UsageError("tt_from_dense: value count does not match mode sizes");

    const std::size_t k = mode_sizes.size();
    Vector work = reverse_index_order(values, mode_sizes, true);
    const double norm = work.norm();
    const double delta = k > 1 ? policy.rel_tolerance * norm / std::sqrt(double(k - 1)) : 0.0;

    std::vector<Carriage> cs;
    cs.reserve(k);
    Matrix rest = Eigen::Map<Matrix>(work.data(), mode_sizes[0], total / mode_sizes[0]);
    Index left = 1;
    for (std::size_t i = 0; i + 1 < k; ++i) {
        const Index ni = mode_sizes[i];
        // rest is (left*ni) x remaining
        const auto svd = thin_svd(rest);
        const Vector& sigma = svd.singularValues();
        double discarded = 0.0;
        Index rank = truncation_rank(sigma, delta, policy.max_rank, discarded);
        if (norm == 0.0)
            rank = 1;
        cs.push_back(Carriage::from_left_unfolding(svd.matrixU().leftCols(rank), left, ni));
        Matrix sv = sigma.head(rank).asDiagonal() * svd.matrixV().leftCols(rank).transpose();
        const Index remaining = sv.cols() / mode_sizes[i + 1];
        rest = Eigen::Map<Matrix>(sv.data(), rank * mode_sizes[i + 1], remaining);
        left = rank;
    }
    cs.push_back(Carriage::from_left_unfolding(rest, left, mode_sizes[k - 1]));
    return TTVector(std::move(cs));
}

Vector tt_to_dense(const TTVector& v, Index size_cap)
{
    const auto sizes = v.mode_sizes();
    checked_total(sizes, size_cap);
    return reverse_index_order(contract_first_fastest(v), sizes, false);
}

Matrix ttm_to_dense(const TTMatrix& a, Index size_cap)
{
    const auto& rows = a.row_sizes();
    const auto& cols = a.col_sizes();
    const std::size_t k = a.order();
    Index nr = 1, nc = 1;
    double total = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
        nr *= rows[i];
        nc *= cols[i];
        total *= double(rows[i]) * double(cols[i]);
    }
    if (total > double(size_cap))
        throw NumericalError("dense operator size exceeds cap");

    const Vector fused = contract_first_fastest(a.fused());
    Matrix out(nr, nc);
    std::vector<Index> ri(k, 0), ci(k, 0);
    // Iterate over the fused first-fastest index and scatter.
    for (Index lin = 0; lin < fused.size(); ++lin) {
        Index rem = lin, row = 0, col = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const Index f = rem % (rows[j] * cols[j]);
            rem /= rows[j] * cols[j];
            ri[j] = f % rows[j];
            ci[j] = f / rows[j];
        }
        for (std::size_t j = 0; j < k; ++j) {
            row = row * rows[j] + ri[j];
            col = col * cols[j] + ci[j];
        }
        out(row, col) = fused[lin];
    }
    return out;
}

TTVector tt_rank_one(std::span<const Vector> factors)
{
    if (factors.empty())
        throw UsageError("tt_rank_one: empty factor list");
    std::vector<Carriage> cs;
    cs.reserve(factors.size());
    for (const auto& f : factors) {
        if (f.size() < 1)
            throw UsageError("tt_rank_one: empty factor");
        cs.emplace_back(1, f.size(), 1, std::vector<double>(f.data(), f.data() + f.size()));
    }
    return TTVector(std::move(cs));
}

TTVector tt_ones(std::span<const Index> mode_sizes)
{
    std::vector<Vector> f;
    for (Index n : mode_sizes)
        f.push_back(Vector::Ones(n));
    return tt_rank_one(f);
}

TTVector tt_zeros(std::span<const Index> mode_sizes)
{
    std::vector<Vector> f;
    for (Index n : mode_sizes)
        f.push_back(Vector::Zero(n));
    return tt_rank_one(f);
}

TTVector tt_basis(std::span<const Index> mode_sizes, std::span<const Index> multi_index)
{
    if (mode_sizes.size() != multi_index.size())
        throw UsageError("tt_basis: index length does not match the number of modes");
    std::vector<Vector> f;
    for (std::size_t i = 0; i < mode_sizes.size(); ++i) {
        if (multi_index[i] < 0 || multi_index[i] >= mode_sizes[i])
            throw UsageError("tt_basis: index out of range");
        Vector e = Vector::Zero(mode_sizes[i]);
        e[multi_index[i]] = 1.0;
        f.push_back(std::move(e));
    }
    return tt_rank_one(f);
}

TTMatrix ttm_from_kron_terms(std::span<const KronTerm> terms)
{
    if (terms.empty())
        throw UsageError("ttm_from_kron_terms: no terms");
    const std::size_t k = terms.front().factors.size();
    if (k == 0)
        throw UsageError("ttm_from_kron_terms: empty factor list");
    std::vector<Index> rows(k), cols(k);
    for (std::size_t i = 0; i < k; ++i) {
        rows[i] = terms.front().factors[i].rows();
        cols[i] = terms.front().factors[i].cols();
    }
    for (const auto& t : terms) {
        if (t.factors.size() != k)
            throw UsageError("ttm_from_kron_terms: terms have different factor counts");
        for (std::size_t i = 0; i < k; ++i)
            if (t.factors[i].rows() != rows[i] || t.factors[i].cols() != cols[i])
                throw UsageError("ttm_from_kron_terms: factor shapes differ between terms");
    }

    const Index nt = static_cast<Index>(terms.size());
    std::vector<Carriage> cs;
    cs.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const Index left = (i == 0) ? 1 : nt;
        const Index right = (i + 1 == k) ? 1 : nt;
        const Index mn = rows[i] * cols[i];
        Carriage c(left, mn, right);
        for (Index t = 0; t < nt; ++t) {
            const Matrix& f = terms[t].factors[i];
            const double scale = (i == 0) ? terms[t].coefficient : 1.0;
            const Index a = (left == 1) ? 0 : t;
            const Index b = (right == 1) ? 0 : t;
            for (Index col = 0; col < cols[i]; ++col)
                for (Index row = 0; row < rows[i]; ++row)
                    c(a, row + rows[i] * col, b) += scale * f(row, col);
        }
        cs.push_back(std::move(c));
    }
    return TTMatrix(TTVector(std::move(cs)), rows, cols);
}

TTMatrix ttm_identity(std::span<const Index> mode_sizes)
{
    KronTerm t;
    for (Index n : mode_sizes)
        t.factors.push_back(Matrix::Identity(n, n));
    return ttm_from_kron_terms(std::span<const KronTerm>(&t, 1));
}

TTMatrix ttm_kron_sum(std::span<const Matrix> factors)
{
    if (factors.empty())
        throw UsageError("ttm_kron_sum: empty factor list");
    const std::size_t k = factors.size();
    std::vector<Index> sizes(k);
    for (std::size_t i = 0; i < k; ++i) {
        if (factors[i].rows() != factors[i].cols())
            throw UsageError("ttm_kron_sum: factors must be square");
        sizes[i] = factors[i].rows();
    }
    if (k == 1)
        return ttm_from_kron_terms(std::vector<KronTerm>{{1.0, {factors[0]}}});

    auto put = [](Carriage& c, Index a, Index b, const Matrix& f) {
        const Index n = f.rows();
        for (Index col = 0; col < n; ++col)
            for (Index row = 0; row < n; ++row)
                c(a, row + n * col, b) = f(row, col);
    };
    std::vector<Carriage> cs;
    for (std::size_t i = 0; i < k; ++i) {
        const Index n = sizes[i];
        const Matrix eye = Matrix::Identity(n, n);
        if (i == 0) {
            Carriage c(1, n * n, 2);
            put(c, 0, 0, factors[i]);
            put(c, 0, 1, eye);
            cs.push_back(std::move(c));
        } else if (i + 1 == k) {
            Carriage c(2, n * n, 1);
            put(c, 0, 0, eye);
            put(c, 1, 0, factors[i]);
            cs.push_back(std::move(c));
        } else {
            Carriage c(2, n * n, 2);
            put(c, 0, 0, eye);
            put(c, 1, 0, factors[i]);
            put(c, 1, 1, eye);
            cs.push_back(std::move(c));
        }
    }
    return TTMatrix(TTVector(std::move(cs)), sizes, sizes);
}

TTMatrix tt_diag(const TTVector& v)
{
    std::vector<Carriage> cs;
    cs.reserve(v.order());
    for (const auto& c : v.carriages()) {
        const Index n = c.mode_size();
        Carriage d(c.left_rank(), n * n, c.right_rank());
        for (Index b = 0; b < c.right_rank(); ++b)
            for (Index i = 0; i < n; ++i)
                for (Index a = 0; a < c.left_rank(); ++a)
                    d(a, i + n * i, b) = c(a, i, b);
        cs.push_back(std::move(d));
    }
    const auto n = v.mode_sizes();
    return TTMatrix(TTVector(std::move(cs)), n, n);
}

TTMatrix ttm_outer(const TTVector& u, const TTVector& v)
{
    if (u.order() != v.order())
        throw UsageError("ttm_outer: order mismatch");
    std::vector<Carriage> cs;
    cs.reserve(u.order());
    for (std::size_t i = 0; i < u.order(); ++i) {
        const Carriage& cu = u.carriage(i);
        const Carriage& cv = v.carriage(i);
        const Index m = cu.mode_size(), n = cv.mode_size();
        const Index ru = cu.left_rank(), rv = cv.left_rank();
        const Index ru2 = cu.right_rank(), rv2 = cv.right_rank();
        Carriage c(ru * rv, m * n, ru2 * rv2);
        for (Index bv = 0; bv < rv2; ++bv)
            for (Index bu = 0; bu < ru2; ++bu)
                for (Index col = 0; col < n; ++col)
                    for (Index row = 0; row < m; ++row)
                        for (Index av = 0; av < rv; ++av)
                            for (Index au = 0; au < ru; ++au)
                                c(au + ru * av, row + m * col, bu + ru2 * bv) = cu(au, row, bu) * cv(av, col, bv);
        cs.push_back(std::move(c));
    }
    return TTMatrix(TTVector(std::move(cs)), u.mode_sizes(), v.mode_sizes());
}

TTMatrix ttm_transpose(const TTMatrix& a)
{
    std::vector<Carriage> cs;
    cs.reserve(a.order());
    for (std::size_t i = 0; i < a.order(); ++i) {
        const Carriage& c = a.fused().carriage(i);
        const Index m = a.row_sizes()[i], n = a.col_sizes()[i];
        Carriage t(c.left_rank(), m * n, c.right_rank());
        for (Index b = 0; b < c.right_rank(); ++b)
            for (Index col = 0; col < n; ++col)
                for (Index row = 0; row < m; ++row)
                    for (Index x = 0; x < c.left_rank(); ++x)
                        t(x, col + n * row, b) = c(x, row + m * col, b);
        cs.push_back(std::move(t));
    }
    return TTMatrix(TTVector(std::move(cs)), a.col_sizes(), a.row_sizes());
}

// Arithmetic -----------------------------------------------------------------

TTVector tt_add(const TTVector& u, const TTVector& v)
{
    require_same_modes(u.mode_sizes(), v.mode_sizes(), "tt_add");
    const std::size_t k = u.order();
    if (k == 1) {
        std::vector<double> vals(u.carriage(0).values().begin(), u.carriage(0).values().end());
        const auto vv = v.carriage(0).values();
        for (std::size_t j = 0; j < vals.size(); ++j)
            vals[j] += vv[j];
        return TTVector({Carriage(1, u.carriage(0).mode_size(), 1, std::move(vals))});
    }
    std::vector<Carriage> cs;
    cs.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const Carriage& a = u.carriage(i);
        const Carriage& b = v.carriage(i);
        const Index n = a.mode_size();
        const bool first = (i == 0), last = (i + 1 == k);
        const Index left = first ? 1 : a.left_rank() + b.left_rank();
        const Index right = last ? 1 : a.right_rank() + b.right_rank();
        Carriage c(left, n, right);
        const Index a_off_l = 0, b_off_l = first ? 0 : a.left_rank();
        const Index a_off_r = 0, b_off_r = last ? 0 : a.right_rank();
        for (Index r = 0; r < a.right_rank(); ++r)
            for (Index j = 0; j < n; ++j)
                for (Index l = 0; l < a.left_rank(); ++l)
                    c(a_off_l + l, j, a_off_r + r) += a(l, j, r);
        for (Index r = 0; r < b.right_rank(); ++r)
            for (Index j = 0; j < n; ++j)
                for (Index l = 0; l < b.left_rank(); ++l)
                    c(b_off_l + l, j, b_off_r + r) += b(l, j, r);
        cs.push_back(std::move(c));
    }
    return TTVector(std::move(cs));
}

TTVector tt_scale(const TTVector& v, double c)
{
    std::vector<Carriage> cs(v.carriages().begin(), v.carriages().end());
    for (double& x : cs.front().values())
        x *= c;
    return TTVector(std::move(cs));
}

double tt_dot(const TTVector& u, const TTVector& v)
{
    require_same_modes(u.mode_sizes(), v.mode_sizes(), "tt_dot");
    Matrix env = Matrix::Ones(1, 1); // ru x rv
    for (std::size_t i = 0; i < u.order(); ++i) {
        const Carriage& a = u.carriage(i);
        const Carriage& b = v.carriage(i);
        // z(av, (j, bu)) = sum_au env(au, av) a(au, j, bu)
        Matrix z = env.transpose() * a.right_unfolding();
        Eigen::Map<const Matrix> z_left(z.data(), b.left_rank() * b.mode_size(), a.right_rank());
        env = z_left.transpose() * b.left_unfolding();
    }
    return env(0, 0);
}

double tt_norm_f(const TTVector& v)
{
    const TTVector o = tt_orthogonalize_right(v);
    return o.carriage(0).left_unfolding().norm();
}

TTVector tt_orthogonalize_right(const TTVector& v)
{
    std::vector<Carriage> cs(v.carriages().begin(), v.carriages().end());
    for (std::size_t i = cs.size(); i-- > 1;) {
        Carriage& c = cs[i];
        const Matrix ct = c.right_unfolding().transpose(); // (n r') x r
        Eigen::HouseholderQR<Matrix> qr(ct);
        const Index new_r = std::min(ct.rows(), ct.cols());
        const Matrix q = qr.householderQ() * Matrix::Identity(ct.rows(), new_r);
        const Matrix r = qr.matrixQR().topRows(new_r).triangularView<Eigen::Upper>();
        c = Carriage::from_right_unfolding(q.transpose(), c.mode_size(), c.right_rank());
        Carriage& prev = cs[i - 1];
        const Matrix merged = prev.left_unfolding() * r.transpose();
        prev = Carriage::from_left_unfolding(merged, prev.left_rank(), prev.mode_size());
    }
    return TTVector(std::move(cs));
}

Rounded tt_round_report(const TTVector& v, const RoundingPolicy& policy)
{
    if (policy.rel_tolerance < 0.0)
        throw UsageError("rounding tolerance must be nonnegative");
    if (policy.max_rank < 1)
        throw UsageError("rounding max_rank must be positive");
    const std::size_t k = v.order();
    if (k == 1)
        return {v, 0.0};

    TTVector o = tt_orthogonalize_right(v);
    const double norm = o.carriage(0).left_unfolding().norm();
    if (norm == 0.0)
        return {tt_zeros(v.mode_sizes()), 0.0};

    std::vector<Carriage> cs(o.carriages().begin(), o.carriages().end());
    const double delta = policy.rel_tolerance * norm / std::sqrt(double(k - 1));
    double discarded = 0.0;
    for (std::size_t i = 0; i + 1 < k; ++i) {
        const auto svd = thin_svd(cs[i].left_unfolding());
        const Vector& sigma = svd.singularValues();
        const Index rank = truncation_rank(sigma, delta, policy.max_rank, discarded);
        const Index left = cs[i].left_rank(), n = cs[i].mode_size();
        cs[i] = Carriage::from_left_unfolding(svd.matrixU().leftCols(rank), left, n);
        const Matrix sv = sigma.head(rank).asDiagonal() * svd.matrixV().leftCols(rank).transpose();
        const Matrix next = sv * cs[i + 1].right_unfolding();
        cs[i + 1] = Carriage::from_right_unfolding(next, cs[i + 1].mode_size(), cs[i + 1].right_rank());
    }
    return {TTVector(std::move(cs)), std::sqrt(discarded) / norm};
}

TTVector tt_round(const TTVector& v, const RoundingPolicy& policy)
{
    return tt_round_report(v, policy).value;
}

TTMatrix ttm_round(const TTMatrix& a, const RoundingPolicy& policy)
{
    return TTMatrix(tt_round(a.fused(), policy), a.row_sizes(), a.col_sizes());
}

TTVector ttm_apply(const TTMatrix& a, const TTVector& v)
{
    require_same_modes(a.col_sizes(), v.mode_sizes(), "ttm_apply");
    const auto ones = ones_like(v.order());
    return exact_product(a.fused(), a.row_sizes(), a.col_sizes(), v, ones);
}

TTVector ttm_apply_left(const TTVector& w, const TTMatrix& a)
{
    return ttm_apply(ttm_transpose(a), w);
}

TTMatrix ttm_multiply(const TTMatrix& a, const TTMatrix& b)
{
    require_same_modes(a.col_sizes(), b.row_sizes(), "ttm_multiply");
    return TTMatrix(exact_product(a.fused(), a.row_sizes(), a.col_sizes(), b.fused(), b.col_sizes()),
                    a.row_sizes(), b.col_sizes());
}

TTMatrix ttm_add(const TTMatrix& a, const TTMatrix& b)
{
    if (a.row_sizes() != b.row_sizes() || a.col_sizes() != b.col_sizes())
        throw UsageError("ttm_add: operator shapes do not match");
    return TTMatrix(tt_add(a.fused(), b.fused()), a.row_sizes(), a.col_sizes());
}

TTMatrix ttm_scale(const TTMatrix& a, double c)
{
    return TTMatrix(tt_scale(a.fused(), c), a.row_sizes(), a.col_sizes());
}

namespace {

TTVector finish_rounding(const TTVector& v, const RoundingPolicy& policy, double* rel_error)
{
    Rounded r = tt_round_report(v, policy);
    if (rel_error)
        *rel_error = r.rel_error;
    return std::move(r.value);
}

} // namespace

TTVector ttm_apply_rounded(const TTMatrix& a, const TTVector& v, const RoundingPolicy& policy, double* rel_error)
{
    require_same_modes(a.col_sizes(), v.mode_sizes(), "ttm_apply");
    const auto ones = ones_like(v.order());
    return finish_rounding(zip_product(a.fused(), a.row_sizes(), a.col_sizes(), v, ones, policy), policy,
                           rel_error);
}

TTVector ttm_apply_left_rounded(const TTVector& w, const TTMatrix& a, const RoundingPolicy& policy,
                                double* rel_error)
{
    return ttm_apply_rounded(ttm_transpose(a), w, policy, rel_error);
}

TTMatrix ttm_multiply_rounded(const TTMatrix& a, const TTMatrix& b, const RoundingPolicy& policy,
                              double* rel_error)
{
    require_same_modes(a.col_sizes(), b.row_sizes(), "ttm_multiply");
    TTVector fused = zip_product(a.fused(), a.row_sizes(), a.col_sizes(), b.fused(), b.col_sizes(), policy);
    return TTMatrix(finish_rounding(fused, policy, rel_error), a.row_sizes(), b.col_sizes());
}

} // namespace mtta
