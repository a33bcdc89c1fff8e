#include "mtta/kron_ops.hpp"

#include "mtta/errors.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

namespace mtta {

namespace {

constexpr std::array<double, 4> kPade3{120.0, 60.0, 12.0, 1.0};
constexpr std::array<double, 6> kPade5{30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
constexpr std::array<double, 8> kPade7{17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0};
constexpr std::array<double, 10> kPade9{17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
                                        2162160.0, 110880.0, 3960.0, 90.0, 1.0};
constexpr std::array<double, 14> kPade13{64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                         1187353796428800.0, 129060195264000.0, 10559470521600.0,
                                         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
                                         960960.0, 16380.0, 182.0, 1.0};

// Largest 1-norms for which each Pade degree meets unit roundoff.
constexpr double kTheta3 = 1.495585217958292e-2;
constexpr double kTheta5 = 2.539398330063230e-1;
constexpr double kTheta7 = 9.504178996162932e-1;
constexpr double kTheta9 = 2.097847961257068e0;
constexpr double kTheta13 = 5.371920351148152e0;

template <std::size_t N>
Matrix pade_low(const Matrix& a, const std::array<double, N>& b)
{
    const Index n = a.rows();
    const Matrix eye = Matrix::Identity(n, n);
    const Matrix a2 = a * a;
    Matrix u_inner = b[1] * eye;
    Matrix v = b[0] * eye;
    Matrix power = eye;
    for (std::size_t j = 2; j < N; j += 2) {
        power = power * a2;
        v += b[j] * power;
        if (j + 1 < N)
            u_inner += b[j + 1] * power;
    }
    const Matrix u = a * u_inner;
    return (v - u).partialPivLu().solve(v + u);
}

Matrix pade13(const Matrix& a)
{
    const auto& b = kPade13;
    const Index n = a.rows();
    const Matrix eye = Matrix::Identity(n, n);
    const Matrix a2 = a * a;
    const Matrix a4 = a2 * a2;
    const Matrix a6 = a4 * a2;
    const Matrix u = a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * eye);
    const Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * eye;
    return (v - u).partialPivLu().solve(v + u);
}

void log_spaced_and_uniform(double r_cond, Index samples, std::vector<double>& xs)
{
    xs.clear();
    xs.push_back(1.0);
    if (r_cond <= 1.0)
        return;
    const double lr = std::log(r_cond);
    for (Index i = 1; i <= samples; ++i) {
        const double t = double(i) / double(samples);
        xs.push_back(std::exp(t * lr));
        xs.push_back(1.0 + t * (r_cond - 1.0));
    }
}

} // namespace

Matrix expm_dense(const Matrix& a, Index dimension_cap)
{
    if (a.rows() != a.cols())
        throw UsageError("expm_dense: matrix must be square");
    if (a.rows() > dimension_cap)
        throw UsageError("expm_dense: dimension " + std::to_string(a.rows()) + " exceeds cap " +
                         std::to_string(dimension_cap));
    if (!a.allFinite())
        throw NumericalError("expm_dense: non-finite entries");
    if (a.rows() == 0)
        return a;

    const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
    if (norm1 <= kTheta3)
        return pade_low(a, kPade3);
    if (norm1 <= kTheta5)
        return pade_low(a, kPade5);
    if (norm1 <= kTheta7)
        return pade_low(a, kPade7);
    if (norm1 <= kTheta9)
        return pade_low(a, kPade9);

    const int s = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / kTheta13))));
    Matrix x = pade13(a / std::ldexp(1.0, s));
    for (int i = 0; i < s; ++i)
        x = x * x;
    return x;
}

// Exponential sums ------------------------------------------------------------

double ExponentialSum::evaluate(double x) const
{
    double s = 0.0;
    for (std::size_t j = 0; j < alphas.size(); ++j)
        s += alphas[j] * std::exp(-betas[j] * x);
    return s;
}

double exp_sum_max_error(const ExponentialSum& es, Index samples)
{
    std::vector<double> xs;
    log_spaced_and_uniform(es.r_cond, samples, xs);
    double worst = 0.0;
    for (double x : xs)
        worst = std::max(worst, std::abs(1.0 / x - es.evaluate(x)));
    return worst;
}

ExponentialSum exp_sum_sinc(double h, int j_lo, int j_hi, double r_cond)
{
    if (!(h > 0.0) || j_hi < j_lo)
        throw UsageError("exp_sum_sinc: need h > 0 and a nonempty node range");
    if (!(r_cond >= 1.0) || !std::isfinite(r_cond))
        throw UsageError("exp_sum_sinc: interval end must be finite and >= 1");
    ExponentialSum es;
    es.r_cond = r_cond;
    for (int j = j_lo; j <= j_hi; ++j) {
        const double e = std::exp(j * h);
        es.alphas.push_back(h * e);
        es.betas.push_back(e);
    }
    es.accuracy = exp_sum_max_error(es);
    return es;
}

ExponentialSum exp_sum_coeffs(double r_cond, double eps)
{
    if (!(r_cond >= 1.0) || !std::isfinite(r_cond))
        throw UsageError("exp_sum_coeffs: interval end must be finite and >= 1");
    if (!(eps > 0.0) || !(eps < 1.0))
        throw UsageError("exp_sum_coeffs: eps must lie in (0, 1)");
    if (eps < kExpSumFloor) {
        std::ostringstream msg;
        msg << "exp_sum_coeffs: eps " << eps << " is below the attainable floor; best achievable is "
            << kExpSumFloor;
        throw NumericalError(msg.str());
    }

    // Discretization error ~ exp(-2 pi d / h) on the strip |Im t| < d < pi/2;
    // the node range cuts both tails of the integrand below eps/3 for x >= 1.
    const double d = 1.45;
    double h = 2.0 * std::numbers::pi * d / std::log(6.0 / (eps * std::cos(d)));
    const double t_lo = std::log(eps / 3.0);
    const double t_hi = std::log(std::log(3.0 / eps));

    std::vector<double> xs;
    // Never verify on a degenerate interval: the sum is also applied to
    // non-normal factors whose spectrum is a single point.
    log_spaced_and_uniform(std::max(r_cond, 2.0), 4000, xs);
    double best = std::numeric_limits<double>::infinity();
    for (int attempt = 0; attempt < 12; ++attempt, h *= 0.85) {
        const int j_lo = static_cast<int>(std::floor(t_lo / h));
        const int j_hi = static_cast<int>(std::ceil(t_hi / h));
        ExponentialSum es;
        es.r_cond = r_cond;
        for (int j = j_lo; j <= j_hi; ++j) {
            const double e = std::exp(j * h);
            es.alphas.push_back(h * e);
            es.betas.push_back(e);
        }
        double worst = 0.0;
        for (double x : xs)
            worst = std::max(worst, std::abs(1.0 / x - es.evaluate(x)));
        best = std::min(best, worst);
        if (worst <= 0.5 * eps) {
            es.accuracy = worst;
            return es;
        }
    }
    std::ostringstream msg;
    msg << "exp_sum_coeffs: could not reach eps " << eps << "; best achievable is " << best;
    throw NumericalError(msg.str());
}

// Kronecker sums ---------------------------------------------------------------

std::vector<Index> KronSumOperator::sizes() const
{
    std::vector<Index> n;
    for (const auto& f : factors)
        n.push_back(f.rows());
    return n;
}

TTMatrix KronSumOperator::to_ttm() const
{
    return ttm_kron_sum(factors);
}

SpectrumInterval spectrum_interval(const KronSumOperator& op)
{
    if (op.factors.empty())
        throw UsageError("spectrum_interval: no factors");
    // Gershgorin discs of S^{-1} F S for S = diag(s^i); every scaling gives a
    // valid enclosure, so their intersection does too. Small s tightens the
    // bound for upper triangular factors, large s for lower triangular ones.
    static constexpr std::array<double, 11> kScales{1.0, 0.5, 0.1, 1e-2, 1e-4, 1e-8, 2.0, 10.0, 1e2, 1e4, 1e8};
    SpectrumInterval total;
    for (const auto& f : op.factors) {
        if (f.rows() != f.cols() || f.rows() == 0)
            throw UsageError("spectrum_interval: factors must be square and nonempty");
        const Index n = f.rows();
        double lo = -std::numeric_limits<double>::infinity(), hi = -lo;
        for (double s : kScales) {
            double row_lo = std::numeric_limits<double>::infinity(), row_hi = -row_lo;
            double col_lo = row_lo, col_hi = -row_lo;
            for (Index i = 0; i < n; ++i) {
                double rr = 0.0, cr = 0.0;
                for (Index j = 0; j < n; ++j) {
                    if (j == i)
                        continue;
                    rr += std::abs(f(i, j)) * std::pow(s, double(j - i));
                    cr += std::abs(f(j, i)) * std::pow(s, double(i - j));
                }
                row_lo = std::min(row_lo, f(i, i) - rr);
                row_hi = std::max(row_hi, f(i, i) + rr);
                col_lo = std::min(col_lo, f(i, i) - cr);
                col_hi = std::max(col_hi, f(i, i) + cr);
            }
            lo = std::max({lo, row_lo, col_lo});
            hi = std::min({hi, row_hi, col_hi});
        }
        total.lower += lo;
        total.upper += hi;
    }
    if (!(total.lower > 0.0)) {
        std::ostringstream msg;
        msg << "spectrum enclosure [" << total.lower << ", " << total.upper
            << "] is not strictly positive; the splitting shift is too small";
        throw NumericalError(msg.str());
    }
    return total;
}

std::vector<KronTerm> kron_sum_inverse_terms(const KronSumOperator& op, const ExponentialSum& es, double scale)
{
    if (op.factors.empty())
        throw UsageError("kron_sum_inverse: no factors");
    if (!(scale > 0.0))
        throw UsageError("kron_sum_inverse: scale must be positive");
    const SpectrumInterval s = spectrum_interval(op);
    const double slack = 1e-12;
    if (scale * s.lower < 1.0 - slack || scale * s.upper > es.r_cond * (1.0 + slack)) {
        std::ostringstream msg;
        msg << "kron_sum_inverse: scaled spectrum [" << scale * s.lower << ", " << scale * s.upper
            << "] is not inside [1, " << es.r_cond << "]";
        throw NumericalError(msg.str());
    }
    std::vector<KronTerm> terms;
    terms.reserve(es.terms());
    for (std::size_t j = 0; j < es.terms(); ++j) {
        KronTerm t;
        t.coefficient = es.alphas[j] * scale;
        for (const auto& f : op.factors)
            t.factors.push_back(expm_dense(-es.betas[j] * scale * f));
        terms.push_back(std::move(t));
    }
    return terms;
}

TTVector kron_sum_inverse_apply(const KronSumOperator& op, const ExponentialSum& es, double scale,
                                const TTVector& v, const RoundingPolicy& policy)
{
    if (v.mode_sizes() != op.sizes())
        throw UsageError("kron_sum_inverse_apply: vector modes do not match the factors");
    const auto terms = kron_sum_inverse_terms(op, es, scale);
    TTVector acc;
    for (const auto& t : terms) {
        std::vector<Carriage> cs(v.carriages().begin(), v.carriages().end());
        for (std::size_t i = 0; i < cs.size(); ++i) {
            const Carriage& c = v.carriage(i);
            // Mode product: new(a, :, b) = F * c(a, :, b).
            Carriage out(c.left_rank(), c.mode_size(), c.right_rank());
            for (Index b = 0; b < c.right_rank(); ++b) {
                Eigen::Map<const Matrix, 0, Eigen::OuterStride<>> in_slice(
                    c.values().data() + c.left_rank() * c.mode_size() * b, c.left_rank(), c.mode_size(),
                    Eigen::OuterStride<>(c.left_rank()));
                Eigen::Map<Matrix, 0, Eigen::OuterStride<>> out_slice(
                    out.values().data() + c.left_rank() * c.mode_size() * b, c.left_rank(), c.mode_size(),
                    Eigen::OuterStride<>(c.left_rank()));
                out_slice = in_slice * t.factors[i].transpose();
            }
            cs[i] = std::move(out);
        }
        TTVector term = tt_scale(TTVector(std::move(cs)), t.coefficient);
        acc = acc.order() == 0 ? tt_round(term, policy) : tt_round(tt_add(acc, term), policy);
    }
    return acc;
}

TTMatrix kron_sum_inverse_as_ttm(const KronSumOperator& op, const ExponentialSum& es, double scale,
                                 const RoundingPolicy& policy)
{
    return ttm_round(ttm_from_kron_terms(kron_sum_inverse_terms(op, es, scale)), policy);
}

} // namespace mtta
