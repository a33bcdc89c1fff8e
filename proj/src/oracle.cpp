#include "mtta/oracle.hpp"

#include "mtta/errors.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <deque>
#include <sstream>

namespace mtta {

namespace {

void check_cap(const SanModel& model, double cap)
{
    if (model.potential_states() > cap) {
        std::ostringstream msg;
        msg << "potential state space " << model.potential_states() << " exceeds the dense oracle cap " << cap;
        throw ModelError(msg.str());
    }
}

std::vector<Index> strides(const SanModel& model)
{
    const Index k = model.k();
    std::vector<Index> s(static_cast<std::size_t>(k));
    Index acc = 1;
    for (Index i = k; i-- > 0;) {
        s[i] = acc;
        acc *= model.state_counts[i];
    }
    return s;
}

Matrix kron_all(const std::vector<Matrix>& fs)
{
    Matrix out = Matrix::Identity(1, 1);
    for (const auto& f : fs) {
        Matrix next = Eigen::kroneckerProduct(out, f).eval();
        out.swap(next);
    }
    return out;
}

} // namespace

DenseChain dense_generator(const SanModel& model, double state_cap)
{
    validate(model);
    check_cap(model, state_cap);
    const Index k = model.k();
    const Index n = static_cast<Index>(model.potential_states());
    const auto stride = strides(model);

    DenseChain chain;
    chain.Q = Matrix::Zero(n, n);
    chain.pi0 = Vector::Ones(n);
    chain.absorbing_index = n - 1;

    std::vector<Index> state(static_cast<std::size_t>(k), 0);
    for (Index s = 0; s < n; ++s) {
        for (Index i = 0; i < k; ++i)
            chain.pi0[s] *= model.pi0_factors[i][state[i]];

        // Local transitions move a single automaton.
        for (Index i = 0; i < k; ++i)
            for (Index to = 0; to < model.state_counts[i]; ++to) {
                const double rate = model.local[i](state[i], to);
                if (rate != 0.0 && to != state[i])
                    chain.Q(s, s + (to - state[i]) * stride[i]) += rate;
            }

        // A synchronized transition is enabled when every automaton has a
        // target; it fires into every combination of targets.
        for (const auto& sync : model.syncs) {
            std::vector<std::vector<Index>> targets(static_cast<std::size_t>(k));
            bool enabled = true;
            for (Index i = 0; i < k && enabled; ++i) {
                for (Index to = 0; to < model.state_counts[i]; ++to)
                    if (sync.factors[i](state[i], to) != 0.0)
                        targets[i].push_back(to);
                enabled = !targets[i].empty();
            }
            if (!enabled)
                continue;
            std::vector<std::size_t> pick(static_cast<std::size_t>(k), 0);
            while (true) {
                Index dest = 0;
                double weight = sync.rate;
                for (Index i = 0; i < k; ++i) {
                    const Index to = targets[i][pick[i]];
                    dest += to * stride[i];
                    weight *= sync.factors[i](state[i], to);
                }
                if (dest != s)
                    chain.Q(s, dest) += weight;
                Index i = k - 1;
                for (; i >= 0; --i) {
                    if (++pick[i] < targets[i].size())
                        break;
                    pick[i] = 0;
                }
                if (i < 0)
                    break;
            }
        }

        for (Index i = k; i-- > 0;) {
            if (++state[i] < model.state_counts[i])
                break;
            state[i] = 0;
        }
    }
    for (Index s = 0; s < n; ++s)
        chain.Q(s, s) = -(chain.Q.row(s).sum() - chain.Q(s, s));
    return chain;
}

double dense_mtta(const DenseChain& chain)
{
    const Index n = chain.Q.rows();
    if (n < 2)
        throw NumericalError("dense_mtta: the chain has no transient states");
    const Index m = n - 1;
    const Matrix qhat = chain.Q.topLeftCorner(m, m);
    const Eigen::PartialPivLU<Matrix> lu(qhat);
    const auto pivots = lu.matrixLU().diagonal().cwiseAbs();
    const double value = -chain.pi0.head(m).dot(lu.solve(Vector::Ones(m)));
    if (!(pivots.minCoeff() > 1e-14 * pivots.maxCoeff()) || !(lu.rcond() > 1e-14) || !std::isfinite(value))
        throw NumericalError("dense_mtta: transient block is singular; the absorbing state is unreachable "
                             "from part of the state space");
    return value;
}

std::vector<bool> dense_reachable(const DenseChain& chain)
{
    const Index n = chain.Q.rows();
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    std::deque<Index> queue;
    for (Index s = 0; s < n; ++s)
        if (chain.pi0[s] > 0.0) {
            seen[s] = true;
            queue.push_back(s);
        }
    while (!queue.empty()) {
        const Index s = queue.front();
        queue.pop_front();
        for (Index t = 0; t < n; ++t)
            if (t != s && chain.Q(s, t) > 0.0 && !seen[t]) {
                seen[t] = true;
                queue.push_back(t);
            }
    }
    return seen;
}

bool SplittingPremises::all() const
{
    return d_nonpositive && a1_nonnegative && a2_nonnegative && last_row_zero && a1_last_row_zero &&
           zero_row_sums && inverse_nonpositive && a2_last_column_positive;
}

DenseSplitting dense_splitting(const SanModel& model, double gamma, double state_cap)
{
    validate(model);
    check_cap(model, state_cap);
    const Index k = model.k();
    const Index n = static_cast<Index>(model.potential_states());

    DenseSplitting s;
    s.A1 = Matrix::Zero(n, n);
    for (Index i = 0; i < k; ++i) {
        std::vector<Matrix> fs;
        for (Index j = 0; j < k; ++j)
            fs.push_back(i == j ? model.local[j] : Matrix::Identity(model.state_counts[j], model.state_counts[j]));
        s.A1 += kron_all(fs);
    }
    Matrix w = Matrix::Zero(n, n);
    for (const auto& sync : model.syncs)
        w += sync.rate * kron_all(sync.factors);
    const Vector d = (s.A1 + w).rowwise().sum();
    s.D = -gamma * Matrix::Identity(n, n);
    s.A2 = w + gamma * Matrix::Identity(n, n);
    s.A2.diagonal() -= d;
    s.S = Matrix::Zero(n, n);
    s.S.col(n - 1) = (s.A1 + s.A2).col(n - 1);
    s.M = -(s.D + s.A1).partialPivLu().solve(s.A2 - s.S);
    return s;
}

ContractionReport dense_contraction_checks(const SanModel& model, double gamma, double state_cap)
{
    const DenseSplitting s = dense_splitting(model, gamma, state_cap);
    const Index n = s.M.rows();
    // Entries at roundoff level relative to gamma count as zero.
    const double tiny = 1e-12 * std::max(1.0, gamma);

    ContractionReport r;
    r.norm_inf = s.M.cwiseAbs().rowwise().sum().maxCoeff();
    r.rho = s.M.eigenvalues().cwiseAbs().maxCoeff();

    SplittingPremises& p = r.premises;
    p.d_nonpositive = s.D.diagonal().maxCoeff() <= 0.0;
    p.a1_nonnegative = s.A1.minCoeff() >= -tiny;
    p.a2_nonnegative = s.A2.minCoeff() >= -tiny;
    const Matrix q = s.D + s.A1 + s.A2;
    p.last_row_zero = q.row(n - 1).cwiseAbs().maxCoeff() <= tiny;
    p.a1_last_row_zero = s.A1.row(n - 1).cwiseAbs().maxCoeff() <= tiny;
    p.zero_row_sums = q.rowwise().sum().cwiseAbs().maxCoeff() <= tiny * n;
    const Matrix inv = (s.D + s.A1).inverse();
    p.inverse_nonpositive = inv.maxCoeff() <= 1e-14 * inv.cwiseAbs().maxCoeff();
    r.min_a2_last_column = n > 1 ? s.A2.col(n - 1).head(n - 1).minCoeff() : 0.0;
    p.a2_last_column_positive = n > 1 && r.min_a2_last_column > tiny;
    return r;
}

} // namespace mtta
