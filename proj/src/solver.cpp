#include "mtta/solver.hpp"

#include "mtta/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <sstream>

namespace mtta {

std::string to_string(Algorithm a)
{
    switch (a) {
    case Algorithm::linear:
        return "linear";
    case Algorithm::squared:
        return "squared";
    case Algorithm::transpose:
        return "transpose";
    }
    return "squared";
}

Algorithm parse_algorithm(const std::string& text)
{
    if (text == "linear")
        return Algorithm::linear;
    if (text == "squared")
        return Algorithm::squared;
    if (text == "transpose")
        return Algorithm::transpose;
    throw UsageError("unknown algorithm '" + text + "' (expected linear, squared or transpose)");
}

void SolverConfig::validate() const
{
    if (!(stop_tol > 0.0))
        throw UsageError("stop_tol must be positive");
    if (max_iter < 1)
        throw UsageError("max_iter must be at least 1");
    if (!(exp_sum_eps > 0.0 && exp_sum_eps < 1.0))
        throw UsageError("exp_sum_eps must lie in (0, 1)");
    if (!(rounding.rel_tolerance >= 0.0) || rounding.max_rank < 1)
        throw UsageError("invalid rounding policy");
    if (!(inverse_tolerance >= 0.0))
        throw UsageError("inverse_tolerance must be nonnegative");
    if (!std::isfinite(reward_shift))
        throw UsageError("reward_shift must be finite");
    if (fixed_iterations < 0)
        throw UsageError("fixed_iterations must be nonnegative");
}

PreparedSplitting prepare_splitting(Splitting split, double exp_sum_eps, double inverse_tolerance)
{
    PreparedSplitting p;
    p.split = std::move(split);
    const KronSumOperator neg = p.split.negated_Q1();
    p.spectrum = spectrum_interval(neg);
    p.scale = 1.0 / p.spectrum.lower;
    p.es = exp_sum_coeffs(std::max(1.0, p.spectrum.upper / p.spectrum.lower), exp_sum_eps);
    p.neg_q1_inverse = kron_sum_inverse_as_ttm(neg, p.es, p.scale, {inverse_tolerance});
    return p;
}

namespace {

TTVector a2_minus_s(const Splitting& split, const TTVector& v, const RoundingPolicy& policy)
{
    TTVector t = ttm_apply_rounded(split.A2, v, policy);
    const double c = tt_dot(split.eN, v);
    if (c != 0.0)
        t = tt_round(tt_add(t, tt_scale(split.q, -c)), policy);
    return t;
}

class MemoryTracker {
public:
    explicit MemoryTracker(std::size_t base_elements) : base_(base_elements) {}
    void observe(std::size_t live_elements) { peak_ = std::max(peak_, base_ + live_elements); }
    std::size_t peak_bytes() const { return peak_ * sizeof(double); }

private:
    std::size_t base_;
    std::size_t peak_ = 0;
};

std::size_t base_elements(const PreparedSplitting& p, const TTVector& b, const TTVector& pi0)
{
    return p.split.A2.element_count() + p.split.q.element_count() + p.split.eN.element_count() +
           p.neg_q1_inverse.element_count() + b.element_count() + pi0.element_count();
}

// Stopping rule for the term-by-term series: the geometric tail estimated
// from recent norm ratios must be below stop_tol, both for the iterate and
// for the measure.
class TailEstimate {
public:
    void push(double ratio)
    {
        ratios_.push_back(ratio);
        if (ratios_.size() > 5)
            ratios_.pop_front();
    }
    double factor() const
    {
        if (ratios_.size() < 3)
            return std::numeric_limits<double>::infinity();
        const double rho = *std::max_element(ratios_.begin(), ratios_.end());
        return rho < 1.0 ? rho / (1.0 - rho) : std::numeric_limits<double>::infinity();
    }

private:
    std::deque<double> ratios_;
};

// Frobenius norms of the iterates may rise for a while as mass spreads over
// the state space; only growth past the starting norm signals divergence.
class GrowthGuard {
public:
    explicit GrowthGuard(double initial) : initial_(initial) {}
    void check(double previous, double current, Index iteration)
    {
        streak_ = current > previous ? streak_ + 1 : 0;
        if (streak_ >= 3 && current > initial_) {
            std::ostringstream msg;
            msg << "iterate norm grew for 3 consecutive iterations (at iteration " << iteration
                << "); the splitting does not contract";
            throw NumericalError(msg.str());
        }
    }

private:
    double initial_;
    int streak_ = 0;
};

bool stop_now(const SolverConfig& cfg, Index j)
{
    return cfg.fixed_iterations > 0 && j >= cfg.fixed_iterations;
}

Index iteration_limit(const SolverConfig& cfg)
{
    return cfg.fixed_iterations > 0 ? cfg.fixed_iterations : cfg.max_iter;
}

} // namespace

TTVector apply_M(const Splitting& split, const ExponentialSum& es, double scale, const TTVector& v,
                 const RoundingPolicy& policy)
{
    return kron_sum_inverse_apply(split.negated_Q1(), es, scale, a2_minus_s(split, v, policy), policy);
}

TTVector apply_M(const PreparedSplitting& prep, const TTVector& v, const RoundingPolicy& policy)
{
    return ttm_apply_rounded(prep.neg_q1_inverse, a2_minus_s(prep.split, v, policy), policy);
}

TTVector reward_vector(const std::vector<Index>& mode_sizes, double reward_shift)
{
    std::vector<Index> last;
    for (Index n : mode_sizes)
        last.push_back(n - 1);
    const TTVector e = tt_ones(mode_sizes);
    if (reward_shift == 0.0)
        return e;
    return tt_round(tt_add(e, tt_scale(tt_basis(mode_sizes, last), reward_shift)), RoundingPolicy::structural());
}

NeumannResult neumann_linear(const PreparedSplitting& prep, const TTVector& b, const TTVector& pi0,
                             const SolverConfig& cfg)
{
    cfg.validate();
    const RoundingPolicy& pol = cfg.rounding;
    SolveReport rep;
    rep.algorithm = Algorithm::linear;
    MemoryTracker mem(base_elements(prep, b, pi0));

    TTVector y = tt_scale(ttm_apply_rounded(prep.neg_q1_inverse, b, pol), -1.0);
    TTVector x = y;
    double m = -tt_dot(pi0, y);
    rep.measure_history.push_back(m);
    rep.max_rank_history.push_back(x.max_rank());
    mem.observe(x.element_count() + y.element_count());

    double ny_prev = tt_norm_f(y);
    TailEstimate tail;
    GrowthGuard growth(ny_prev);
    rep.converged = ny_prev == 0.0;
    const Index limit = iteration_limit(cfg);
    Index j = 0;
    while (!rep.converged && j < limit) {
        ++j;
        y = apply_M(prep, y, pol);
        x = tt_round(tt_add(x, y), pol);
        const double inc = -tt_dot(pi0, y);
        m += inc;
        rep.measure_history.push_back(m);
        rep.max_rank_history.push_back(std::max(x.max_rank(), y.max_rank()));
        mem.observe(x.element_count() + y.element_count());

        const double ny = tt_norm_f(y), nx = tt_norm_f(x);
        rep.residual_estimate = nx > 0.0 ? ny / nx : 0.0;
        if (stop_now(cfg, j))
            break;
        if (ny == 0.0) {
            rep.converged = true;
            break;
        }
        growth.check(ny_prev, ny, j);
        tail.push(ny / ny_prev);
        ny_prev = ny;
        const double f = tail.factor();
        if (rep.residual_estimate * f < cfg.stop_tol && std::abs(inc) * f <= cfg.stop_tol * std::abs(m))
            rep.converged = true;
    }
    if (cfg.fixed_iterations > 0)
        rep.converged = true;
    rep.iterations = j;
    rep.mtta = m;
    rep.peak_memory_bytes = mem.peak_bytes();
    return {std::move(x), std::move(rep)};
}

NeumannResult neumann_squared(const PreparedSplitting& prep, const TTVector& b, const TTVector& pi0,
                              const SolverConfig& cfg)
{
    cfg.validate();
    const RoundingPolicy& pol = cfg.rounding;
    SolveReport rep;
    rep.algorithm = Algorithm::squared;
    MemoryTracker mem(base_elements(prep, b, pi0));

    const Splitting& sp = prep.split;
    const TTMatrix a2_s =
        ttm_round(ttm_add(sp.A2, ttm_scale(ttm_outer(sp.q, sp.eN), -1.0)), RoundingPolicy::structural());
    TTMatrix m_op = ttm_multiply_rounded(prep.neg_q1_inverse, a2_s, pol);

    const TTVector y0 = tt_scale(ttm_apply_rounded(prep.neg_q1_inverse, b, pol), -1.0);
    TTVector x = tt_round(tt_add(y0, ttm_apply_rounded(m_op, y0, pol)), pol);
    double m = -tt_dot(pi0, x);
    rep.measure_history.push_back(m);
    rep.max_rank_history.push_back(m_op.max_rank());
    mem.observe(x.element_count() + y0.element_count() + a2_s.element_count() + m_op.element_count());

    const bool capped = pol.max_rank != std::numeric_limits<Index>::max();
    const Index limit = std::min<Index>(iteration_limit(cfg), 62);
    Index step = 0;
    rep.converged = false;
    while (step < limit) {
        ++step;
        double err = 0.0;
        m_op = ttm_multiply_rounded(m_op, m_op, pol, &err);
        if (capped && m_op.max_rank() >= pol.max_rank && err > cfg.stop_tol) {
            std::ostringstream msg;
            msg << "rank explosion: M reached the rank cap " << pol.max_rank << " with truncation error " << err
                << " at squaring " << step << "; try a larger gamma";
            throw NumericalError(msg.str());
        }
        const TTVector mx = ttm_apply_rounded(m_op, x, pol);
        x = tt_round(tt_add(x, mx), pol);
        const double inc = -tt_dot(pi0, mx);
        m += inc;
        rep.measure_history.push_back(m);
        rep.max_rank_history.push_back(m_op.max_rank());
        mem.observe(x.element_count() + mx.element_count() + a2_s.element_count() + 2 * m_op.element_count());
        const double nx = tt_norm_f(x);
        rep.residual_estimate = nx > 0.0 ? tt_norm_f(mx) / nx : 0.0;
        if (stop_now(cfg, step))
            break;
        if (cfg.fixed_iterations == 0 && std::abs(inc) <= cfg.stop_tol * std::abs(m)) {
            rep.converged = true;
            break;
        }
    }
    if (cfg.fixed_iterations > 0)
        rep.converged = true;
    rep.iterations = step;
    rep.mtta = m;
    rep.peak_memory_bytes = mem.peak_bytes();
    return {std::move(x), std::move(rep)};
}

NeumannResult neumann_transpose(const PreparedSplitting& prep, const TTVector& b, const TTVector& pi0,
                                const SolverConfig& cfg)
{
    cfg.validate();
    const RoundingPolicy& pol = cfg.rounding;
    SolveReport rep;
    rep.algorithm = Algorithm::transpose;
    const Splitting& sp = prep.split;
    const TTMatrix inv_t = ttm_transpose(prep.neg_q1_inverse);
    const TTMatrix a2_t = ttm_transpose(sp.A2);
    MemoryTracker mem(base_elements(prep, b, pi0) + inv_t.element_count() + a2_t.element_count());

    // z_b = Q_1^{-1} b turns each row iterate into a measure increment.
    const TTVector zb = tt_scale(ttm_apply_rounded(prep.neg_q1_inverse, b, pol), -1.0);
    TTVector r = pi0;
    TTVector acc = r;
    double m = -tt_dot(r, zb);
    rep.measure_history.push_back(m);
    rep.max_rank_history.push_back(acc.max_rank());
    mem.observe(acc.element_count() + r.element_count() + zb.element_count());

    double nr_prev = tt_norm_f(r);
    TailEstimate tail;
    GrowthGuard growth(nr_prev);
    const Index limit = iteration_limit(cfg);
    Index j = 0;
    rep.converged = false;
    while (j < limit) {
        ++j;
        const TTVector z = ttm_apply_rounded(inv_t, r, pol);
        TTVector next = ttm_apply_rounded(a2_t, z, pol);
        const double c = tt_dot(sp.q, z);
        if (c != 0.0)
            next = tt_round(tt_add(next, tt_scale(sp.eN, -c)), pol);
        r = std::move(next);
        acc = tt_round(tt_add(acc, r), pol);
        const double inc = -tt_dot(r, zb);
        m += inc;
        rep.measure_history.push_back(m);
        rep.max_rank_history.push_back(std::max(acc.max_rank(), r.max_rank()));
        mem.observe(acc.element_count() + r.element_count() + z.element_count() + zb.element_count());

        const double nr = tt_norm_f(r), na = tt_norm_f(acc);
        rep.residual_estimate = na > 0.0 ? nr / na : 0.0;
        if (stop_now(cfg, j))
            break;
        if (nr == 0.0) {
            rep.converged = true;
            break;
        }
        growth.check(nr_prev, nr, j);
        tail.push(nr / nr_prev);
        nr_prev = nr;
        const double f = tail.factor();
        if (rep.residual_estimate * f < cfg.stop_tol && std::abs(inc) * f <= cfg.stop_tol * std::abs(m)) {
            rep.converged = true;
            break;
        }
    }
    if (cfg.fixed_iterations > 0)
        rep.converged = true;
    rep.iterations = j;
    TTVector xt = tt_scale(ttm_apply_rounded(inv_t, acc, pol), -1.0);
    rep.mtta = m;
    rep.peak_memory_bytes = mem.peak_bytes();
    return {std::move(xt), std::move(rep)};
}

namespace {

template <class F>
auto stage(const char* name, F&& f) -> decltype(f())
{
    try {
        return f();
    } catch (const NumericalError& e) {
        throw NumericalError(std::string("stage ") + name + ": " + e.what());
    } catch (const ModelError& e) {
        throw ModelError(std::string("stage ") + name + ": " + e.what());
    } catch (const UsageError& e) {
        throw UsageError(std::string("stage ") + name + ": " + e.what());
    }
}

} // namespace

SolveReport compute_mtta(const SanModel& input, const SolverConfig& cfg)
{
    const auto start = std::chrono::steady_clock::now();
    cfg.validate();
    stage("validate", [&] { validate(input); });

    std::vector<Index> perm(static_cast<std::size_t>(input.k()));
    std::iota(perm.begin(), perm.end(), Index{0});
    if (cfg.use_rcm)
        perm = stage("ordering", [&] { return rcm_order(input.topology); });
    const SanModel model = permute_model(input, perm);

    const Descriptor desc = stage("descriptor", [&] { return build_descriptor(model); });
    const double gamma = stage("gamma", [&] { return default_gamma(desc, cfg.gamma); });
    const PreparedSplitting prep = stage("splitting", [&] {
        return prepare_splitting(build_splitting(model, desc, gamma), cfg.exp_sum_eps, cfg.inverse_tolerance);
    });

    const TTVector pi0 = tt_rank_one(model.pi0_factors);
    const TTVector b = reward_vector(model.state_counts, cfg.reward_shift);
    NeumannResult res = stage("iteration", [&] {
        switch (cfg.algorithm) {
        case Algorithm::linear:
            return neumann_linear(prep, b, pi0, cfg);
        case Algorithm::transpose:
            return neumann_transpose(prep, b, pi0, cfg);
        case Algorithm::squared:
            break;
        }
        return neumann_squared(prep, b, pi0, cfg);
    });

    SolveReport rep = std::move(res.report);
    rep.gamma = gamma;
    rep.spectrum_lower = prep.spectrum.lower;
    rep.spectrum_upper = prep.spectrum.upper;
    rep.exp_sum_terms = prep.es.terms();
    rep.inverse_max_rank = prep.neg_q1_inverse.max_rank();
    rep.permutation = perm;
    rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

} // namespace mtta
