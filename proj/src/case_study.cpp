#include "mtta/case_study.hpp"

#include "mtta/errors.hpp"

#include <random>

namespace mtta {

double default_density(Index k)
{
    if (k < 1)
        throw UsageError("component count must be positive");
    return 1.0 / (2.0 * double(k));
}

Topology random_topology(Index k, std::uint64_t seed, double density)
{
    if (k < 1)
        throw UsageError("component count must be positive");
    if (!(density >= 0.0 && density <= 1.0))
        throw UsageError("density must lie in [0, 1]");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution edge(density);
    Topology t = Topology::Identity(k, k);
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j)
            if (i != j)
                t(i, j) = edge(rng) ? 1 : 0;
    return t;
}

Topology figure1_topology()
{
    Topology t(4, 4);
    t << 1, 1, 1, 0,
         0, 1, 0, 1,
         0, 0, 1, 1,
         0, 0, 0, 1;
    return t;
}

SanModel generate_case_study(const Topology& topology)
{
    const Index k = topology.rows();
    if (k < 1 || topology.cols() != k)
        throw UsageError("topology must be a nonempty square matrix");
    SanModel m;
    m.topology = topology;
    const Matrix eye = Matrix::Identity(3, 3);
    Matrix trigger = Matrix::Zero(3, 3);
    trigger(0, 1) = 1.0;
    Matrix propagate = Matrix::Zero(3, 3);
    propagate(0, 1) = 1.0;
    propagate(1, 1) = 1.0;
    propagate(2, 2) = 1.0;

    for (Index i = 0; i < k; ++i) {
        const double rate = double(i + 1);
        Matrix r = Matrix::Zero(3, 3);
        r(0, 2) = rate / 10.0;
        r(1, 2) = rate;
        m.state_counts.push_back(3);
        m.local.push_back(r);
        m.pi0_factors.push_back(Vector::Unit(3, 0));
    }
    for (Index j = 0; j < k; ++j) {
        SyncTransition s;
        s.rate = double(j + 1);
        for (Index i = 0; i < k; ++i) {
            if (i == j)
                s.factors.push_back(trigger);
            else if (topology(j, i) != 0)
                s.factors.push_back(propagate);
            else
                s.factors.push_back(eye);
        }
        m.syncs.push_back(std::move(s));
    }
    validate(m);
    return m;
}

SanModel generate_case_study(const CaseStudyParams& params)
{
    const double density = params.density.value_or(default_density(params.k));
    return generate_case_study(random_topology(params.k, params.seed, density));
}

} // namespace mtta
