#include "mtta/case_study.hpp"
#include "mtta/errors.hpp"
#include "mtta/oracle.hpp"
#include "mtta/san_model.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace mtta;

namespace {

SanModel two_state(double lambda)
{
    SanModel m;
    m.state_counts = {2};
    Matrix r = Matrix::Zero(2, 2);
    r(0, 1) = lambda;
    m.local = {r};
    m.pi0_factors = {Vector::Unit(2, 0)};
    m.topology = Topology::Identity(1, 1);
    return m;
}

const char* kTwoStateJson = R"({
  "k": 1,
  "state_counts": [2],
  "local": [[[0, 2], [0, 0]]],
  "syncs": [],
  "pi0_factors": [[1, 0]]
})";

std::string expect_model_error(const std::string& text)
{
    try {
        model_from_json(text);
    } catch (const ModelError& e) {
        return e.what();
    }
    ADD_FAILURE() << "no ModelError for: " << text;
    return {};
}

Topology path_topology(const std::vector<Index>& order)
{
    const Index k = static_cast<Index>(order.size());
    Topology t = Topology::Identity(k, k);
    for (Index i = 0; i + 1 < k; ++i)
        t(order[i], order[i + 1]) = 1;
    return t;
}

Index brute_force_bandwidth(const Topology& t)
{
    std::vector<Index> perm(static_cast<std::size_t>(t.rows()));
    std::iota(perm.begin(), perm.end(), Index{0});
    Index best = t.rows();
    do
        best = std::min(best, topology_bandwidth(t, perm));
    while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

} // namespace

TEST(Validation, AcceptsCaseStudy)
{
    for (Index k = 1; k <= 5; ++k)
        EXPECT_NO_THROW(validate(generate_case_study(CaseStudyParams{k, 3, {}})));
}

TEST(Validation, RejectsBadModels)
{
    SanModel m = two_state(1.0);
    m.local[0](0, 1) = -1.0;
    EXPECT_THROW(validate(m), ModelError);

    m = two_state(1.0);
    m.local[0](1, 0) = 1.0; // absorbing state leaves
    EXPECT_THROW(validate(m), ModelError);

    m = two_state(1.0);
    m.pi0_factors[0] = Vector::Unit(2, 1);
    EXPECT_THROW(validate(m), ModelError);

    m = two_state(1.0);
    m.pi0_factors[0] = Vector::Constant(2, 0.4);
    EXPECT_THROW(validate(m), ModelError);

    m = two_state(1.0);
    m.syncs.push_back({1.0, {Matrix::Constant(2, 2, 0.5)}});
    EXPECT_THROW(validate(m), ModelError);

    m = two_state(1.0);
    m.topology(0, 0) = 0;
    EXPECT_THROW(validate(m), ModelError);
}

TEST(Validation, MessageNamesField)
{
    SanModel m = generate_case_study(CaseStudyParams{3, 1, {}});
    m.local[1](2, 0) = 1.0;
    try {
        validate(m);
        FAIL();
    } catch (const ModelError& e) {
        EXPECT_NE(std::string(e.what()).find("/local/1"), std::string::npos) << e.what();
    }
}

TEST(ModelJson, ParsesTwoState)
{
    const SanModel m = model_from_json(kTwoStateJson);
    EXPECT_EQ(m.k(), 1);
    EXPECT_DOUBLE_EQ(m.local[0](0, 1), 2.0);
    EXPECT_EQ(m.topology, Topology::Identity(1, 1));
}

TEST(ModelJson, RoundTripIsLossless)
{
    const SanModel m = generate_case_study(CaseStudyParams{4, 11, 0.4});
    const std::string text = model_to_json(m);
    const SanModel back = model_from_json(text);
    EXPECT_EQ(model_to_json(back), text);
    ASSERT_EQ(back.syncs.size(), m.syncs.size());
    for (std::size_t t = 0; t < m.syncs.size(); ++t)
        for (Index i = 0; i < m.k(); ++i)
            EXPECT_EQ(back.syncs[t].factors[i], m.syncs[t].factors[i]);
    EXPECT_EQ(back.topology, m.topology);
}

TEST(ModelJson, IdentityShorthand)
{
    const std::string text = R"({"k": 2, "state_counts": [2, 2],
      "local": [[[0, 1], [0, 0]], [[0, 1], [0, 0]]],
      "syncs": [{"rate": 3, "factors": ["I", [[0, 1], [0, 0]]]}],
      "pi0_factors": [[1, 0], [1, 0]]})";
    const SanModel m = model_from_json(text);
    EXPECT_EQ(m.syncs[0].factors[0], Matrix::Identity(2, 2));
    EXPECT_NE(model_to_json(m).find("\"I\""), std::string::npos);
}

TEST(ModelJson, Diagnostics)
{
    EXPECT_NE(expect_model_error("{\"k\": 1,\n \"state_counts\": [2],\n \"local\": [[[0, NaN]").find("line 3"),
              std::string::npos);
    EXPECT_NE(expect_model_error(R"({"k": 1, "state_counts": [2], "local": [[[0, 1], [0, 0]]]})")
                  .find("/pi0_factors"),
              std::string::npos);
    EXPECT_NE(expect_model_error(R"({"k": 1, "state_counts": [2], "local": [[[0, "x"], [0, 0]]],
                                  "pi0_factors": [[1, 0]]})")
                  .find("/local/0"),
              std::string::npos);
    expect_model_error(R"({"k": 1, "state_counts": [2], "local": [[[0, 1e999], [0, 0]]], "pi0_factors": [[1, 0]]})");
}

TEST(ModelJson, FileRoundTrip)
{
    const auto path = std::filesystem::temp_directory_path() / "mtta_model_roundtrip.json";
    const SanModel m = generate_case_study(figure1_topology());
    save_model(m, path);
    EXPECT_EQ(model_to_json(load_model(path)), model_to_json(m));
    std::filesystem::remove(path);
    EXPECT_THROW(load_model(path), ModelError);
}

TEST(Ordering, IdentityTopologyKeepsOrder)
{
    const auto perm = rcm_order(Topology::Identity(5, 5));
    std::vector<Index> id(5);
    std::iota(id.begin(), id.end(), Index{0});
    EXPECT_EQ(perm, id);
}

TEST(Ordering, ShuffledPathGetsBandwidthOne)
{
    const std::vector<std::vector<Index>> orders = {{3, 0, 2, 1}, {4, 2, 0, 1, 3}, {5, 3, 1, 0, 2, 4}, {1, 0}};
    for (const auto& order : orders) {
        const Topology t = path_topology(order);
        EXPECT_EQ(brute_force_bandwidth(t), 1);
        EXPECT_EQ(topology_bandwidth(t, rcm_order(t)), 1);
    }
}

TEST(Ordering, ResultIsPermutation)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Topology t = random_topology(9, seed, 0.2);
        auto perm = rcm_order(t);
        std::sort(perm.begin(), perm.end());
        for (Index i = 0; i < 9; ++i)
            EXPECT_EQ(perm[i], i);
    }
}

TEST(Ordering, PermutationPreservesMtta)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const SanModel m = generate_case_study(CaseStudyParams{4, seed, 0.4});
        const double ref = dense_mtta(dense_generator(m));
        EXPECT_NEAR(dense_mtta(dense_generator(permute_model(m, rcm_order(m.topology)))), ref, 1e-10 * ref);
        EXPECT_NEAR(dense_mtta(dense_generator(permute_model(m, {2, 0, 3, 1}))), ref, 1e-10 * ref);
    }
}

TEST(Descriptor, TwoStateGenerator)
{
    const Descriptor d = build_descriptor(two_state(3.0));
    Matrix expected(2, 2);
    expected << -3, 3, 0, 0;
    EXPECT_LT((ttm_to_dense(d.Q) - expected).norm(), 1e-14);
}

TEST(Descriptor, MatchesDenseEnumeration)
{
    for (Index k = 1; k <= 4; ++k)
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            const SanModel m = generate_case_study(CaseStudyParams{k, seed, 0.5});
            const Matrix q = ttm_to_dense(build_descriptor(m).Q);
            const Matrix ref = dense_generator(m).Q;
            EXPECT_LT((q - ref).cwiseAbs().maxCoeff(), 1e-12) << "k=" << k << " seed=" << seed;
            EXPECT_LT(q.rowwise().sum().cwiseAbs().maxCoeff(), 1e-12);
            EXPECT_LT(q.row(q.rows() - 1).cwiseAbs().maxCoeff(), 1e-12);
        }
}

TEST(Descriptor, AllTwoAutomatonTopologies)
{
    for (int mask = 0; mask < 4; ++mask) {
        Topology t = Topology::Identity(2, 2);
        t(0, 1) = mask & 1;
        t(1, 0) = (mask >> 1) & 1;
        const SanModel m = generate_case_study(t);
        EXPECT_LT((ttm_to_dense(build_descriptor(m).Q) - dense_generator(m).Q).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Descriptor, IdentitySyncIsNoOp)
{
    SanModel m = generate_case_study(CaseStudyParams{2, 0, 0.0});
    const Matrix before = ttm_to_dense(build_descriptor(m).Q);
    m.syncs.push_back({5.0, {Matrix::Identity(3, 3), Matrix::Identity(3, 3)}});
    EXPECT_LT((ttm_to_dense(build_descriptor(m).Q) - before).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Descriptor, GeneratorProperty)
{
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const Matrix q = ttm_to_dense(build_descriptor(generate_case_study(CaseStudyParams{5, seed, {}})).Q);
        Matrix off = q;
        off.diagonal().setZero();
        EXPECT_GE(off.minCoeff(), -1e-12);
        EXPECT_LE(q.diagonal().maxCoeff(), 1e-12);
        EXPECT_LT(q.rowwise().sum().cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Gamma, TwoStateMinimal)
{
    const Descriptor d = build_descriptor(two_state(2.0));
    EXPECT_DOUBLE_EQ(default_gamma(d, GammaChoice::parse("min")), 2.0);
    EXPECT_DOUBLE_EQ(default_gamma(d, GammaChoice::parse("scale:4")), 8.0);
    EXPECT_DOUBLE_EQ(default_gamma(d, GammaChoice::parse("value:7.5")), 7.5);
    EXPECT_THROW(GammaChoice::parse("scale:1"), UsageError);
    EXPECT_THROW(GammaChoice::parse("scale:0.5"), UsageError);
    EXPECT_THROW(GammaChoice::parse("max"), UsageError);
    EXPECT_EQ(GammaChoice::parse("scale:4").to_string(), "scale:4");
}

TEST(Gamma, BoundsDenseExitRate)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const SanModel m = generate_case_study(CaseStudyParams{3, seed, 0.5});
        const double dense_max = (-dense_generator(m).Q.diagonal()).maxCoeff();
        const double g = default_gamma(build_descriptor(m), GammaChoice{});
        EXPECT_GE(g, dense_max - 1e-12);
    }
    // Factor-wise maxima: 1 + 2 from the local rows, 1 + 2 from the syncs,
    // while the largest dense exit rate is 3.3 in the all-working state.
    const SanModel m = generate_case_study(CaseStudyParams{2, 0, 0.0});
    EXPECT_NEAR((-dense_generator(m).Q.diagonal()).maxCoeff(), 3.3, 1e-12);
    EXPECT_DOUBLE_EQ(default_gamma(build_descriptor(m), GammaChoice{}), 6.0);
}

TEST(Splitting, TwoStateHandExpansion)
{
    const SanModel m = two_state(1.5);
    const Descriptor d = build_descriptor(m);
    const Splitting s = build_splitting(m, d, 1.5);
    Matrix q1(2, 2), a2(2, 2);
    q1 << -1.5, 1.5, 0, -1.5;
    a2 << 0, 0, 0, 1.5;
    EXPECT_LT((ttm_to_dense(s.Q1.to_ttm()) - q1).norm(), 1e-14);
    EXPECT_LT((ttm_to_dense(s.A2) - a2).norm(), 1e-14);
    EXPECT_LT((ttm_to_dense(s.Q1.to_ttm()) + ttm_to_dense(s.A2) - ttm_to_dense(d.Q)).norm(), 1e-14);
}

TEST(Splitting, SumsToGeneratorAndDoublingTelescopes)
{
    const SanModel m = generate_case_study(CaseStudyParams{3, 2, 0.5});
    const Descriptor d = build_descriptor(m);
    const double g = default_gamma(d, GammaChoice{});
    const Splitting s1 = build_splitting(m, d, g);
    const Splitting s2 = build_splitting(m, d, 2 * g);
    const Matrix q = ttm_to_dense(d.Q);
    const Matrix q1a = ttm_to_dense(s1.Q1.to_ttm()), a2a = ttm_to_dense(s1.A2);
    const Matrix q1b = ttm_to_dense(s2.Q1.to_ttm()), a2b = ttm_to_dense(s2.A2);
    EXPECT_LT((q1a + a2a - q).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((q1b + a2b - q).cwiseAbs().maxCoeff(), 1e-12);
    const Index n = q.rows();
    EXPECT_LT((a2b - a2a - g * Matrix::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((q1b - q1a + g * Matrix::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(a2a.minCoeff(), -1e-12);

    // q = (A_1 + A_2) e_N
    const Vector qd = tt_to_dense(s1.q);
    Matrix a1 = q1a;
    a1.diagonal().array() += g;
    EXPECT_LT((qd - (a1 + a2a).col(n - 1)).norm(), 1e-12);
}

TEST(Splitting, RejectsGammaBelowBound)
{
    const SanModel m = generate_case_study(CaseStudyParams{2, 0, {}});
    const Descriptor d = build_descriptor(m);
    EXPECT_THROW(build_splitting(m, d, 0.5 * d.delta_bound), UsageError);
}

TEST(Splitting, ContractsOnCaseStudy)
{
    const SanModel m = generate_case_study(CaseStudyParams{2, 0, 1.0});
    const double g = default_gamma(build_descriptor(m), GammaChoice{});
    const ContractionReport r = dense_contraction_checks(m, g);
    EXPECT_LE(r.norm_inf, 1.0 + 1e-12);
    EXPECT_LT(r.rho, 1.0);
    EXPECT_LE(r.rho, r.norm_inf + 1e-12);
}
