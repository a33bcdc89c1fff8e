#include "mtta/san_model.hpp"

#include "mtta/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mtta {

using nlohmann::json;

double SanModel::potential_states() const
{
    double n = 1.0;
    for (Index s : state_counts)
        n *= double(s);
    return n;
}

std::vector<Index> SanModel::absorbing_index() const
{
    std::vector<Index> idx;
    for (Index s : state_counts)
        idx.push_back(s - 1);
    return idx;
}

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& what)
{
    throw ModelError("field " + field + ": " + what);
}

std::string at(const std::string& base, std::size_t i)
{
    return base + "/" + std::to_string(i);
}

bool is_identity(const Matrix& m)
{
    return m.rows() == m.cols() && m == Matrix::Identity(m.rows(), m.cols());
}

double max_row_sum(const Matrix& m)
{
    return m.rows() == 0 ? 0.0 : m.rowwise().sum().maxCoeff();
}

} // namespace

void validate(const SanModel& m)
{
    const Index k = m.k();
    if (k < 1)
        fail("/k", "at least one automaton is required");
    for (Index i = 0; i < k; ++i)
        if (m.state_counts[i] < 1)
            fail(at("/state_counts", i), "state counts must be positive");

    if (static_cast<Index>(m.local.size()) != k)
        fail("/local", "expected " + std::to_string(k) + " matrices");
    for (Index i = 0; i < k; ++i) {
        const Matrix& r = m.local[i];
        const std::string f = at("/local", i);
        const Index n = m.state_counts[i];
        if (r.rows() != n || r.cols() != n)
            fail(f, "expected a " + std::to_string(n) + "x" + std::to_string(n) + " matrix");
        if (!r.allFinite())
            fail(f, "entries must be finite");
        if ((r.array() < 0.0).any())
            fail(f, "rates must be nonnegative");
        if (r.diagonal().cwiseAbs().maxCoeff() != 0.0)
            fail(f, "diagonal must be zero");
        if (r.row(n - 1).cwiseAbs().maxCoeff() != 0.0)
            fail(f, "the last local state must have no outgoing transitions");
    }

    for (std::size_t t = 0; t < m.syncs.size(); ++t) {
        const SyncTransition& s = m.syncs[t];
        const std::string f = at("/syncs", t);
        if (!std::isfinite(s.rate) || !(s.rate > 0.0))
            fail(f + "/rate", "rate must be positive and finite");
        if (static_cast<Index>(s.factors.size()) != k)
            fail(f + "/factors", "expected " + std::to_string(k) + " factors");
        bool enabled_at_absorbing = true;
        bool leaves_absorbing = false;
        for (Index i = 0; i < k; ++i) {
            const Matrix& w = s.factors[i];
            const Index n = m.state_counts[i];
            const std::string fi = at(f + "/factors", i);
            if (w.rows() != n || w.cols() != n)
                fail(fi, "expected a " + std::to_string(n) + "x" + std::to_string(n) + " matrix");
            if (((w.array() != 0.0) && (w.array() != 1.0)).any())
                fail(fi, "entries must be 0 or 1");
            const auto last = w.row(n - 1);
            if (last.sum() == 0.0)
                enabled_at_absorbing = false;
            if (last.head(n - 1).sum() != 0.0)
                leaves_absorbing = true;
        }
        if (enabled_at_absorbing && leaves_absorbing)
            fail(f, "transition is enabled in the absorbing state and leaves it");
    }

    if (static_cast<Index>(m.pi0_factors.size()) != k)
        fail("/pi0_factors", "expected " + std::to_string(k) + " vectors");
    bool absorbing_mass = true;
    for (Index i = 0; i < k; ++i) {
        const Vector& p = m.pi0_factors[i];
        const std::string f = at("/pi0_factors", i);
        if (p.size() != m.state_counts[i])
            fail(f, "expected length " + std::to_string(m.state_counts[i]));
        if (!p.allFinite() || (p.array() < 0.0).any())
            fail(f, "probabilities must be finite and nonnegative");
        if (std::abs(p.sum() - 1.0) > 1e-12)
            fail(f, "probabilities must sum to 1");
        if (p[p.size() - 1] == 0.0)
            absorbing_mass = false;
    }
    if (absorbing_mass)
        fail("/pi0_factors", "the initial distribution puts mass on the absorbing state");

    if (m.topology.rows() != k || m.topology.cols() != k)
        fail("/topology", "expected a " + std::to_string(k) + "x" + std::to_string(k) + " matrix");
    for (Index i = 0; i < k; ++i) {
        if (m.topology(i, i) != 1)
            fail("/topology", "diagonal entries must be 1");
        for (Index j = 0; j < k; ++j)
            if (m.topology(i, j) != 0 && m.topology(i, j) != 1)
                fail("/topology", "entries must be 0 or 1");
    }
}

// JSON -------------------------------------------------------------------------

namespace {

double read_number(const json& j, const std::string& field)
{
    if (!j.is_number())
        fail(field, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v))
        fail(field, "number must be finite");
    return v;
}

Matrix read_matrix(const json& j, const std::string& field, Index n, bool allow_identity)
{
    if (allow_identity && j.is_string()) {
        if (j.get<std::string>() != "I")
            fail(field, "the only string shorthand is \"I\"");
        return Matrix::Identity(n, n);
    }
    if (!j.is_array() || static_cast<Index>(j.size()) != n)
        fail(field, "expected " + std::to_string(n) + " rows");
    Matrix m(n, n);
    for (Index r = 0; r < n; ++r) {
        const json& row = j[r];
        const std::string fr = at(field, r);
        if (!row.is_array() || static_cast<Index>(row.size()) != n)
            fail(fr, "expected " + std::to_string(n) + " columns");
        for (Index c = 0; c < n; ++c)
            m(r, c) = read_number(row[c], at(fr, c));
    }
    return m;
}

const json& require(const json& obj, const char* key)
{
    auto it = obj.find(key);
    if (it == obj.end())
        fail(std::string("/") + key, "missing");
    return *it;
}

json matrix_json(const Matrix& m)
{
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c)
            row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

SanModel model_from_json(const std::string& text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        // Translate the byte offset into a line number for the diagnostic.
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
        throw ModelError("line " + std::to_string(line) + ": " + e.what());
    } catch (const json::exception& e) {
        throw ModelError(e.what());
    }
    if (!doc.is_object())
        fail("/", "expected an object");

    SanModel m;
    const json& jk = require(doc, "k");
    if (!jk.is_number_integer() || jk.get<long long>() < 1)
        fail("/k", "expected a positive integer");
    const Index k = jk.get<Index>();

    const json& js = require(doc, "state_counts");
    if (!js.is_array() || static_cast<Index>(js.size()) != k)
        fail("/state_counts", "expected " + std::to_string(k) + " entries");
    for (std::size_t i = 0; i < js.size(); ++i) {
        if (!js[i].is_number_integer() || js[i].get<long long>() < 1)
            fail(at("/state_counts", i), "expected a positive integer");
        m.state_counts.push_back(js[i].get<Index>());
    }

    const json& jl = require(doc, "local");
    if (!jl.is_array() || static_cast<Index>(jl.size()) != k)
        fail("/local", "expected " + std::to_string(k) + " matrices");
    for (Index i = 0; i < k; ++i)
        m.local.push_back(read_matrix(jl[i], at("/local", i), m.state_counts[i], false));

    if (auto it = doc.find("syncs"); it != doc.end()) {
        if (!it->is_array())
            fail("/syncs", "expected an array");
        for (std::size_t t = 0; t < it->size(); ++t) {
            const json& js_t = (*it)[t];
            const std::string f = at("/syncs", t);
            if (!js_t.is_object())
                fail(f, "expected an object");
            SyncTransition s;
            if (!js_t.contains("rate"))
                fail(f + "/rate", "missing");
            s.rate = read_number(js_t["rate"], f + "/rate");
            if (!js_t.contains("factors") || !js_t["factors"].is_array() ||
                static_cast<Index>(js_t["factors"].size()) != k)
                fail(f + "/factors", "expected " + std::to_string(k) + " factors");
            for (Index i = 0; i < k; ++i)
                s.factors.push_back(read_matrix(js_t["factors"][i], at(f + "/factors", i), m.state_counts[i], true));
            m.syncs.push_back(std::move(s));
        }
    }

    const json& jp = require(doc, "pi0_factors");
    if (!jp.is_array() || static_cast<Index>(jp.size()) != k)
        fail("/pi0_factors", "expected " + std::to_string(k) + " vectors");
    for (Index i = 0; i < k; ++i) {
        const std::string f = at("/pi0_factors", i);
        if (!jp[i].is_array() || static_cast<Index>(jp[i].size()) != m.state_counts[i])
            fail(f, "expected length " + std::to_string(m.state_counts[i]));
        Vector p(m.state_counts[i]);
        for (Index s = 0; s < p.size(); ++s)
            p[s] = read_number(jp[i][s], at(f, s));
        m.pi0_factors.push_back(std::move(p));
    }

    m.topology = Topology::Identity(k, k);
    if (auto it = doc.find("topology"); it != doc.end()) {
        if (!it->is_array() || static_cast<Index>(it->size()) != k)
            fail("/topology", "expected " + std::to_string(k) + " rows");
        for (Index r = 0; r < k; ++r) {
            const json& row = (*it)[r];
            if (!row.is_array() || static_cast<Index>(row.size()) != k)
                fail(at("/topology", r), "expected " + std::to_string(k) + " columns");
            for (Index c = 0; c < k; ++c) {
                if (!row[c].is_number_integer())
                    fail(at(at("/topology", r), c), "expected 0 or 1");
                m.topology(r, c) = row[c].get<int>();
            }
        }
    }

    validate(m);
    return m;
}

std::string model_to_json(const SanModel& m)
{
    json doc;
    doc["k"] = m.k();
    doc["state_counts"] = m.state_counts;
    doc["local"] = json::array();
    for (const auto& r : m.local)
        doc["local"].push_back(matrix_json(r));
    doc["syncs"] = json::array();
    for (const auto& s : m.syncs) {
        json js;
        js["rate"] = s.rate;
        js["factors"] = json::array();
        for (const auto& f : s.factors)
            js["factors"].push_back(is_identity(f) ? json("I") : matrix_json(f));
        doc["syncs"].push_back(std::move(js));
    }
    doc["pi0_factors"] = json::array();
    for (const auto& p : m.pi0_factors)
        doc["pi0_factors"].push_back(std::vector<double>(p.data(), p.data() + p.size()));
    json topo = json::array();
    for (Index r = 0; r < m.topology.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.topology.cols(); ++c)
            row.push_back(m.topology(r, c));
        topo.push_back(std::move(row));
    }
    doc["topology"] = std::move(topo);
    return doc.dump(2) + "\n";
}

SanModel load_model(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ModelError("cannot open model file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return model_from_json(buf.str());
    } catch (const ModelError& e) {
        throw ModelError(path.string() + ": " + e.what());
    }
}

void save_model(const SanModel& model, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw UsageError("cannot write " + path.string());
    out << model_to_json(model);
    if (!out)
        throw UsageError("failed writing " + path.string());
}

// Ordering ---------------------------------------------------------------------

SanModel permute_model(const SanModel& model, const std::vector<Index>& perm)
{
    const Index k = model.k();
    std::vector<bool> seen(static_cast<std::size_t>(k), false);
    if (static_cast<Index>(perm.size()) != k)
        throw UsageError("permutation length does not match the automaton count");
    for (Index p : perm) {
        if (p < 0 || p >= k || seen[p])
            throw UsageError("not a permutation");
        seen[p] = true;
    }
    SanModel out;
    out.topology.resize(k, k);
    for (Index p = 0; p < k; ++p) {
        out.state_counts.push_back(model.state_counts[perm[p]]);
        out.local.push_back(model.local[perm[p]]);
        out.pi0_factors.push_back(model.pi0_factors[perm[p]]);
        for (Index q = 0; q < k; ++q)
            out.topology(p, q) = model.topology(perm[p], perm[q]);
    }
    for (const auto& s : model.syncs) {
        SyncTransition t;
        t.rate = s.rate;
        for (Index p = 0; p < k; ++p)
            t.factors.push_back(s.factors[perm[p]]);
        out.syncs.push_back(std::move(t));
    }
    return out;
}

namespace {

std::vector<std::vector<Index>> symmetric_adjacency(const Topology& t)
{
    const Index k = t.rows();
    std::vector<std::vector<Index>> adj(static_cast<std::size_t>(k));
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j)
            if (i != j && (t(i, j) != 0 || t(j, i) != 0))
                adj[i].push_back(j);
    return adj;
}

// BFS level structure from `root`; returns the last level.
std::vector<Index> last_level(const std::vector<std::vector<Index>>& adj, Index root, Index& depth)
{
    std::vector<Index> level{root}, next;
    std::vector<bool> seen(adj.size(), false);
    seen[root] = true;
    depth = 0;
    while (true) {
        next.clear();
        for (Index v : level)
            for (Index w : adj[v])
                if (!seen[w]) {
                    seen[w] = true;
                    next.push_back(w);
                }
        if (next.empty())
            return level;
        level.swap(next);
        ++depth;
    }
}

} // namespace

std::vector<Index> rcm_order(const Topology& topology)
{
    if (topology.rows() != topology.cols())
        throw UsageError("rcm_order: topology must be square");
    const Index k = topology.rows();
    const auto adj = symmetric_adjacency(topology);
    auto degree = [&](Index v) { return static_cast<Index>(adj[v].size()); };
    auto by_degree = [&](Index a, Index b) { return degree(a) != degree(b) ? degree(a) < degree(b) : a < b; };

    std::vector<bool> placed(static_cast<std::size_t>(k), false);
    std::vector<Index> order;
    for (Index seed = 0; seed < k; ++seed) {
        if (placed[seed])
            continue;
        // Collect the component and pick a minimum-degree starting node.
        std::vector<Index> comp{seed};
        std::vector<bool> in_comp(static_cast<std::size_t>(k), false);
        in_comp[seed] = true;
        for (std::size_t h = 0; h < comp.size(); ++h)
            for (Index w : adj[comp[h]])
                if (!in_comp[w]) {
                    in_comp[w] = true;
                    comp.push_back(w);
                }
        Index root = *std::min_element(comp.begin(), comp.end(), by_degree);

        // Pseudo-peripheral node search.
        Index depth = 0;
        auto far = last_level(adj, root, depth);
        while (true) {
            const Index cand = *std::min_element(far.begin(), far.end(), by_degree);
            Index cand_depth = 0;
            auto cand_far = last_level(adj, cand, cand_depth);
            if (cand_depth <= depth)
                break;
            root = cand;
            depth = cand_depth;
            far = std::move(cand_far);
        }

        std::vector<Index> cm{root};
        placed[root] = true;
        for (std::size_t h = 0; h < cm.size(); ++h) {
            std::vector<Index> nbrs;
            for (Index w : adj[cm[h]])
                if (!placed[w])
                    nbrs.push_back(w);
            std::sort(nbrs.begin(), nbrs.end(), by_degree);
            for (Index w : nbrs) {
                placed[w] = true;
                cm.push_back(w);
            }
        }
        order.insert(order.end(), cm.rbegin(), cm.rend());
    }
    return order;
}

Index topology_bandwidth(const Topology& topology, const std::vector<Index>& perm)
{
    const Index k = topology.rows();
    std::vector<Index> pos(static_cast<std::size_t>(k));
    for (Index p = 0; p < k; ++p)
        pos[perm[p]] = p;
    Index bw = 0;
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j)
            if (i != j && topology(i, j) != 0)
                bw = std::max(bw, std::abs(pos[i] - pos[j]));
    return bw;
}

// Descriptor and splitting -------------------------------------------------------

double exit_rate_bound(const SanModel& model)
{
    double bound = 0.0;
    for (const auto& r : model.local)
        bound += max_row_sum(r);
    for (const auto& s : model.syncs) {
        double prod = s.rate;
        for (const auto& f : s.factors)
            prod *= max_row_sum(f);
        bound += prod;
    }
    return bound;
}

Descriptor build_descriptor(const SanModel& model, const RoundingPolicy& policy)
{
    validate(model);
    Descriptor d;
    d.R = KronSumOperator{model.local};
    for (const auto& s : model.syncs)
        d.W_terms.push_back(KronTerm{s.rate, s.factors});
    d.delta_bound = exit_rate_bound(model);

    const auto& n = model.state_counts;
    const TTVector ones = tt_ones(n);
    const TTMatrix r = d.R.to_ttm();
    TTVector exits = ttm_apply(r, ones);
    TTMatrix generator = r;
    if (!d.W_terms.empty()) {
        const TTMatrix w = ttm_round(ttm_from_kron_terms(d.W_terms), policy);
        exits = tt_add(exits, ttm_apply(w, ones));
        generator = ttm_add(generator, w);
    }
    d.d = tt_round(exits, policy);
    d.Q = ttm_round(ttm_add(generator, ttm_scale(tt_diag(d.d), -1.0)), policy);
    return d;
}

GammaChoice GammaChoice::parse(const std::string& text)
{
    GammaChoice g;
    auto number = [&](const std::string& s) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != s.size() || s.empty() || !std::isfinite(v))
            throw UsageError("invalid gamma specification '" + text + "'");
        return v;
    };
    if (text == "min") {
        g.kind = Kind::minimal;
    } else if (text.rfind("scale:", 0) == 0) {
        g.kind = Kind::scaled;
        g.parameter = number(text.substr(6));
        if (!(g.parameter > 1.0))
            throw UsageError("gamma scale factor must exceed 1");
    } else if (text.rfind("value:", 0) == 0) {
        g.kind = Kind::value;
        g.parameter = number(text.substr(6));
        if (!(g.parameter > 0.0))
            throw UsageError("gamma value must be positive");
    } else {
        throw UsageError("gamma must be 'min', 'scale:<c>' or 'value:<v>', got '" + text + "'");
    }
    return g;
}

std::string GammaChoice::to_string() const
{
    std::ostringstream s;
    s.precision(17);
    switch (kind) {
    case Kind::minimal:
        return "min";
    case Kind::scaled:
        s << "scale:" << parameter;
        return s.str();
    case Kind::value:
        s << "value:" << parameter;
        return s.str();
    }
    return "min";
}

double default_gamma(const Descriptor& descriptor, const GammaChoice& choice)
{
    switch (choice.kind) {
    case GammaChoice::Kind::minimal:
        return descriptor.delta_bound;
    case GammaChoice::Kind::scaled:
        if (!(choice.parameter > 1.0))
            throw UsageError("gamma scale factor must exceed 1");
        return choice.parameter * descriptor.delta_bound;
    case GammaChoice::Kind::value:
        return choice.parameter;
    }
    return descriptor.delta_bound;
}

KronSumOperator Splitting::negated_Q1() const
{
    KronSumOperator neg;
    for (const auto& f : Q1.factors)
        neg.factors.push_back(-f);
    return neg;
}

Splitting build_splitting(const SanModel& model, const Descriptor& descriptor, double gamma,
                          const RoundingPolicy& policy)
{
    if (!std::isfinite(gamma) || gamma < descriptor.delta_bound * (1.0 - 1e-12) || !(gamma > 0.0)) {
        std::ostringstream msg;
        msg << "gamma " << gamma << " is below the exit-rate bound " << descriptor.delta_bound;
        throw UsageError(msg.str());
    }
    const Index k = model.k();
    const auto& n = model.state_counts;
    Splitting s;
    s.gamma = gamma;
    for (Index i = 0; i < k; ++i)
        s.Q1.factors.push_back(model.local[i] - (gamma / double(k)) * Matrix::Identity(n[i], n[i]));

    TTMatrix a2 = ttm_add(ttm_scale(tt_diag(descriptor.d), -1.0), ttm_scale(ttm_identity(n), gamma));
    if (!descriptor.W_terms.empty())
        a2 = ttm_add(ttm_from_kron_terms(descriptor.W_terms), a2);
    s.A2 = ttm_round(a2, policy);

    const auto last = model.absorbing_index();
    s.eN = tt_basis(n, last);
    s.q = tt_round(tt_add(ttm_apply(descriptor.R.to_ttm(), s.eN), ttm_apply(s.A2, s.eN)), policy);
    return s;
}

} // namespace mtta
