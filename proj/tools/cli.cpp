#include "cli.hpp"

#include "mtta/errors.hpp"
#include "mtta/oracle.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

namespace mtta::cli {

using nlohmann::json;

namespace {

constexpr Index kUnbounded = std::numeric_limits<Index>::max();

void write_text(const std::string& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw UsageError("cannot write " + path);
    f << text;
    if (!f)
        throw UsageError("failed writing " + path);
}

void write_json(const std::string& path, const json& j)
{
    write_text(path, j.dump(2) + "\n");
}

json make_record(const std::string& command, const json& model, const SolverConfig* cfg, const SolveReport* rep,
                 int status, const std::string& error)
{
    json r;
    r["schema"] = kRecordSchema;
    r["command"] = command;
    r["model"] = model;
    r["config"] = cfg ? config_to_json(*cfg) : json(nullptr);
    r["report"] = rep ? report_to_json(*rep) : json(nullptr);
    r["peak_memory_bytes"] = rep ? rep->peak_memory_bytes : 0;
    r["exit_status"] = status;
    if (!error.empty())
        r["error"] = error;
    return r;
}

template <class T>
T get_field(const json& j, const char* key)
{
    if (!j.contains(key))
        throw UsageError(std::string("run record: missing field '") + key + "'");
    return j.at(key).get<T>();
}

void require(bool ok, const std::string& field, const char* what)
{
    if (!ok)
        throw UsageError("run record: field '" + field + "' " + what);
}

bool is_number_array(const json& j)
{
    return j.is_array() && std::all_of(j.begin(), j.end(), [](const json& x) { return x.is_number(); });
}

bool is_integer_array(const json& j)
{
    return j.is_array() && std::all_of(j.begin(), j.end(), [](const json& x) { return x.is_number_integer(); });
}

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep))
        out.push_back(cur);
    return out;
}

struct BenchRun {
    Index k = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    double time = 0.0;
    std::size_t memory = 0;
    Index rank = 0;
    std::string error;
};

template <class T>
double mean_of(const std::vector<T>& v)
{
    double s = 0.0;
    for (const T& x : v)
        s += static_cast<double>(x);
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

template <class T>
T max_of(const std::vector<T>& v)
{
    return v.empty() ? T{} : *std::max_element(v.begin(), v.end());
}

} // namespace

SolverConfig make_config(const SolveOptions& opts)
{
    SolverConfig c;
    c.algorithm = parse_algorithm(opts.algorithm);
    c.gamma = GammaChoice::parse(opts.gamma);
    c.stop_tol = opts.tol;
    c.exp_sum_eps = opts.exp_sum_eps;
    c.rounding.rel_tolerance = opts.rounding_tol;
    if (opts.max_rank) {
        if (*opts.max_rank < 1)
            throw UsageError("--max-rank must be positive");
        c.rounding.max_rank = *opts.max_rank;
    }
    c.max_iter = opts.max_iter;
    c.use_rcm = !opts.no_rcm;
    c.validate();
    return c;
}

PowerFit fit_power_law(const std::vector<double>& ks, const std::vector<double>& times)
{
    PowerFit fit;
    std::vector<double> x, y;
    for (std::size_t i = 0; i < ks.size() && i < times.size(); ++i)
        if (ks[i] > 0 && times[i] > 0) {
            x.push_back(std::log(ks[i]));
            y.push_back(std::log(times[i]));
        }
    fit.points = x.size();
    if (x.size() < 2)
        return fit;
    const double mx = mean_of(x), my = mean_of(y);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0)
        return fit;
    fit.exponent = sxy / sxx;
    fit.intercept = my - fit.exponent * mx;
    double ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - fit.intercept - fit.exponent * x[i];
        ss += r * r;
    }
    fit.residual = std::sqrt(ss / static_cast<double>(x.size()));
    return fit;
}

Topology parse_topology(const std::string& text)
{
    std::vector<std::vector<int>> rows;
    for (std::string row : split(text, ';')) {
        std::replace(row.begin(), row.end(), ',', ' ');
        std::istringstream in(row);
        std::vector<int> vals;
        std::string tok;
        while (in >> tok) {
            if (tok != "0" && tok != "1")
                throw UsageError("--topology entries must be 0 or 1, got '" + tok + "'");
            vals.push_back(tok == "1");
        }
        if (!vals.empty())
            rows.push_back(std::move(vals));
    }
    const Index k = static_cast<Index>(rows.size());
    if (k == 0)
        throw UsageError("--topology is empty");
    Topology t(k, k);
    for (Index i = 0; i < k; ++i) {
        if (static_cast<Index>(rows[i].size()) != k)
            throw UsageError("--topology must be square; row " + std::to_string(i + 1) + " has " +
                             std::to_string(rows[i].size()) + " entries");
        for (Index j = 0; j < k; ++j)
            t(i, j) = rows[i][j];
        if (t(i, i) != 1)
            throw UsageError("--topology diagonal entries must be 1");
    }
    return t;
}

std::string format_mtta(double value)
{
    std::ostringstream s;
    s << std::setprecision(12) << value;
    return s.str();
}

json config_to_json(const SolverConfig& c)
{
    return {
        {"algorithm", to_string(c.algorithm)},
        {"gamma", c.gamma.to_string()},
        {"exp_sum_eps", c.exp_sum_eps},
        {"rel_tolerance", c.rounding.rel_tolerance},
        {"max_rank", c.rounding.max_rank == kUnbounded ? json(nullptr) : json(c.rounding.max_rank)},
        {"inverse_tolerance", c.inverse_tolerance},
        {"max_iter", c.max_iter},
        {"stop_tol", c.stop_tol},
        {"reward_shift", c.reward_shift},
        {"use_rcm", c.use_rcm},
    };
}

json report_to_json(const SolveReport& r)
{
    return {
        {"algorithm", to_string(r.algorithm)},
        {"mtta", r.mtta},
        {"iterations", r.iterations},
        {"converged", r.converged},
        {"measure_history", r.measure_history},
        {"max_rank_history", r.max_rank_history},
        {"residual_estimate", r.residual_estimate},
        {"wall_time", r.wall_time},
        {"gamma", r.gamma},
        {"spectrum", {r.spectrum_lower, r.spectrum_upper}},
        {"exp_sum_terms", r.exp_sum_terms},
        {"inverse_max_rank", r.inverse_max_rank},
        {"peak_memory_bytes", r.peak_memory_bytes},
        {"permutation", r.permutation},
    };
}

SolveReport report_from_json(const json& j)
{
    SolveReport r;
    r.algorithm = parse_algorithm(get_field<std::string>(j, "algorithm"));
    r.mtta = get_field<double>(j, "mtta");
    r.iterations = get_field<Index>(j, "iterations");
    r.converged = get_field<bool>(j, "converged");
    r.measure_history = get_field<std::vector<double>>(j, "measure_history");
    r.max_rank_history = get_field<std::vector<Index>>(j, "max_rank_history");
    r.residual_estimate = get_field<double>(j, "residual_estimate");
    r.wall_time = get_field<double>(j, "wall_time");
    r.gamma = get_field<double>(j, "gamma");
    const auto spectrum = get_field<std::vector<double>>(j, "spectrum");
    if (spectrum.size() != 2)
        throw UsageError("run record: spectrum must have two entries");
    r.spectrum_lower = spectrum[0];
    r.spectrum_upper = spectrum[1];
    r.exp_sum_terms = get_field<std::size_t>(j, "exp_sum_terms");
    r.inverse_max_rank = get_field<Index>(j, "inverse_max_rank");
    r.peak_memory_bytes = get_field<std::size_t>(j, "peak_memory_bytes");
    r.permutation = get_field<std::vector<Index>>(j, "permutation");
    return r;
}

void validate_run_record(const json& rec)
{
    require(rec.is_object(), "/", "must be an object");
    require(rec.value("schema", "") == kRecordSchema, "schema", "must be \"mtta-run/1\"");
    const std::string command = rec.value("command", "");
    require(command == "solve" || command == "oracle", "command", "must be solve or oracle");
    require(rec.contains("model") && rec["model"].is_object(), "model", "must be an object");
    require(rec.contains("exit_status") && rec["exit_status"].is_number_integer(), "exit_status",
            "must be an integer");
    const int status = rec["exit_status"].get<int>();
    require(status >= 0 && status <= 3, "exit_status", "must be 0..3");
    require(status == 0 || (rec.contains("error") && rec["error"].is_string()), "error",
            "must describe a failed run");
    require(rec.contains("peak_memory_bytes") && rec["peak_memory_bytes"].is_number_integer() &&
                rec["peak_memory_bytes"].get<std::int64_t>() >= 0, "peak_memory_bytes",
            "must be a nonnegative integer");

    require(rec.contains("config"), "config", "is missing");
    const json& cfg = rec["config"];
    if (!cfg.is_null()) {
        require(cfg.is_object(), "config", "must be an object or null");
        for (const char* key : {"exp_sum_eps", "rel_tolerance", "inverse_tolerance", "stop_tol", "reward_shift"})
            require(cfg.contains(key) && cfg[key].is_number(), std::string("config/") + key, "must be a number");
        require(cfg.contains("max_iter") && cfg["max_iter"].is_number_integer(), "config/max_iter",
                "must be an integer");
        require(cfg.contains("max_rank") && (cfg["max_rank"].is_null() || cfg["max_rank"].is_number_integer()),
                "config/max_rank", "must be an integer or null");
        require(cfg.contains("use_rcm") && cfg["use_rcm"].is_boolean(), "config/use_rcm", "must be a boolean");
        require(cfg.contains("algorithm") && cfg["algorithm"].is_string(), "config/algorithm", "must be a string");
        require(cfg.contains("gamma") && cfg["gamma"].is_string(), "config/gamma", "must be a string");
    }

    require(rec.contains("report"), "report", "is missing");
    const json& rep = rec["report"];
    if (rep.is_null()) {
        require(status != 0 || command == "oracle", "report", "is required for a successful solve");
        return;
    }
    require(rep.is_object(), "report", "must be an object or null");
    for (const char* key : {"mtta", "residual_estimate", "wall_time", "gamma"})
        require(rep.contains(key) && rep[key].is_number(), std::string("report/") + key, "must be a number");
    for (const char* key : {"iterations", "exp_sum_terms", "inverse_max_rank", "peak_memory_bytes"})
        require(rep.contains(key) && rep[key].is_number_integer(), std::string("report/") + key,
                "must be an integer");
    require(rep.contains("converged") && rep["converged"].is_boolean(), "report/converged", "must be a boolean");
    require(rep.contains("measure_history") && is_number_array(rep["measure_history"]), "report/measure_history",
            "must be an array of numbers");
    require(rep.contains("max_rank_history") && is_integer_array(rep["max_rank_history"]),
            "report/max_rank_history", "must be an array of integers");
    require(rep["measure_history"].size() == rep["max_rank_history"].size(), "report/max_rank_history",
            "must match measure_history in length");
    require(rep.contains("spectrum") && is_number_array(rep["spectrum"]) && rep["spectrum"].size() == 2,
            "report/spectrum", "must be two numbers");
    require(rep.contains("permutation") && is_integer_array(rep["permutation"]), "report/permutation",
            "must be an array of integers");
    report_from_json(rep);
}

int exit_code_for(const std::exception& e)
{
    if (dynamic_cast<const UsageError*>(&e))
        return 1;
    if (dynamic_cast<const ModelError*>(&e))
        return 2;
    return 3;
}

int cmd_solve(const std::string& model_path, const SolveOptions& opts, std::ostream& out)
{
    const json model_ref = {{"path", model_path}};
    std::optional<SolverConfig> cfg;
    try {
        cfg = make_config(opts);
        const SanModel model = load_model(model_path);
        const SolveReport rep = compute_mtta(model, *cfg);
        out << "mtta " << format_mtta(rep.mtta) << "\n"
            << "algorithm " << to_string(rep.algorithm) << "\n"
            << "iterations " << rep.iterations << "\n"
            << "converged " << (rep.converged ? "true" : "false") << "\n"
            << "gamma " << format_mtta(rep.gamma) << "\n"
            << "max_rank " << max_of(rep.max_rank_history) << "\n"
            << "peak_memory_bytes " << rep.peak_memory_bytes << "\n"
            << "wall_time " << std::setprecision(3) << rep.wall_time << "\n";
        if (!opts.report_path.empty())
            write_json(opts.report_path, make_record("solve", model_ref, &*cfg, &rep, 0, ""));
        return 0;
    } catch (const std::exception& e) {
        if (!opts.report_path.empty()) {
            try {
                write_json(opts.report_path,
                           make_record("solve", model_ref, cfg ? &*cfg : nullptr, nullptr, exit_code_for(e), e.what()));
            } catch (const std::exception&) {
                // the original error is more useful than the write failure
            }
        }
        throw;
    }
}

int cmd_oracle(const std::string& model_path, const std::string& report_path, std::ostream& out)
{
    const SanModel model = load_model(model_path);
    const DenseChain chain = dense_generator(model);
    const double mtta = dense_mtta(chain);
    const double gamma = default_gamma(build_descriptor(model), GammaChoice{});
    const ContractionReport c = dense_contraction_checks(model, gamma);
    const SplittingPremises& p = c.premises;
    out << "mtta " << format_mtta(mtta) << "\n"
        << "gamma " << format_mtta(gamma) << "\n"
        << "rho " << format_mtta(c.rho) << "\n"
        << "norm_inf " << format_mtta(c.norm_inf) << "\n"
        << "min_a2_last_column " << format_mtta(c.min_a2_last_column) << "\n";
    const std::pair<const char*, bool> flags[] = {
        {"d_nonpositive", p.d_nonpositive},
        {"a1_nonnegative", p.a1_nonnegative},
        {"a2_nonnegative", p.a2_nonnegative},
        {"last_row_zero", p.last_row_zero},
        {"a1_last_row_zero", p.a1_last_row_zero},
        {"zero_row_sums", p.zero_row_sums},
        {"inverse_nonpositive", p.inverse_nonpositive},
        {"a2_last_column_positive", p.a2_last_column_positive},
    };
    json premises;
    for (const auto& [name, ok] : flags) {
        out << "premise " << name << " " << (ok ? "true" : "false") << "\n";
        premises[name] = ok;
    }
    if (!report_path.empty()) {
        json rec = make_record("oracle", {{"path", model_path}}, nullptr, nullptr, 0, "");
        rec["oracle"] = {{"mtta", mtta},       {"gamma", gamma},     {"rho", c.rho},
                         {"norm_inf", c.norm_inf}, {"premises", premises}};
        write_json(report_path, rec);
    }
    return 0;
}

int cmd_gen(const GenOptions& opts, std::ostream& out)
{
    const int modes = int(opts.figure1) + int(!opts.topology.empty());
    if (modes > 1)
        throw UsageError("--figure1 and --topology are mutually exclusive");
    Topology t;
    if (opts.figure1)
        t = figure1_topology();
    else if (!opts.topology.empty())
        t = parse_topology(opts.topology);
    else {
        if (opts.k < 1)
            throw UsageError("--k must be at least 1");
        const double density = opts.density.value_or(default_density(opts.k));
        if (!(density >= 0.0 && density <= 1.0))
            throw UsageError("--density must lie in [0, 1]");
        t = random_topology(opts.k, opts.seed, density);
    }
    const std::string text = model_to_json(generate_case_study(t));
    if (opts.out.empty())
        out << text;
    else
        write_text(opts.out, text);
    return 0;
}

int cmd_bench(const BenchOptions& opts, std::ostream& out)
{
    if (opts.runs < 0)
        throw UsageError("--runs must be nonnegative");
    for (Index k : opts.ks)
        if (k < 1)
            throw UsageError("--k entries must be positive");
    const SolverConfig cfg = make_config(opts.solve);

    std::vector<BenchRun> runs;
    for (Index k : opts.ks)
        for (Index r = 0; r < opts.runs; ++r)
        {
            BenchRun run;
            run.k = k;
            run.seed = opts.seed + static_cast<std::uint64_t>(r);
            runs.push_back(run);
        }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < runs.size(); i = next++) {
            BenchRun& run = runs[i];
            try {
                const SanModel m = generate_case_study(CaseStudyParams{run.k, run.seed, {}});
                const SolveReport rep = compute_mtta(m, cfg);
                run.time = rep.wall_time;
                run.memory = rep.peak_memory_bytes;
                run.rank = max_of(rep.max_rank_history);
                run.ok = true;
            } catch (const std::exception& e) {
                run.error = e.what();
            }
        }
    };
    const unsigned jobs = std::max(1u, opts.jobs);
    std::vector<std::thread> pool;
    for (unsigned j = 1; j < jobs; ++j)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();

    std::ostringstream table;
    table << "k,runs,failures,mean_time_s,max_time_s,mean_memory_bytes,max_memory_bytes,mean_max_rank,max_max_rank\n";
    std::vector<double> fit_k, fit_t;
    std::vector<std::string> failures;
    for (Index k : opts.ks) {
        std::vector<double> times;
        std::vector<std::size_t> mem;
        std::vector<Index> ranks;
        Index failed = 0;
        for (const BenchRun& r : runs) {
            if (r.k != k)
                continue;
            if (!r.ok) {
                ++failed;
                failures.push_back("k=" + std::to_string(r.k) + " seed=" + std::to_string(r.seed) + ": " + r.error);
                continue;
            }
            times.push_back(r.time);
            mem.push_back(r.memory);
            ranks.push_back(r.rank);
        }
        if (opts.runs == 0)
            continue;
        table << k << "," << opts.runs << "," << failed << "," << std::setprecision(6) << mean_of(times) << ","
              << max_of(times) << "," << mean_of(mem) << "," << max_of(mem) << "," << mean_of(ranks) << ","
              << max_of(ranks) << "\n";
        if (!times.empty()) {
            fit_k.push_back(static_cast<double>(k));
            fit_t.push_back(mean_of(times));
        }
    }
    if (opts.table_path.empty())
        out << table.str();
    else
        write_text(opts.table_path, table.str());

    for (const auto& f : failures)
        out << "# failed " << f << "\n";
    const PowerFit fit = fit_power_law(fit_k, fit_t);
    if (fit.points >= 2)
        out << "# fit mean_time ~ k^p: p=" << std::setprecision(4) << fit.exponent << " residual=" << fit.residual
            << " points=" << fit.points << "\n";
    else
        out << "# fit mean_time ~ k^p: not enough points\n";
    return 0;
}

} // namespace mtta::cli
