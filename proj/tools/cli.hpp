#pragma once

#include "mtta/case_study.hpp"
#include "mtta/solver.hpp"

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mtta::cli {

inline constexpr const char* kRecordSchema = "mtta-run/1";

struct SolveOptions {
    std::string algorithm = "squared";
    std::string gamma = "min";
    double tol = 1e-8;
    double exp_sum_eps = 1e-12;
    double rounding_tol = 1e-12;
    std::optional<Index> max_rank;
    Index max_iter = 100'000;
    bool no_rcm = false;
    std::string report_path;
};

SolverConfig make_config(const SolveOptions& opts);

struct GenOptions {
    Index k = 1;
    std::uint64_t seed = 0;
    std::optional<double> density;
    bool figure1 = false;
    std::string topology; // rows separated by ';', entries by ',' or blanks
    std::string out;      // stdout when empty
};

struct BenchOptions {
    std::vector<Index> ks;
    Index runs = 5;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
    SolveOptions solve;
    std::string table_path; // stdout when empty
};

struct PowerFit {
    double exponent = 0.0;
    double intercept = 0.0;
    /// Root mean square of the residuals of log(time).
    double residual = 0.0;
    std::size_t points = 0;
};

/// Least squares on log(time) = intercept + exponent * log(k).
PowerFit fit_power_law(const std::vector<double>& ks, const std::vector<double>& times);

Topology parse_topology(const std::string& text);
std::string format_mtta(double value);

nlohmann::json config_to_json(const SolverConfig& cfg);
nlohmann::json report_to_json(const SolveReport& rep);
SolveReport report_from_json(const nlohmann::json& j);

/// Throws UsageError naming the first field that does not match the schema.
void validate_run_record(const nlohmann::json& record);

/// 0 success, 1 usage, 2 model/input, 3 numerical.
int exit_code_for(const std::exception& e);

int cmd_solve(const std::string& model_path, const SolveOptions& opts, std::ostream& out);
int cmd_oracle(const std::string& model_path, const std::string& report_path, std::ostream& out);
int cmd_gen(const GenOptions& opts, std::ostream& out);
int cmd_bench(const BenchOptions& opts, std::ostream& out);

} // namespace mtta::cli
