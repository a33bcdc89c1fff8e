#include "cli.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace mtta;

namespace {

void add_solver_flags(CLI::App* app, cli::SolveOptions& o)
{
    app->add_option("--algorithm", o.algorithm, "linear, squared or transpose")
        ->check(CLI::IsMember({"linear", "squared", "transpose"}));
    app->add_option("--gamma", o.gamma, "min, scale:<c> or value:<v>");
    app->add_option("--tol", o.tol, "stopping tolerance");
    app->add_option("--exp-sum-eps", o.exp_sum_eps, "exponential sum accuracy");
    app->add_option("--rounding-tol", o.rounding_tol, "relative TT rounding tolerance");
    app->add_option("--max-rank", o.max_rank, "TT rank cap");
    app->add_option("--max-iter", o.max_iter, "iteration limit");
    app->add_flag("--no-rcm", o.no_rcm, "keep the automaton order of the model file");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Mean time to absorption of stochastic automata networks"};
    app.require_subcommand(1);

    std::string model_path;
    cli::SolveOptions solve;
    auto* solve_cmd = app.add_subcommand("solve", "compute the MTTA of a model file");
    solve_cmd->add_option("model", model_path, "model file")->required();
    add_solver_flags(solve_cmd, solve);
    solve_cmd->add_option("--report", solve.report_path, "write a JSON run record");

    std::string oracle_path, oracle_report;
    auto* oracle_cmd = app.add_subcommand("oracle", "dense reference MTTA and splitting checks");
    oracle_cmd->add_option("model", oracle_path, "model file")->required();
    oracle_cmd->add_option("--report", oracle_report, "write a JSON run record");

    cli::GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen", "write a case-study model");
    gen_cmd->add_option("--k", gen.k, "number of components");
    gen_cmd->add_option("--seed", gen.seed, "topology seed");
    gen_cmd->add_option("--density", gen.density, "off-diagonal edge probability (default 1/(2k))");
    gen_cmd->add_flag("--figure1", gen.figure1, "use the fixed four-component topology");
    gen_cmd->add_option("--topology", gen.topology, "explicit topology, e.g. \"1,1;0,1\"");
    gen_cmd->add_option("--out", gen.out, "output file (stdout by default)");

    cli::BenchOptions bench;
    auto* bench_cmd = app.add_subcommand("bench", "timing sweep over random topologies");
    bench_cmd->add_option("--k", bench.ks, "component counts")->required()->delimiter(',');
    bench_cmd->add_option("--runs", bench.runs, "runs per k");
    bench_cmd->add_option("--seed", bench.seed, "first seed");
    bench_cmd->add_option("--jobs", bench.jobs, "parallel runs");
    bench_cmd->add_option("--table", bench.table_path, "write the table to a file");
    add_solver_flags(bench_cmd, bench.solve);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*solve_cmd)
            return cli::cmd_solve(model_path, solve, std::cout);
        if (*oracle_cmd)
            return cli::cmd_oracle(oracle_path, oracle_report, std::cout);
        if (*gen_cmd)
            return cli::cmd_gen(gen, std::cout);
        return cli::cmd_bench(bench, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cli::exit_code_for(e);
    }
}
