// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [--only 1,2,...]

#include "mtta/case_study.hpp"
#include "mtta/kron_ops.hpp"
#include "mtta/oracle.hpp"
#include "mtta/solver.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <poll.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace mtta;

namespace {

constexpr int kSeedsPerK = 100;
constexpr Index kMaxK = 6;
constexpr double kOracleTol = 1e-6;
constexpr double kStopTol = 1e-8;
constexpr double kBudgetSeconds = 1800.0;
constexpr double kMemoryBudget = 2.0 * 1024 * 1024 * 1024;

constexpr Algorithm kAlgorithms[] = {Algorithm::linear, Algorithm::squared, Algorithm::transpose};

double rel(double a, double b)
{
    return std::abs(a - b) / std::abs(b);
}

SolverConfig config(Algorithm a)
{
    SolverConfig c;
    c.algorithm = a;
    c.stop_tol = kStopTol;
    return c;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body)
{
    const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++)
                body(i);
        });
    for (auto& t : pool)
        t.join();
}

struct Instance {
    Index k = 0;
    std::uint64_t seed = 0;
    SanModel model;
    double reference = 0.0;
    SolveReport runs[3];
    std::string error;
};

std::vector<Instance> make_instances()
{
    std::vector<Instance> out;
    for (Index k = 1; k <= kMaxK; ++k)
        for (int s = 0; s < kSeedsPerK; ++s) {
            Instance inst;
            inst.k = k;
            inst.seed = static_cast<std::uint64_t>(s);
            inst.model = generate_case_study(CaseStudyParams{k, inst.seed, std::nullopt});
            out.push_back(std::move(inst));
        }
    return out;
}

std::string where(const Instance& inst)
{
    return "k=" + std::to_string(inst.k) + " seed=" + std::to_string(inst.seed);
}

class Suite {
public:
    explicit Suite(std::set<int> only) : only_(std::move(only)) {}

    bool wants(int c) const { return only_.empty() || only_.count(c); }

    void report(int c, bool pass, const std::string& detail)
    {
        std::string line = std::string(pass ? "PASS" : "FAIL") + " criterion " + std::to_string(c) + ": " + detail;
        std::cerr << line << std::endl;
        lines_.emplace_back(c, std::move(line));
        failed_ = failed_ || !pass;
    }

    // Final summary in criterion order.
    void print() const
    {
        auto sorted = lines_;
        std::sort(sorted.begin(), sorted.end());
        std::cout << "\n";
        for (const auto& [c, line] : sorted)
            std::cout << line << "\n";
        std::cout << std::flush;
    }

    bool failed() const { return failed_; }

private:
    std::set<int> only_;
    std::vector<std::pair<int, std::string>> lines_;
    bool failed_ = false;
};

// Criterion 1 runs, shared with 5.
std::vector<Instance>& solved_instances()
{
    static std::vector<Instance> instances = [] {
        std::vector<Instance> v = make_instances();
        std::mutex m;
        std::size_t done = 0;
        const auto start = std::chrono::steady_clock::now();
        parallel_for(v.size(), [&](std::size_t i) {
            Instance& inst = v[i];
            try {
                inst.reference = dense_mtta(dense_generator(inst.model));
                for (int a = 0; a < 3; ++a)
                    inst.runs[a] = compute_mtta(inst.model, config(kAlgorithms[a]));
            } catch (const std::exception& e) {
                inst.error = e.what();
            }
            std::lock_guard lock(m);
            if (++done % kSeedsPerK == 0) {
                const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                std::cerr << "  solved " << done << "/" << v.size() << " instances (" << t << " s)\n";
            }
        });
        return v;
    }();
    return instances;
}

void criterion1(Suite& suite)
{
    const auto start = std::chrono::steady_clock::now();
    auto& inst = solved_instances();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    double worst = 0.0;
    std::string worst_at, failure;
    for (const Instance& in : inst) {
        if (!in.error.empty()) {
            failure = where(in) + ": " + in.error;
            break;
        }
        for (int a = 0; a < 3; ++a) {
            const double e = rel(in.runs[a].mtta, in.reference);
            if (!(e <= worst)) {
                worst = e;
                worst_at = where(in) + " " + to_string(kAlgorithms[a]);
            }
        }
    }
    std::ostringstream d;
    d << inst.size() << " instances x 3 algorithms, max relative error " << worst << " (" << worst_at
      << ", tol " << kOracleTol << "), " << secs << " s";
    if (!failure.empty())
        d << "; error at " << failure;
    suite.report(1, failure.empty() && worst <= kOracleTol, d.str());
}

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

void criterion2(Suite& suite)
{
    double worst_two = 0.0;
    for (double lambda : {0.1, 1.0, 2.0, 7.5, 1e3})
        for (Algorithm a : kAlgorithms)
            worst_two = std::max(worst_two, rel(compute_mtta(two_state(lambda), config(a)).mtta, 1.0 / lambda));
    double worst_k1 = 0.0;
    const SanModel k1 = generate_case_study(CaseStudyParams{1, 0, std::nullopt});
    for (Algorithm a : kAlgorithms) {
        SolverConfig c = config(a);
        c.stop_tol = 1e-11;
        worst_k1 = std::max(worst_k1, rel(compute_mtta(k1, c).mtta, 2.0 / 1.1));
    }
    std::ostringstream d;
    d << "two-state max rel error " << worst_two << " (tol 1e-10), case study k=1 vs 2/1.1 max rel error "
      << worst_k1 << " (tol 1e-9, stop_tol 1e-11)";
    suite.report(2, worst_two <= 1e-10 && worst_k1 <= 1e-9, d.str());
}

// Case study plus a common-cause shock that sends every state straight to
// absorption, which makes the last column of A_2 positive.
SanModel with_shock(SanModel m, double rate)
{
    SyncTransition shock;
    shock.rate = rate;
    for (Index n : m.state_counts) {
        Matrix f = Matrix::Zero(n, n);
        f.col(n - 1).setOnes();
        shock.factors.push_back(f);
    }
    m.syncs.push_back(std::move(shock));
    return m;
}

void criterion3(Suite& suite)
{
    std::vector<SanModel> models;
    for (const Instance& in : make_instances())
        models.push_back(in.model);
    const std::size_t plain = models.size();
    for (Index k = 1; k <= kMaxK; ++k)
        for (int s = 0; s < 20; ++s)
            models.push_back(with_shock(generate_case_study(CaseStudyParams{k, static_cast<std::uint64_t>(s),
                                                                            std::nullopt}),
                                        0.05 * (1 + s % 5)));

    struct Outcome {
        bool premise = false;
        bool pass = true;
        double norm = 0.0;
        std::string note;
    };
    std::vector<Outcome> out(models.size());
    parallel_for(models.size(), [&](std::size_t i) {
        const ContractionReport r = dense_contraction_checks(models[i], exit_rate_bound(models[i]));
        out[i].premise = r.premises.a2_last_column_positive;
        out[i].norm = r.norm_inf;
        if (out[i].premise) {
            out[i].pass = r.premises.all() && r.norm_inf < 1.0 && r.rho <= r.norm_inf * (1 + 1e-12);
            if (!out[i].pass) {
                std::ostringstream n;
                n << "model " << i << ": norm " << r.norm_inf << " rho " << r.rho
                  << " premises " << (r.premises.all() ? "ok" : "violated");
                out[i].note = n.str();
            }
        }
    });
    std::size_t plain_premise = 0, supp_premise = 0;
    double max_norm = 0.0;
    std::string failure;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!out[i].premise)
            continue;
        (i < plain ? plain_premise : supp_premise)++;
        max_norm = std::max(max_norm, out[i].norm);
        if (!out[i].pass && failure.empty())
            failure = out[i].note;
    }
    std::ostringstream d;
    d << plain_premise << "/" << plain << " oracle instances and " << supp_premise << "/" << models.size() - plain
      << " shock instances satisfy min A2[i,N] > 0; max ||M||_inf " << max_norm << " < 1, rho <= ||M||_inf";
    if (!failure.empty())
        d << "; violated at " << failure;
    suite.report(3, failure.empty() && supp_premise > 0, d.str());
}

void criterion4(Suite& suite)
{
    std::vector<Instance> inst;
    for (Instance& in : make_instances())
        if (in.k <= 4)
            inst.push_back(std::move(in));
    std::vector<double> err(inst.size(), 0.0);
    std::vector<std::string> errors(inst.size());
    parallel_for(inst.size(), [&](std::size_t i) {
        try {
            const SanModel& m = inst[i].model;
            for (Index l = 1; l <= 4; ++l) {
                SolverConfig sq = config(Algorithm::squared);
                sq.fixed_iterations = l;
                sq.rounding.rel_tolerance = 1e-12;
                SolverConfig lin = config(Algorithm::linear);
                lin.fixed_iterations = (Index{1} << (l + 1)) - 1;
                lin.rounding.rel_tolerance = 1e-12;
                err[i] = std::max(err[i], rel(compute_mtta(m, sq).mtta, compute_mtta(m, lin).mtta));
            }
        } catch (const std::exception& e) {
            errors[i] = where(inst[i]) + ": " + e.what();
        }
    });
    const double worst = *std::max_element(err.begin(), err.end());
    std::string failure;
    for (const auto& e : errors)
        if (!e.empty() && failure.empty())
            failure = e;
    std::ostringstream d;
    d << inst.size() << " instances (k <= 4), l = 1..4: max rel gap between squared and 2^{l+1}-1 linear terms "
      << worst << " (tol 1e-7)";
    if (!failure.empty())
        d << "; error at " << failure;
    suite.report(4, failure.empty() && worst <= 1e-7, d.str());
}

void criterion5(Suite& suite)
{
    double worst_drop = 0.0;
    std::string at;
    std::size_t histories = 0;
    bool errors = false;
    for (const Instance& in : solved_instances()) {
        errors = errors || !in.error.empty();
        for (int a = 0; a < 3; ++a) {
            const auto& h = in.runs[a].measure_history;
            if (h.empty())
                continue;
            ++histories;
            for (std::size_t i = 1; i < h.size(); ++i)
                if (h[i - 1] - h[i] > worst_drop) {
                    worst_drop = h[i - 1] - h[i];
                    at = where(in) + " " + to_string(kAlgorithms[a]) + " step " + std::to_string(i);
                }
        }
    }
    std::ostringstream d;
    d << histories << " histories, largest decrease " << worst_drop << (at.empty() ? "" : " at " + at)
      << " (slack 1e-9)";
    if (errors)
        d << "; some criterion-1 runs failed";
    suite.report(5, !errors && worst_drop <= 1e-9, d.str());
}

void criterion6(Suite& suite)
{
    bool pass = true;
    std::ostringstream d;
    for (double eps : {1e-6, 1e-9})
        for (double r : {1.0, 10.0, 1e2, 1e4}) {
            const ExponentialSum es = exp_sum_coeffs(r, eps);
            const double err = exp_sum_max_error(es, 10'000);
            pass = pass && err <= eps;
            d << " R=" << r << ",eps=" << eps << ":" << err << "(" << es.terms() << " terms)";
        }
    suite.report(6, pass, "max grid error over 10^4 points <= eps;" + d.str());
}

void criterion7(Suite& suite)
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto random = [&](Index n) {
        Matrix m(n, n);
        for (Index i = 0; i < m.size(); ++i)
            m.data()[i] = u(rng);
        return m;
    };
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const Matrix a = random(3), b = random(4);
        const Matrix sum = Eigen::kroneckerProduct(a, Matrix::Identity(4, 4)).eval() +
                           Eigen::kroneckerProduct(Matrix::Identity(3, 3), b).eval();
        const Matrix lhs = expm_dense(sum);
        const Matrix rhs = Eigen::kroneckerProduct(expm_dense(a), expm_dense(b));
        worst = std::max(worst, (lhs - rhs).norm() / rhs.norm());
    }
    std::ostringstream d;
    d << "100 pairs (3x3, 4x4): max relative Frobenius error " << worst << " (tol 1e-12)";
    suite.report(7, worst <= 1e-12, d.str());
}

void criterion9(Suite& suite)
{
    const std::vector<Instance> inst = make_instances();
    std::vector<double> err(inst.size(), 0.0);
    std::vector<std::string> errors(inst.size());
    parallel_for(inst.size(), [&](std::size_t i) {
        try {
            SolverConfig c = config(Algorithm::transpose);
            const double lo = compute_mtta(inst[i].model, c).mtta;
            c.gamma = GammaChoice{GammaChoice::Kind::scaled, 4.0};
            err[i] = rel(compute_mtta(inst[i].model, c).mtta, lo);
        } catch (const std::exception& e) {
            errors[i] = where(inst[i]) + ": " + e.what();
        }
    });
    const auto it = std::max_element(err.begin(), err.end());
    std::string failure;
    for (const auto& e : errors)
        if (!e.empty() && failure.empty())
            failure = e;
    std::ostringstream d;
    d << inst.size() << " instances (transpose): max rel gap between minimal and 4x minimal gamma " << *it << " at "
      << where(inst[static_cast<std::size_t>(it - err.begin())]) << " (tol " << 2 * kStopTol << ")";
    if (!failure.empty())
        d << "; error at " << failure;
    suite.report(9, failure.empty() && *it <= 2 * kStopTol, d.str());
}

void criterion10(Suite& suite)
{
    std::vector<SanModel> models;
    for (const Instance& in : make_instances())
        models.push_back(in.model);
    models.push_back(generate_case_study(figure1_topology()));
    std::vector<double> err(models.size(), 0.0);
    parallel_for(models.size(), [&](std::size_t i) {
        const Matrix q = ttm_to_dense(build_descriptor(models[i]).Q);
        const Matrix ref = dense_generator(models[i]).Q;
        err[i] = (q - ref).cwiseAbs().maxCoeff();
    });
    const double worst = *std::max_element(err.begin(), err.end());
    std::ostringstream d;
    d << models.size() << " models incl. the four-component figure topology: max |Q_tt - Q_dense| " << worst
      << " (tol 1e-12)";
    suite.report(10, worst <= 1e-12, d.str());
}

// Runs `job` in a child process under a wall-clock budget. Returns the text
// written by the child, or an empty string with `timed_out` set.
std::string run_with_budget(const std::function<std::string()>& job, double seconds, bool& timed_out)
{
    int fds[2];
    if (pipe(fds) != 0)
        return "error pipe";
    std::cout.flush();
    const pid_t pid = fork();
    if (pid == 0) {
        close(fds[0]);
        rlimit lim{std::uint64_t{6} << 30, std::uint64_t{6} << 30};
        setrlimit(RLIMIT_AS, &lim);
        std::string text;
        try {
            text = job();
        } catch (const std::exception& e) {
            text = std::string("error ") + e.what();
        } catch (...) {
            text = "error unknown";
        }
        [[maybe_unused]] auto n = write(fds[1], text.data(), text.size());
        close(fds[1]);
        _exit(0);
    }
    close(fds[1]);
    timed_out = false;
    std::string text;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
    char buf[4096];
    for (;;) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            timed_out = true;
            kill(pid, SIGKILL);
            break;
        }
        pollfd p{fds[0], POLLIN, 0};
        if (poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 60'000))) > 0) {
            const ssize_t n = read(fds[0], buf, sizeof buf);
            if (n <= 0)
                break;
            text.append(buf, static_cast<std::size_t>(n));
        }
    }
    close(fds[0]);
    int status = 0;
    waitpid(pid, &status, 0);
    if (!timed_out && text.empty())
        text = "error child exited with status " + std::to_string(status);
    return text;
}

void criterion8(Suite& suite)
{
    const SanModel model = generate_case_study(CaseStudyParams{16, 0, std::nullopt});
    bool timed_out = false;
    const std::string sq = run_with_budget(
        [&] {
            const SolveReport r = compute_mtta(model, config(Algorithm::squared));
            std::ostringstream o;
            o.precision(17);
            o << "ok " << r.mtta << " " << r.peak_memory_bytes << " " << r.wall_time << " " << r.iterations << " "
              << *std::max_element(r.max_rank_history.begin(), r.max_rank_history.end());
            return o.str();
        },
        kBudgetSeconds, timed_out);
    if (timed_out) {
        suite.report(8, false,
                     "k=16 squared run did not finish within the " + std::to_string(int(kBudgetSeconds)) +
                         " s budget");
        return;
    }
    std::istringstream in(sq);
    std::string tag;
    double mtta = 0.0, peak = 0.0, wall = 0.0;
    Index steps = 0, rank = 0;
    in >> tag >> mtta >> peak >> wall >> steps >> rank;
    if (tag != "ok") {
        suite.report(8, false, "k=16 squared run failed: " + sq);
        return;
    }
    const std::string lin = run_with_budget(
        [&] {
            const SolveReport r = compute_mtta(model, config(Algorithm::linear));
            const auto& h = r.measure_history;
            std::ostringstream o;
            o.precision(17);
            o << "ok " << (h.size() > 1 ? h[h.size() - 2] : 0.0) << " " << h.back();
            return o.str();
        },
        kBudgetSeconds, timed_out);
    std::istringstream lin_in(lin);
    double prev = 0.0, last = 0.0;
    lin_in >> tag >> prev >> last;
    const bool lin_ok = !timed_out && tag == "ok";
    const double slack = kStopTol * std::abs(last);
    const bool bracket = lin_ok && mtta >= std::min(prev, last) - slack && mtta <= last + std::abs(last - prev) + slack;
    std::ostringstream d;
    d.precision(12);
    d << "k=16 squared: mtta " << mtta << ", " << steps << " steps, max rank " << rank << ", " << wall
      << " s, peak TT memory " << peak / (1024 * 1024) << " MiB; linear last iterates " << prev << ", " << last;
    if (!lin_ok)
        d << " (linear run " << (timed_out ? "exceeded budget" : "failed: " + lin) << ")";
    suite.report(8, bracket && wall <= kBudgetSeconds && peak <= kMemoryBudget, d.str());
}

} // namespace

int main(int argc, char** argv)
{
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--only" && i + 1 < argc) {
            std::stringstream list(argv[++i]);
            std::string item;
            while (std::getline(list, item, ','))
                only.insert(std::stoi(item));
        } else {
            std::cerr << "usage: acceptance [--only 1,2,...]\n";
            return 2;
        }
    }
    Suite suite(only);
    // Criterion 8 forks, so it runs first while the process is single-threaded.
    const std::pair<int, void (*)(Suite&)> criteria[] = {
        {8, criterion8}, {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
        {5, criterion5}, {6, criterion6}, {7, criterion7}, {9, criterion9}, {10, criterion10}};
    for (const auto& [c, fn] : criteria) {
        if (!suite.wants(c))
            continue;
        try {
            fn(suite);
        } catch (const std::exception& e) {
            suite.report(c, false, std::string("unexpected error: ") + e.what());
        }
    }
    suite.print();
    return suite.failed() ? 1 : 0;
}
