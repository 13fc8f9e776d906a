// End-to-end acceptance run on the shipped double-integrator config. Every check recomputes its
// quantity from the written artifacts with the closed-form oracles in tests/oracles, and prints
// one PASS/FAIL line per criterion.

#include "cbfsyn/pipeline.hpp"
#include "cbfsyn/qp.hpp"
#include "cbfsyn/serialization.hpp"
#include "cbfsyn/simulator.hpp"

#include "double_integrator.hpp"
#include "qp_grid.hpp"
#include "random_qp.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
namespace di = oracles::di;
using namespace cbfsyn;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

int failures = 0;

void report(int id, bool ok, const std::string& what, const std::string& detail) {
    if (!ok) ++failures;
    std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << id << ": " << what << " [" << detail << "]\n";
    std::cout.flush();
}

double oracle_z(double x, double v) { return -x - di::kGamma2 * std::max(v, 0.0); }

double oracle_h(const CbfCandidate& c, double x, double v) {
    return oracle_z(c.scale[0] * x + c.shift[0], c.scale[1] * v + c.shift[1]) + c.offset;
}

double oracle_min_h(const std::vector<CbfCandidate>& cands, double x, double v) {
    double m = std::numeric_limits<double>::infinity();
    for (const CbfCandidate& c : cands) m = std::min(m, oracle_h(c, x, v));
    return m;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

struct CsvRun {
    std::vector<double> x, v;
    std::vector<std::string> status;
};

CsvRun read_run(const fs::path& file) {
    std::istringstream in(read_text_file(file));
    std::string line;
    std::getline(in, line);
    const std::vector<std::string> head = split(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < head.size(); ++i) col[head[i]] = i;
    CsvRun r;
    while (std::getline(in, line)) {
        const std::vector<std::string> cells = split(line);
        r.x.push_back(std::stod(cells.at(col.at("x1"))));
        r.v.push_back(std::stod(cells.at(col.at("x2"))));
        r.status.push_back(cells.at(col.at("status")));
    }
    return r;
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = read_text_file(e.path());
    }
    return files;
}

bool is_reference_setup(const PipelineConfig& cfg) {
    const SystemInstance inst = cfg.instantiate();
    const BoxSet& b = cfg.sampling.bounds;
    return cfg.system_name == "double_integrator" && inst.params.at("gamma1") == 0.0 &&
           inst.params.at("gamma2") == di::kGamma2 && inst.input_box.upper()[0] == di::kUMax &&
           inst.input_box.lower()[0] == -di::kUMax && b.lower()[0] == di::kXMin &&
           b.upper()[0] == di::kXMax && b.lower()[1] == di::kVMin && b.upper()[1] == di::kVMax &&
           cfg.sampling.n_min == 1000 && cfg.sampling.delta == 1e-3 && cfg.sampling.growth == 3.0 &&
           cfg.sampling.n_start == 243;
}

void criterion_1(const fs::path& out, double sample_seconds) {
    std::istringstream in(read_text_file(out / artifact::samples));
    const LoadedSamples ls = read_samples(in);
    std::size_t feasible = 0, agree = 0;
    for (const SampleRecord& r : ls.set.records) {
        const bool f = r.cls == SampleClass::FeasibleZ0;
        feasible += f;
        agree += f == di::in_z0(r.state[0], r.state[1]);
    }
    const double n = static_cast<double>(ls.set.records.size());
    const double j = feasible / n;
    const double mc = di::monte_carlo_area(di::in_z0, 99, 1'000'000) / di::kBoxArea;
    const bool ok = ls.set.converged && ls.set.records.size() <= 177147 && std::abs(j - 0.819) <= 0.02 &&
                    std::abs(mc - di::kJaccard) <= 2e-3 && sample_seconds <= 60.0;
    report(1, ok, "Jaccard converges by n = 3^11 to 0.819 +- 0.02",
           "n " + std::to_string(ls.set.records.size()) + ", J " + num(j, 6) + ", closed form " +
               num(di::kJaccard, 5) + ", Monte Carlo 1e6 " + num(mc, 5) + ", labels matching oracle " +
               num(agree / n, 5) + ", " + num(sample_seconds, 2) + " s");
}

void criterion_2(const fs::path& out) {
    std::istringstream in(read_text_file(out / artifact::boundary));
    const BoundarySet b = read_boundary(in);
    double cap = -std::numeric_limits<double>::infinity();
    for (const Vec& p : b.points) {
        if (p[0] < -3.5) cap = std::max(cap, p[1]);
    }
    report(2, std::abs(cap - di::kVelocityCap) <= 1.5, "boundary velocity cap 30 +- 1.5",
           "max v over boundary points with x < -3.5: " + num(cap, 3) + " from " +
               std::to_string(b.points.size()) + " points");
}

void criterion_3() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(500);
    std::bernoulli_distribution infeasible(0.25);
    int status_mismatch = 0, objective_mismatch = 0, optimal = 0;
    double worst_gap = 0.0, worst_kkt = 0.0;
    for (int t = 0; t < 500; ++t) {
        const int m = 1 + t % 3;
        const int k = (t / 3) % 3;
        const oracles::RandomQp rq = oracles::random_qp(rng, m, k, !infeasible(rng));
        QpProblem p;
        p.hessian = rq.qp.hessian;
        p.linear = rq.qp.linear;
        p.ineq_rows = rq.qp.rows;
        p.ineq_rhs = rq.qp.rhs;
        p.box = BoxSet(rq.qp.lower, rq.qp.upper);
        const QpSolution s = solve_box_qp(p);
        const oracles::GridResult ref = oracles::grid_minimize(rq.qp);
        if ((s.status == QpStatus::Optimal) != ref.feasible) ++status_mismatch;
        if (s.status != QpStatus::Optimal || !ref.feasible) continue;
        ++optimal;
        const double gap = std::abs(s.objective - ref.objective);
        worst_gap = std::max(worst_gap, gap);
        if (gap > 1e-3) ++objective_mismatch;
        const Vec stat = p.hessian * s.argmin + p.linear - p.ineq_rows.transpose() * s.row_multipliers -
                         s.lower_multipliers + s.upper_multipliers;
        double kkt = stat.cwiseAbs().maxCoeff();
        for (Eigen::Index i = 0; i < p.ineq_rows.rows(); ++i) {
            const double slack = p.ineq_rows.row(i).dot(s.argmin) - p.ineq_rhs[i];
            kkt = std::max({kkt, std::max(0.0, -slack), std::max(0.0, -s.row_multipliers[i]),
                            std::abs(s.row_multipliers[i] * slack)});
        }
        for (Eigen::Index j = 0; j < m; ++j) {
            kkt = std::max({kkt, std::abs(s.lower_multipliers[j] * (s.argmin[j] - p.box.lower()[j])),
                            std::abs(s.upper_multipliers[j] * (p.box.upper()[j] - s.argmin[j])),
                            std::max(0.0, p.box.lower()[j] - s.argmin[j]),
                            std::max(0.0, s.argmin[j] - p.box.upper()[j])});
        }
        worst_kkt = std::max(worst_kkt, kkt);
    }
    const double secs = seconds_since(t0);
    const bool ok = status_mismatch == 0 && objective_mismatch == 0 && worst_kkt <= 1e-8 && secs <= 10.0;
    report(3, ok, "500 random QPs match the grid oracle, KKT <= 1e-8",
           std::to_string(optimal) + " optimal, status mismatches " + std::to_string(status_mismatch) +
               ", worst objective gap " + num(worst_gap, 6) + ", worst KKT residual " +
               std::to_string(worst_kkt) + ", " + num(secs, 2) + " s");
}

std::map<FitMode, FitResult> load_fits(const fs::path& out) {
    std::map<FitMode, FitResult> fits;
    for (FitMode m : {FitMode::Uniform, FitMode::NonUniform, FitMode::Multi}) {
        fits[m] = parse_fit_result(read_text_file(out / artifact::fit_json(m)));
    }
    return fits;
}

bool all_feasible(const std::map<FitMode, FitResult>& fits) {
    for (const auto& [m, r] : fits) {
        if (!r.feasible) return false;
    }
    return true;
}

void criterion_4(const std::map<FitMode, FitResult>& fits) {
    const double u = fits.at(FitMode::Uniform).objective_value;
    const double nu = fits.at(FitMode::NonUniform).objective_value;
    const double mu = fits.at(FitMode::Multi).objective_value;
    // independent area of each certified set
    std::string areas;
    double worst_rel = 0.0;
    for (const auto& [mode, r] : fits) {
        const auto& cands = r.candidates;
        const double mc = di::monte_carlo_area(
            [&](double x, double v) { return oracle_min_h(cands, x, v) >= 0.0; }, 7, 1'000'000);
        worst_rel = std::max(worst_rel, std::abs(mc - r.objective_value) / mc);
        areas += std::string(areas.empty() ? "" : ", ") + to_string(mode) + " " + num(mc, 1);
    }
    const bool ok = all_feasible(fits) && mu >= nu && nu >= 0.98 * u && mu >= 0.95 * di::kZ0Area &&
                    worst_rel <= 0.01;
    report(4, ok, "objective multi >= nonuniform >= uniform - 2%, multi >= 0.95 * 655",
           "uniform " + num(u, 2) + ", nonuniform " + num(nu, 2) + ", multi " + num(mu, 2) +
               "; Monte Carlo 1e6 areas " + areas);
}

SimConfig sim_for(const PipelineConfig& cfg, const Vec& start) {
    SimConfig sc;
    sc.x_init = start;
    sc.x_goal = cfg.simulate.goal;
    sc.horizon = cfg.simulate.horizon;
    sc.dt = cfg.simulate.dt;
    sc.kp = cfg.simulate.kp;
    sc.spline_duration = cfg.simulate.spline_duration;
    return sc;
}

FilterConfig filter_for(const PipelineConfig& cfg, std::size_t count) {
    FilterConfig fc;
    fc.alphas = cfg.alphas(count);
    fc.input_box = cfg.instantiate().input_box;
    fc.relaxation = cfg.simulate.relaxation;
    fc.step_correction = cfg.simulate.step_correction;
    return fc;
}

struct Invariants {
    double min_z = std::numeric_limits<double>::infinity();
    double min_h = std::numeric_limits<double>::infinity();
    std::size_t infeasible = 0;
};

Invariants check(const std::vector<CbfCandidate>& cands, const std::vector<double>& x,
                 const std::vector<double>& v, const std::vector<std::string>& status) {
    Invariants inv;
    for (std::size_t k = 0; k < x.size(); ++k) {
        inv.min_z = std::min(inv.min_z, oracle_z(x[k], v[k]));
        inv.min_h = std::min(inv.min_h, oracle_min_h(cands, x[k], v[k]));
        if (status[k] == "infeasible") ++inv.infeasible;
    }
    return inv;
}

Invariants check(const std::vector<CbfCandidate>& cands, const Trajectory& tr) {
    std::vector<double> x, v;
    std::vector<std::string> st;
    for (std::size_t k = 0; k < tr.states.size(); ++k) {
        x.push_back(tr.states[k][0]);
        v.push_back(tr.states[k][1]);
        st.push_back(tr.statuses[k] == StepStatus::Infeasible ? "infeasible" : "ok");
    }
    return check(cands, x, v, st);
}

void criterion_5(const PipelineConfig& cfg, const fs::path& out, const std::map<FitMode, FitResult>& fits) {
    const std::vector<Vec>& starts = cfg.simulate.starts;
    bool ok = cfg.simulate.kappa == 5.0 && cfg.simulate.kappas.empty() && cfg.simulate.dt == 0.01 &&
              starts.size() == 4;
    std::size_t admitted = 0, multi_admitted = 0;
    double worst_z = std::numeric_limits<double>::infinity(), worst_h = worst_z, worst_terminal = 0.0;
    double slowest = 0.0;
    std::size_t infeasible = 0;
    for (const auto& [mode, r] : fits) {
        for (std::size_t k = 0; k < starts.size(); ++k) {
            if (oracle_min_h(r.candidates, starts[k][0], starts[k][1]) < 0.0) continue;
            ++admitted;
            const fs::path file = out / artifact::sim_dir(mode) / ("start_" + std::to_string(k + 1) + ".csv");
            if (!fs::is_regular_file(file)) {
                ok = false;
                continue;
            }
            const CsvRun run = read_run(file);
            const Invariants inv = check(r.candidates, run.x, run.v, run.status);
            worst_z = std::min(worst_z, inv.min_z);
            worst_h = std::min(worst_h, inv.min_h);
            infeasible += inv.infeasible;
            if (mode != FitMode::Multi) continue;
            ++multi_admitted;
            worst_terminal = std::max(worst_terminal, std::abs(run.x.back() - cfg.simulate.goal[0]));
            // time the run itself and confirm the artifact is what the library produces
            const auto t0 = Clock::now();
            const Trajectory tr = simulate(sim_for(cfg, starts[k]), cfg.instantiate().model, r.candidates,
                                           filter_for(cfg, r.candidates.size()));
            slowest = std::max(slowest, seconds_since(t0));
            if (trajectory_csv(tr) != read_text_file(file)) ok = false;
        }
    }
    ok = ok && multi_admitted == 4 && worst_z >= -1e-6 && worst_h >= -1e-6 && infeasible == 0 &&
         worst_terminal <= 0.5 && slowest <= 5.0;
    report(5, ok, "closed loop keeps z and min h >= -1e-6, no infeasible steps, multi ends within 0.5 of the goal",
           std::to_string(admitted) + " admissible runs (" + std::to_string(multi_admitted) +
               " multi), min z " + num(worst_z, 6) + ", min h " + num(worst_h, 6) + ", infeasible steps " +
               std::to_string(infeasible) + ", worst |x_T| " + num(worst_terminal, 4) + ", slowest run " +
               num(slowest, 3) + " s");
}

void criterion_6(const PipelineConfig& cfg, const fs::path& out, const FitResult& multi) {
    const fs::path dir = out / artifact::sim_dir(FitMode::Multi);
    const CsvRun open = read_run(dir / "unfiltered.csv");
    const CsvRun closed = read_run(dir / "start_1.csv");
    const Invariants a = check(multi.candidates, open.x, open.v, open.status);
    const Invariants b = check(multi.candidates, closed.x, closed.v, closed.status);
    const Vec& s = cfg.simulate.starts.front();
    const bool ok = s[0] == -9.0 && s[1] == 15.0 && a.min_z < 0.0 && b.min_z >= -1e-6;
    report(6, ok, "unfiltered P controller from (-9, 15) breaches z < 0, the filtered run does not",
           "unfiltered min z " + num(a.min_z, 4) + ", filtered min z " + num(b.min_z, 6));
}

void criterion_7(const PipelineConfig& cfg, const std::map<FitMode, FitResult>& fits) {
    const SystemInstance inst = cfg.instantiate();
    const int cells = 20;
    bool ok = true;
    std::string detail;
    for (FitMode mode : {FitMode::NonUniform, FitMode::Multi}) {
        const auto& cands = fits.at(mode).candidates;
        const FilterConfig fc = filter_for(cfg, cands.size());
        std::size_t runs = 0, breaches = 0, infeasible = 0;
        for (int i = 0; i < cells; ++i) {
            for (int j = 0; j < cells; ++j) {
                const double x = di::kXMin + (i + 0.5) * (di::kXMax - di::kXMin) / cells;
                const double v = di::kVMin + (j + 0.5) * (di::kVMax - di::kVMin) / cells;
                if (oracle_min_h(cands, x, v) < 0.0) continue;
                Vec start(2);
                start << x, v;
                SimConfig sc = sim_for(cfg, start);
                sc.horizon = 10.0;
                sc.constant_nominal = Vec::Constant(1, di::kUMax);
                const Invariants inv = check(cands, simulate(sc, inst.model, cands, fc));
                ++runs;
                if (inv.min_z < -1e-6 || inv.min_h < -1e-6) ++breaches;
                infeasible += inv.infeasible;
            }
        }
        ok = ok && runs > 0 && breaches == 0 && infeasible == 0;
        detail += std::string(detail.empty() ? "" : "; ") + to_string(mode) + ": " + std::to_string(runs) +
                  " runs, " + std::to_string(breaches) + " breaches, " + std::to_string(infeasible) +
                  " infeasible steps";
    }
    report(7, ok, "20x20 adversarial sweep with u = u_max: no breaches, no infeasible steps", detail);
}

void criterion_8(const fs::path& a, const fs::path& b) {
    const auto ta = tree(a), tb = tree(b);
    std::size_t differing = 0;
    for (const auto& [name, bytes] : ta) {
        const auto it = tb.find(name);
        if (it == tb.end() || it->second != bytes) ++differing;
    }
    for (const auto& [name, bytes] : tb) differing += ta.count(name) == 0;
    report(8, differing == 0 && !ta.empty(), "repeated runs with a fixed seed are byte identical",
           std::to_string(ta.size()) + " files compared, " + std::to_string(differing) + " differ");
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path config = argc > 1 ? fs::path(argv[1]) : fs::path(CBFSYN_SOURCE_DIR) / "configs" / "double_integrator.cfg";
    const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "cbfsyn_acceptance";
    const PipelineConfig cfg = load_pipeline_config(config);
    if (!is_reference_setup(cfg)) {
        std::cout << "FAIL  setup: " << config << " is not the reference double-integrator configuration\n";
        return 1;
    }
    fs::remove_all(work);
    const fs::path first = work / "run_a", second = work / "run_b";

    // Run A: sampling on its own (timed), then the pipeline reusing it. Run B: one pipeline call.
    RunOptions opts;
    opts.out_dir = first;
    const auto t0 = Clock::now();
    const int sample_code = cmd_sample(cfg, opts);
    const double sample_seconds = seconds_since(t0);
    const int code_a = cmd_pipeline(cfg, opts);
    opts.out_dir = second;
    const int code_b = cmd_pipeline(cfg, opts);
    if (sample_code != kExitOk || code_a != kExitOk || code_b != kExitOk) {
        std::cout << "FAIL  setup: pipeline exit codes " << sample_code << ", " << code_a << ", " << code_b << "\n";
        ++failures;
    }

    const auto guarded = [](int id, const auto& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            report(id, false, "could not be evaluated", e.what());
        }
    };
    std::map<FitMode, FitResult> fits;
    guarded(1, [&] { criterion_1(first, sample_seconds); });
    guarded(2, [&] { criterion_2(first); });
    guarded(3, [&] { criterion_3(); });
    guarded(4, [&] {
        fits = load_fits(first);
        criterion_4(fits);
    });
    guarded(5, [&] { criterion_5(cfg, first, fits); });
    guarded(6, [&] { criterion_6(cfg, first, fits.at(FitMode::Multi)); });
    guarded(7, [&] { criterion_7(cfg, fits); });
    guarded(8, [&] { criterion_8(first, second); });

    std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " failure(s)")
              << " (artifacts in " << work.string() << ")\n";
    return failures == 0 ? 0 : 1;
}
