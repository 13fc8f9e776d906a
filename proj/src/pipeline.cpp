#include "cbfsyn/pipeline.hpp"

#include "cbfsyn/parallel.hpp"
#include "cbfsyn/qp.hpp"
#include "cbfsyn/rng.hpp"
#include "cbfsyn/serialization.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

namespace cbfsyn {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace artifact {
std::string fit_json(FitMode mode) { return std::string("fit_") + to_string(mode) + ".json"; }
std::string fit_report(FitMode mode) { return std::string("fit_") + to_string(mode) + ".md"; }
std::string sim_dir(FitMode mode) { return std::string("sim_") + to_string(mode); }
}  // namespace artifact

namespace {

std::string fixed(double v, int digits = 4) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

std::string vec_text(const Vec& v, int digits = 4) {
    std::string out = "(";
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        out += fixed(v[i], digits);
    }
    return out + ")";
}

json vec_json(const Vec& v) {
    json out = json::array();
    for (double x : v) out.push_back(x);
    return out;
}

class Clock {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Records, per stage, the key of its inputs and the digest of the file it wrote.
class StageCache {
public:
    explicit StageCache(fs::path dir) : dir_(std::move(dir)) {
        const fs::path file = dir_ / artifact::stages;
        if (!fs::exists(file)) return;
        try {
            entries_ = json::parse(read_text_file(file));
            if (!entries_.is_object()) entries_ = json::object();
        } catch (const std::exception&) {
            entries_ = json::object();  // an unreadable cache only costs recomputation
        }
    }

    bool fresh(const std::string& stage, const std::string& key) const {
        if (!entries_.contains(stage)) return false;
        const json& e = entries_.at(stage);
        if (e.value("key", "") != key) return false;
        const fs::path file = dir_ / e.value("file", "");
        if (!fs::is_regular_file(file)) return false;
        return fnv1a_hex(read_text_file(file)) == e.value("digest", "");
    }

    void record(const std::string& stage, const std::string& key, const std::string& file,
                const std::string& digest) {
        entries_[stage] = {{"file", file}, {"key", key}, {"digest", digest}};
    }

    void save() const { write_text_file(dir_ / artifact::stages, entries_.dump(2) + "\n"); }

private:
    fs::path dir_;
    json entries_ = json::object();
};

struct Context {
    const PipelineConfig& cfg;
    const RunOptions& opts;
    fs::path out;
    SystemInstance inst;
    StatePredicate extra;

    Context(const PipelineConfig& c, const RunOptions& o)
        : cfg(c), opts(o), out(o.out_dir.empty() ? fs::path(c.output_dir) : o.out_dir),
          inst(c.instantiate()), extra(input_independent_ascent(inst.model)) {}

    void log(const std::string& line) const {
        if (opts.log) *opts.log << line << '\n';
    }

    json echo() const { return pipeline_config_json(cfg); }

    std::string sampling_key() const {
        const json e = echo();
        return fnv1a_hex(json{{"system", e["system"]}, {"sampling", e["sampling"]}}.dump());
    }
};

// ---- sampling ----------------------------------------------------------------------------

SampleSet compute_samples(const Context& ctx) {
    SamplingConfig sc = ctx.cfg.sampling;
    sc.threads = ctx.opts.threads;
    return run_sampling(ctx.inst.model, ctx.inst.input_box, sc, ctx.extra);
}

std::string samples_text(const Context& ctx, const SampleSet& s) {
    SampleFileMeta meta;
    meta.system = ctx.cfg.system_name;
    meta.system_params = ctx.inst.params;
    meta.config_digest = ctx.sampling_key();
    std::ostringstream os;
    write_samples(os, s, meta);
    return os.str();
}

std::string convergence_csv(const SampleSet& s) {
    std::string out = "n,jaccard,delta_jaccard\n";
    const auto& hist = s.tracker.history();
    for (std::size_t i = 0; i < hist.size(); ++i) {
        out += std::to_string(hist[i].n) + ',';
        append_real(out, hist[i].jaccard);
        out += ',';
        if (i > 0) append_real(out, std::abs(hist[i].jaccard - hist[i - 1].jaccard));
        out += '\n';
    }
    return out;
}

LoadedSamples load_samples(const Context& ctx, const fs::path& path) {
    if (!fs::is_regular_file(path)) throw IntegrityError("sample file " + path.string() + " not found");
    std::istringstream in(read_text_file(path));
    LoadedSamples ls = read_samples(in);
    if (ls.meta.system != ctx.cfg.system_name) {
        throw IntegrityError("sample file was produced for system '" + ls.meta.system + "'");
    }
    return ls;
}

// ---- boundary ----------------------------------------------------------------------------

BoundarySet compute_boundary(const Context& ctx, const SampleSet& s) {
    BoundaryOptions bo = ctx.cfg.boundary;
    bo.threads = ctx.opts.threads;
    return extract_boundary(s, bo);
}

std::string boundary_text(const BoundarySet& b) {
    std::ostringstream os;
    write_boundary(os, b);
    return os.str();
}

std::string boundary_summary(const Context& ctx, const SampleSet& s, const BoundarySet& b) {
    json j;
    j["points"] = b.points.size();
    j["epsilon"] = b.epsilon;
    j["epsilon_source"] = ctx.cfg.boundary.epsilon > 0.0 ? "config" : "auto";
    j["auto_epsilon"] = {{"formula", "2 * (1/N)^(1/n')"},
                         {"N", s.records.size()},
                         {"n_prime", s.bounds.nondegenerate_axes()},
                         {"value", auto_epsilon(s)}};
    j["box_face_is_boundary"] = b.box_face_is_boundary;
    j["empty"] = b.points.empty();
    j["source_checksum"] = b.source_checksum;
    return j.dump(2) + "\n";
}

BoundarySet load_boundary(const fs::path& path, const LoadedSamples& samples) {
    if (!fs::is_regular_file(path)) throw IntegrityError("boundary file " + path.string() + " not found");
    std::istringstream in(read_text_file(path));
    BoundarySet b = read_boundary(in);
    if (b.source_checksum != samples.checksum) {
        throw IntegrityError("boundary file was extracted from different samples");
    }
    return b;
}

// ---- fitting -----------------------------------------------------------------------------

FitResult compute_fit(const Context& ctx, const SampleSet& s, const BoundarySet& b, FitMode mode,
                      const std::optional<CbfCandidate>& warm) {
    FitConfig fc = ctx.cfg.fit_for(mode);
    fc.search.threads = ctx.opts.threads;
    const SystemModel& sys = ctx.inst.model;
    switch (mode) {
        case FitMode::Uniform: return fit_uniform(s, b, sys, ctx.inst.input_box, fc);
        case FitMode::NonUniform: return fit_nonuniform(s, b, sys, ctx.inst.input_box, fc, warm);
        case FitMode::Multi: return fit_multi(s, b, sys, ctx.inst.input_box, fc, warm);
    }
    throw std::logic_error("unknown fit mode");
}

std::string fit_markdown(const FitResult& r) {
    std::string out = std::string("# Fit: ") + to_string(r.mode) + "\n\n";
    out += std::string("- feasible: ") + (r.feasible ? "yes" : "no") + "\n";
    out += "- objective (estimated set size): " + fixed(r.objective_value, 6) + "\n";
    const VerificationReport& v = r.verification;
    out += "- containment fraction: " + fixed(v.containment_fraction, 6) + " of " +
           std::to_string(v.in_set_samples) + " in-set samples\n";
    out += "- boundary CBF-feasible fraction: " + fixed(v.boundary_cbf_feasible_fraction, 6) +
           " over " + std::to_string(v.boundary_probes) + " probes\n";
    out += "- scaling-condition fraction on the feasibility frontier: " +
           fixed(v.prop2_feasible_fraction, 6) + "\n\n";
    out += "| # | scale | shift | offset |\n|---|---|---|---|\n";
    for (std::size_t j = 0; j < r.candidates.size(); ++j) {
        const CbfCandidate& c = r.candidates[j];
        out += "| " + std::to_string(j + 1) + " | " + vec_text(c.scale, 6) + " | " +
               vec_text(c.shift, 6) + " | " + fixed(c.offset, 6) + " |\n";
    }
    if (!r.redundancy.empty()) {
        out += "\nRedundancy:\n\n";
        for (const PairRedundancy& p : r.redundancy) {
            out += "- candidates " + std::to_string(p.first + 1) + " and " +
                   std::to_string(p.second + 1) + ": " +
                   (p.redundant ? "redundant (ratio " + fixed(p.ratio, 6) + ")" : "independent") +
                   "\n";
        }
    }
    std::vector<std::string> warnings = r.warnings;
    warnings.insert(warnings.end(), v.warnings.begin(), v.warnings.end());
    if (!warnings.empty()) {
        out += "\nWarnings:\n\n";
        for (const std::string& w : warnings) out += "- " + w + "\n";
    }
    return out;
}

std::optional<CbfCandidate> warm_start_for(FitMode mode, const std::map<FitMode, FitResult>& done) {
    auto pick = [&](FitMode from) -> std::optional<CbfCandidate> {
        auto it = done.find(from);
        if (it == done.end() || !it->second.feasible || it->second.candidates.empty()) return {};
        return it->second.candidates.front();
    };
    if (mode == FitMode::NonUniform) return pick(FitMode::Uniform);
    if (mode == FitMode::Multi) {
        if (auto w = pick(FitMode::NonUniform)) return w;
        return pick(FitMode::Uniform);
    }
    return std::nullopt;
}

// Fits depend on their warm start, so the modes always run in this order.
std::vector<FitMode> ordered_modes(const PipelineConfig& cfg) {
    std::vector<FitMode> out;
    for (FitMode m : {FitMode::Uniform, FitMode::NonUniform, FitMode::Multi}) {
        for (FitMode c : cfg.fit_modes) {
            if (c == m) out.push_back(m);
        }
    }
    return out;
}

// ---- simulation --------------------------------------------------------------------------

FilterConfig filter_config(const Context& ctx, std::size_t candidates) {
    FilterConfig fc;
    fc.alphas = ctx.cfg.alphas(candidates);
    fc.input_box = ctx.inst.input_box;
    fc.relaxation = ctx.cfg.simulate.relaxation;
    fc.step_correction = ctx.cfg.simulate.step_correction;
    return fc;
}

SimConfig sim_config(const Context& ctx, const Vec& start) {
    const SimulateSection& ss = ctx.cfg.simulate;
    SimConfig sc;
    sc.x_init = start;
    sc.x_goal = ss.goal;
    sc.horizon = ss.horizon;
    sc.dt = ss.dt;
    sc.kp = ss.kp;
    sc.spline_duration = ss.spline_duration;
    sc.require_safe_start = ss.require_safe_start;
    sc.stop_on_infeasible = ss.stop_on_infeasible;
    return sc;
}

RunSummary summarize(const Vec& start, const Trajectory& tr, const FilterConfig& fc, double dt) {
    RunSummary r;
    r.start = start;
    r.admitted = true;
    r.invariance = check_invariance(tr);
    r.alpha_violations = alpha_monotonicity_violations(tr, fc.alphas, dt);
    r.correction_failures = tr.correction_failures;
    r.terminal = tr.states.back();
    return r;
}

json run_json(const RunSummary& r) {
    json j;
    j["start"] = vec_json(r.start);
    j["admitted"] = r.admitted;
    if (!r.admitted) return j;
    j["file"] = r.file;
    const InvarianceReport& inv = r.invariance;
    j["min_h"] = inv.min_h;
    j["min_z"] = inv.min_z;
    j["invariance_breaches"] = inv.invariance_breaches;
    j["constraint_breaches"] = inv.constraint_breaches;
    j["infeasible_steps"] = inv.infeasible_steps;
    j["first_breach_time"] = inv.first_breach_time ? json(*inv.first_breach_time) : json(nullptr);
    j["alpha_monotonicity_violations"] = r.alpha_violations;
    j["step_correction_failures"] = r.correction_failures;
    j["terminal_state"] = vec_json(r.terminal);
    return j;
}

std::vector<Vec> sweep_starts(const BoxSet& box, int per_axis) {
    const Eigen::Index n = box.dim();
    const double total = std::pow(static_cast<double>(per_axis), static_cast<double>(n));
    if (total > 1e6) throw std::invalid_argument("adversarial grid is too large for this dimension");
    std::vector<Vec> out;
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    while (true) {
        Vec unit(n);
        for (Eigen::Index a = 0; a < n; ++a) {
            unit[a] = (idx[static_cast<std::size_t>(a)] + 0.5) / per_axis;
        }
        out.push_back(box.denormalize(unit));
        Eigen::Index a = n - 1;
        while (a >= 0 && ++idx[static_cast<std::size_t>(a)] == per_axis) {
            idx[static_cast<std::size_t>(a)] = 0;
            --a;
        }
        if (a < 0) break;
    }
    return out;
}

std::string relative_name(const fs::path& file, const fs::path& base) {
    const fs::path rel = file.lexically_normal().lexically_relative(base.lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return file.generic_string();
}

ModeSimulation run_simulations(const Context& ctx, FitMode mode,
                               const std::vector<CbfCandidate>& cands, const fs::path& cand_file,
                               const std::string& cand_checksum, bool write) {
    const SimulateSection& ss = ctx.cfg.simulate;
    const SystemModel& sys = ctx.inst.model;
    const FilterConfig fc = filter_config(ctx, cands.size());
    const fs::path dir = ctx.out / artifact::sim_dir(mode);
    ModeSimulation ms;
    ms.mode = mode;
    ms.candidates_file = relative_name(cand_file, ctx.out);
    ms.candidates_checksum = cand_checksum;

    for (std::size_t k = 0; k < ss.starts.size(); ++k) {
        const Vec& start = ss.starts[k];
        RunSummary r;
        r.start = start;
        try {
            const Clock clock;
            const Trajectory tr = simulate(sim_config(ctx, start), sys, cands, fc);
            r = summarize(start, tr, fc, ss.dt);
            r.file = "start_" + std::to_string(k + 1) + ".csv";
            if (write) write_text_file(dir / r.file, trajectory_csv(tr));
            ctx.log("[simulate] " + std::string(to_string(mode)) + " start " + vec_text(start) +
                    ": min z " + fixed(r.invariance.min_z) + ", " +
                    std::to_string(r.invariance.infeasible_steps) + " infeasible steps (" +
                    fixed(clock.seconds(), 3) + " s)");
        } catch (const SafeStartError&) {
            r.admitted = false;
            ctx.log("[simulate] " + std::string(to_string(mode)) + " start " + vec_text(start) +
                    ": outside the certified set, not simulated");
        }
        ms.runs.push_back(std::move(r));
    }

    if (ss.unfiltered_demo && !ss.starts.empty()) {
        SimConfig sc = sim_config(ctx, ss.starts.front());
        sc.filter_enabled = false;
        sc.require_safe_start = false;
        const Trajectory tr = simulate(sc, sys, cands, fc);
        RunSummary r = summarize(ss.starts.front(), tr, fc, ss.dt);
        r.file = "unfiltered.csv";
        if (write) write_text_file(dir / r.file, trajectory_csv(tr));
        ms.unfiltered = std::move(r);
    }

    if (ss.adversarial_grid > 0) {
        const std::vector<Vec> grid = sweep_starts(ctx.cfg.sampling.bounds, ss.adversarial_grid);
        struct Cell {
            bool admitted = false;
            InvarianceReport inv;
        };
        std::vector<Cell> cells(grid.size());
        parallel_for(grid.size(), ctx.opts.threads, [&](std::size_t i) {
            if (min_h(cands, sys.hcf, grid[i]) < 0.0) return;
            SimConfig sc = sim_config(ctx, grid[i]);
            sc.constant_nominal = ctx.inst.input_box.upper();
            cells[i].admitted = true;
            cells[i].inv = check_invariance(simulate(sc, sys, cands, fc));
        });
        SweepSummary sw;
        std::string csv;
        for (Eigen::Index a = 0; a < sys.n; ++a) csv += "x" + std::to_string(a + 1) + ',';
        csv += "safe,min_h,min_z,infeasible_steps\n";
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (!cells[i].admitted) continue;
            const InvarianceReport& inv = cells[i].inv;
            ++sw.runs;
            if (!inv.safe()) ++sw.unsafe;
            sw.infeasible_steps += inv.infeasible_steps;
            if (inv.infeasible_steps > 0) ++sw.runs_with_infeasible;
            for (Eigen::Index a = 0; a < sys.n; ++a) {
                append_real(csv, grid[i][a]);
                csv += ',';
            }
            csv += inv.safe() ? "true," : "false,";
            append_real(csv, *std::min_element(inv.min_h.begin(), inv.min_h.end()));
            csv += ',';
            append_real(csv, inv.min_z);
            csv += ',' + std::to_string(inv.infeasible_steps) + '\n';
        }
        if (write) write_text_file(dir / "adversarial.csv", csv);
        ctx.log("[simulate] " + std::string(to_string(mode)) + " adversarial sweep: " +
                std::to_string(sw.unsafe) + " unsafe of " + std::to_string(sw.runs));
        ms.sweep = sw;
    }

    if (write) {
        json m;
        m["format"] = "cbfsyn-run-manifest";
        m["version"] = 1;
        m["mode"] = to_string(mode);
        const json echo = ctx.echo();
        m["config"] = {{"system", echo["system"]}, {"simulate", echo["simulate"]}};
        m["candidates_file"] = ms.candidates_file;
        m["candidates_checksum"] = ms.candidates_checksum;
        m["runs"] = json::array();
        std::size_t inv_b = 0, con_b = 0, infeas = 0, unsafe = 0;
        for (const RunSummary& r : ms.runs) {
            m["runs"].push_back(run_json(r));
            if (!r.admitted) continue;
            inv_b += r.invariance.invariance_breaches;
            con_b += r.invariance.constraint_breaches;
            infeas += r.invariance.infeasible_steps;
            unsafe += r.invariance.safe() ? 0 : 1;
        }
        m["unfiltered"] = ms.unfiltered ? run_json(*ms.unfiltered) : json(nullptr);
        if (ms.sweep) {
            m["adversarial"] = {{"grid", ss.adversarial_grid},
                                {"nominal", vec_json(ctx.inst.input_box.upper())},
                                {"runs", ms.sweep->runs},
                                {"unsafe_runs", ms.sweep->unsafe},
                                {"infeasible_steps", ms.sweep->infeasible_steps},
                                {"runs_with_infeasible_steps", ms.sweep->runs_with_infeasible},
                                {"file", "adversarial.csv"}};
        } else {
            m["adversarial"] = nullptr;
        }
        m["breach_summary"] = {{"filtered_runs_unsafe", unsafe},
                               {"invariance_breaches", inv_b},
                               {"constraint_breaches", con_b},
                               {"infeasible_steps", infeas}};
        write_text_file(dir / "manifest.json", m.dump(2) + "\n");
    }
    return ms;
}

FitResult load_fit(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw IntegrityError("candidates file " + path.string() + " not found");
    return parse_fit_result(read_text_file(path));
}

// ---- report ------------------------------------------------------------------------------

// The acceptance targets below refer to this exact plant, box and input range.
bool reference_setup(const PipelineConfig& cfg, const SystemInstance& inst) {
    if (cfg.system_name != "double_integrator") return false;
    const ParamTable& p = inst.params;
    auto is = [&](const char* k, double v) { return p.contains(k) && p.at(k) == v; };
    Vec lo(2), hi(2);
    lo << -10.0, -40.0;
    hi << 0.0, 40.0;
    return is("gamma1", 0.0) && is("gamma2", 0.1) && is("u_min", -300.0) && is("u_max", 300.0) &&
           cfg.sampling.bounds == BoxSet(lo, hi);
}

struct Row {
    std::string criterion;
    std::string measured;
    std::string result;  // PASS, FAIL or n/a
};

const char* verdict(bool ok) { return ok ? "PASS" : "FAIL"; }

struct PipelineState {
    SampleSet samples;
    std::string samples_checksum;
    BoundarySet boundary;
    std::map<FitMode, FitResult> fits;
    std::map<FitMode, ModeSimulation> sims;
    std::optional<QpSelfCheck> qp;
    std::optional<bool> deterministic;
    std::vector<std::string> determinism_notes;
};

std::vector<Row> acceptance_rows(const Context& ctx, const PipelineState& st) {
    std::vector<Row> rows;
    const bool ref = reference_setup(ctx.cfg, ctx.inst);
    const std::string na = "n/a";
    const SampleSet& s = st.samples;

    {
        const double j = s.tracker.jaccard();
        const std::size_t n = s.records.size();
        const bool ok = s.converged && n <= 177147 && std::abs(j - 0.819) <= 0.02;
        rows.push_back({"1. Jaccard convergence by n = 3^11, J = 0.819 ± 0.02",
                        std::string(s.converged ? "converged" : "not converged") + " at n = " +
                            std::to_string(n) + ", J = " + fixed(j, 5),
                        ref ? verdict(ok) : na});
    }
    {
        double cap = -std::numeric_limits<double>::infinity();
        for (const Vec& x : st.boundary.points) {
            if (x.size() >= 2 && x[0] < -3.5) cap = std::max(cap, x[1]);
        }
        const bool ok = std::isfinite(cap) && std::abs(cap - 30.0) <= 1.5;
        rows.push_back({"2. Velocity cap from the boundary (x < -3.5) = 30 ± 1.5",
                        "max velocity " + fixed(cap, 5), ref ? verdict(ok) : na});
    }
    if (st.qp) {
        const QpSelfCheck& q = *st.qp;
        rows.push_back({"3. QP solver certificates on random problems (grid oracle: test suite)",
                        std::to_string(q.problems) + " problems, " + std::to_string(q.optimal) +
                            " optimal / " + std::to_string(q.infeasible) +
                            " infeasible, max KKT residual " + fixed(q.max_kkt_residual, 3),
                        verdict(q.failures == 0 && q.max_kkt_residual <= 1e-8)});
    } else {
        rows.push_back({"3. QP solver certificates on random problems", "not run", na});
    }
    {
        auto obj = [&](FitMode m) -> std::optional<double> {
            auto it = st.fits.find(m);
            if (it == st.fits.end()) return std::nullopt;
            return it->second.objective_value;
        };
        const auto u = obj(FitMode::Uniform), nu = obj(FitMode::NonUniform), mu = obj(FitMode::Multi);
        if (u && nu && mu) {
            const bool ok = *mu >= *nu && *nu >= 0.98 * *u && *mu >= 0.95 * 655.0;
            rows.push_back({"4. Multi >= NonUniform >= Uniform - 2%, Multi >= 0.95 * 655",
                            "uniform " + fixed(*u, 5) + ", non-uniform " + fixed(*nu, 5) +
                                ", multi " + fixed(*mu, 5),
                            ref ? verdict(ok) : na});
        } else {
            rows.push_back({"4. Fit mode ordering", "needs all three modes", na});
        }
    }
    {
        bool ok = true;
        std::size_t runs = 0, breaches = 0, infeasible = 0;
        for (const auto& [mode, ms] : st.sims) {
            for (const RunSummary& r : ms.runs) {
                if (!r.admitted) continue;
                ++runs;
                breaches += r.invariance.safe() ? 0 : 1;
                infeasible += r.invariance.infeasible_steps;
            }
        }
        ok = breaches == 0 && infeasible == 0 && runs > 0;
        std::string measured = std::to_string(runs) + " admitted runs, " + std::to_string(breaches) +
                               " with breaches, " + std::to_string(infeasible) + " infeasible steps";
        auto multi = st.sims.find(FitMode::Multi);
        if (multi != st.sims.end()) {
            std::size_t reached = 0, admitted = 0;
            for (const RunSummary& r : multi->second.runs) {
                if (!r.admitted) continue;
                ++admitted;
                const Eigen::Index m = ctx.inst.model.m;
                if ((r.terminal.head(m) - ctx.cfg.simulate.goal.head(m)).norm() <=
                    ctx.cfg.simulate.goal_radius) {
                    ++reached;
                }
            }
            measured += "; multi: " + std::to_string(admitted) + "/" +
                        std::to_string(multi->second.runs.size()) + " starts admitted, " +
                        std::to_string(reached) + " end within " +
                        fixed(ctx.cfg.simulate.goal_radius) + " of the goal";
            ok = ok && admitted == multi->second.runs.size() && reached == admitted;
        } else {
            ok = false;
        }
        rows.push_back({"5. Closed-loop safety, multi reaches the goal", measured, verdict(ok)});
    }
    {
        auto multi = st.sims.find(FitMode::Multi);
        if (multi != st.sims.end() && multi->second.unfiltered && !multi->second.runs.empty()) {
            const RunSummary& unf = *multi->second.unfiltered;
            const RunSummary& filt = multi->second.runs.front();
            const bool ok = unf.invariance.constraint_breaches > 0 && filt.admitted &&
                            filt.invariance.safe();
            rows.push_back({"6. Unfiltered run breaches, filtered run does not",
                            "unfiltered min z " + fixed(unf.invariance.min_z) +
                                ", filtered min z " +
                                (filt.admitted ? fixed(filt.invariance.min_z) : std::string("n/a")),
                            verdict(ok)});
        } else {
            rows.push_back({"6. Unfiltered run breaches, filtered run does not", "not run", na});
        }
    }
    {
        std::string measured;
        bool ok = true, any = false;
        for (FitMode m : {FitMode::NonUniform, FitMode::Multi}) {
            auto it = st.sims.find(m);
            if (it == st.sims.end() || !it->second.sweep) {
                ok = false;
                continue;
            }
            any = true;
            const SweepSummary& sw = *it->second.sweep;
            if (!measured.empty()) measured += "; ";
            measured += std::string(to_string(m)) + ": " + std::to_string(sw.unsafe) + " unsafe / " +
                        std::to_string(sw.runs) + ", " + std::to_string(sw.infeasible_steps) +
                        " infeasible steps";
            ok = ok && sw.unsafe == 0 && sw.infeasible_steps == 0 && sw.runs > 0;
        }
        rows.push_back({"7. Adversarial sweep (u = u_max), non-uniform and multi",
                        any ? measured : "not run", any ? verdict(ok) : na});
    }
    if (st.deterministic) {
        std::string measured = *st.deterministic ? "in-memory rerun matched every artifact byte for byte"
                                                 : "rerun differed:";
        for (const std::string& n : st.determinism_notes) measured += " " + n;
        rows.push_back({"8. Determinism", measured, verdict(*st.deterministic)});
    } else {
        rows.push_back({"8. Determinism", "not checked (report.verify_determinism = false)", na});
    }
    return rows;
}

std::string report_markdown(const Context& ctx, const PipelineState& st) {
    const PipelineConfig& cfg = ctx.cfg;
    std::string out = "# CBF synthesis report\n\n";
    out += "- system: `" + cfg.system_name + "`";
    for (const auto& [k, v] : ctx.inst.params) out += ", " + k + " = " + fixed(v, 6);
    out += "\n- config digest: `" + fnv1a_hex(ctx.echo().dump()) + "`\n";
    out += "- sampling box: " + vec_text(cfg.sampling.bounds.lower()) + " to " +
           vec_text(cfg.sampling.bounds.upper()) + ", seed " + std::to_string(cfg.sampling.seed) + "\n\n";

    out += "## Sampling\n\n| n | J | dJ |\n|---|---|---|\n";
    const auto& hist = st.samples.tracker.history();
    for (std::size_t i = 0; i < hist.size(); ++i) {
        out += "| " + std::to_string(hist[i].n) + " | " + fixed(hist[i].jaccard, 6) + " | " +
               (i ? fixed(std::abs(hist[i].jaccard - hist[i - 1].jaccard), 3) : std::string("")) +
               " |\n";
    }
    out += std::string("\n") + (st.samples.converged ? "Converged" : "Not converged") + " with " +
           std::to_string(st.samples.records.size()) + " samples; sample checksum `" +
           st.samples_checksum + "`.\n\n";

    out += "## Boundary\n\n" + std::to_string(st.boundary.points.size()) +
           " boundary points, epsilon " + fixed(st.boundary.epsilon, 6) + " (normalized, " +
           (cfg.boundary.epsilon > 0.0 ? "configured" : "auto") + "), box faces " +
           (st.boundary.box_face_is_boundary ? "included" : "excluded") + ".\n\n";

    out += "## Fits\n\n| mode | feasible | objective | containment | boundary CBF | scaling cond. |\n";
    out += "|---|---|---|---|---|---|\n";
    for (const auto& [mode, r] : st.fits) {
        const VerificationReport& v = r.verification;
        out += std::string("| ") + to_string(mode) + " | " + (r.feasible ? "yes" : "no") + " | " +
               fixed(r.objective_value, 6) + " | " + fixed(v.containment_fraction, 6) + " | " +
               fixed(v.boundary_cbf_feasible_fraction, 6) + " | " +
               fixed(v.prop2_feasible_fraction, 6) + " |\n";
    }
    out += "\nCandidates h(x) = z(scale * x + shift) + offset:\n\n";
    for (const auto& [mode, r] : st.fits) {
        for (const CbfCandidate& c : r.candidates) {
            out += std::string("- ") + to_string(mode) + ": scale " + vec_text(c.scale, 6) +
                   ", shift " + vec_text(c.shift, 6) + ", offset " + fixed(c.offset, 6) + "\n";
        }
    }

    out += "\n## Closed loop\n\n| mode | start | admitted | min z | min h | breaches | infeasible | terminal |\n";
    out += "|---|---|---|---|---|---|---|---|\n";
    for (const auto& [mode, ms] : st.sims) {
        for (const RunSummary* r = ms.runs.data(); r != ms.runs.data() + ms.runs.size(); ++r) {
            out += std::string("| ") + to_string(mode) + " | " + vec_text(r->start) + " | ";
            if (!r->admitted) {
                out += "no | | | | | |\n";
                continue;
            }
            const InvarianceReport& inv = r->invariance;
            out += "yes | " + fixed(inv.min_z) + " | " +
                   fixed(*std::min_element(inv.min_h.begin(), inv.min_h.end())) + " | " +
                   std::to_string(inv.invariance_breaches + inv.constraint_breaches) + " | " +
                   std::to_string(inv.infeasible_steps) + " | " + vec_text(r->terminal) + " |\n";
        }
    }
    for (const auto& [mode, ms] : st.sims) {
        if (ms.unfiltered) {
            out += std::string("\nUnfiltered tracking from ") + vec_text(ms.unfiltered->start) +
                   ": min z " + fixed(ms.unfiltered->invariance.min_z) + ", " +
                   std::to_string(ms.unfiltered->invariance.constraint_breaches) +
                   " steps outside the constraint set.\n";
            break;
        }
    }
    bool header = false;
    for (const auto& [mode, ms] : st.sims) {
        if (!ms.sweep) continue;
        if (!header) {
            out += "\n| adversarial sweep | runs | unsafe | infeasible steps |\n|---|---|---|---|\n";
            header = true;
        }
        out += std::string("| ") + to_string(mode) + " | " + std::to_string(ms.sweep->runs) + " | " +
               std::to_string(ms.sweep->unsafe) + " | " + std::to_string(ms.sweep->infeasible_steps) +
               " |\n";
    }

    out += "\n## Acceptance\n\n";
    if (!reference_setup(cfg, ctx.inst)) {
        out += "Rows with numeric targets refer to the reference double-integrator setup and are "
               "marked n/a for this configuration.\n\n";
    }
    out += "| criterion | measured | result |\n|---|---|---|\n";
    for (const Row& r : acceptance_rows(ctx, st)) {
        out += "| " + r.criterion + " | " + r.measured + " | " + r.result + " |\n";
    }
    return out;
}

}  // namespace

QpSelfCheck qp_self_check(int problems, std::uint64_t seed) {
    QpSelfCheck out;
    const CounterRng root(seed);
    for (int p = 0; p < problems; ++p) {
        const CounterRng rng = root.split(static_cast<std::uint64_t>(p));
        std::uint64_t c = 0;
        auto draw = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(c++); };
        const Eigen::Index m = 1 + p % 3;
        const Eigen::Index k = p % 5;
        Mat L(m, m);
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < m; ++j) L(i, j) = draw(-1.0, 1.0);
        }
        if (p % 4 == 0) L.col(0).setZero();  // semidefinite Hessian
        QpProblem qp;
        qp.hessian = L * L.transpose();
        qp.linear = Vec(m);
        for (Eigen::Index i = 0; i < m; ++i) qp.linear[i] = draw(-5.0, 5.0);
        qp.ineq_rows = Mat(k, m);
        qp.ineq_rhs = Vec(k);
        for (Eigen::Index r = 0; r < k; ++r) {
            for (Eigen::Index j = 0; j < m; ++j) qp.ineq_rows(r, j) = draw(-1.0, 1.0);
            qp.ineq_rhs[r] = draw(-2.0, p % 3 == 0 ? 4.0 : 1.0);
        }
        Vec lo(m), hi(m);
        for (Eigen::Index j = 0; j < m; ++j) {
            lo[j] = draw(-3.0, -0.5);
            hi[j] = draw(0.5, 3.0);
        }
        qp.box = BoxSet(lo, hi);

        const QpSolution s = solve_box_qp(qp);
        ++out.problems;
        if (s.status == QpStatus::Infeasible) {
            ++out.infeasible;
            if (!(s.farkas_gap > 0.0)) ++out.failures;
            continue;
        }
        ++out.optimal;
        const Vec& u = s.argmin;
        const Vec slack = k ? Vec(qp.ineq_rows * u - qp.ineq_rhs) : Vec(0);
        Vec grad = qp.hessian * u + qp.linear - s.lower_multipliers + s.upper_multipliers;
        if (k) grad -= qp.ineq_rows.transpose() * s.row_multipliers;
        double res = grad.cwiseAbs().maxCoeff();
        for (Eigen::Index r = 0; r < k; ++r) {
            res = std::max({res, -slack[r], -s.row_multipliers[r],
                            std::abs(s.row_multipliers[r] * slack[r])});
        }
        for (Eigen::Index j = 0; j < m; ++j) {
            res = std::max({res, lo[j] - u[j], u[j] - hi[j], -s.lower_multipliers[j],
                            -s.upper_multipliers[j],
                            std::abs(s.lower_multipliers[j] * (u[j] - lo[j])),
                            std::abs(s.upper_multipliers[j] * (hi[j] - u[j]))});
        }
        out.max_kkt_residual = std::max(out.max_kkt_residual, res);
        if (!(res <= 1e-8)) ++out.failures;
    }
    return out;
}

void override_seed(PipelineConfig& cfg, std::uint64_t seed) {
    cfg.sampling.seed = seed;
    cfg.fit.search.seed = seed;
}

int cmd_sample(const PipelineConfig& cfg, const RunOptions& opts) {
    const Context ctx(cfg, opts);
    if (opts.dry_run) {
        ctx.log("[dry-run] would sample into " + (ctx.out / artifact::samples).string());
        return kExitOk;
    }
    const Clock clock;
    const SampleSet s = compute_samples(ctx);
    const std::string text = samples_text(ctx, s);
    write_text_file(ctx.out / artifact::samples, text);
    write_text_file(ctx.out / artifact::convergence, convergence_csv(s));
    StageCache cache(ctx.out);
    cache.record("samples", ctx.sampling_key(), artifact::samples, fnv1a_hex(text));
    cache.save();
    ctx.log("[sample] n = " + std::to_string(s.records.size()) + ", J = " +
            fixed(s.tracker.jaccard(), 6) + (s.converged ? ", converged" : ", NOT converged") +
            " (" + fixed(clock.seconds(), 3) + " s)");
    return s.converged ? kExitOk : kExitNotConverged;
}

int cmd_boundary(const PipelineConfig& cfg, const RunOptions& opts) {
    const Context ctx(cfg, opts);
    const fs::path in = opts.samples.value_or(ctx.out / artifact::samples);
    try {
        if (opts.dry_run) {
            if (!fs::is_regular_file(in)) throw IntegrityError("sample file " + in.string() + " not found");
            ctx.log("[dry-run] would extract the boundary of " + in.string());
            return kExitOk;
        }
        const LoadedSamples ls = load_samples(ctx, in);
        const BoundarySet b = compute_boundary(ctx, ls.set);
        write_text_file(ctx.out / artifact::boundary, boundary_text(b));
        write_text_file(ctx.out / artifact::boundary_summary, boundary_summary(ctx, ls.set, b));
        if (b.empty_warning || b.points.empty()) ctx.log("[boundary] warning: empty boundary");
        ctx.log("[boundary] " + std::to_string(b.points.size()) + " points, epsilon " +
                fixed(b.epsilon, 6));
        return kExitOk;
    } catch (const IntegrityError& e) {
        ctx.log(std::string("[boundary] ") + e.what());
        return kExitIntegrity;
    }
}

int cmd_fit(const PipelineConfig& cfg, const RunOptions& opts) {
    const Context ctx(cfg, opts);
    const fs::path sp = opts.samples.value_or(ctx.out / artifact::samples);
    const fs::path bp = opts.boundary.value_or(ctx.out / artifact::boundary);
    try {
        if (opts.dry_run) {
            for (const fs::path& p : {sp, bp}) {
                if (!fs::is_regular_file(p)) throw IntegrityError(p.string() + " not found");
            }
            ctx.log("[dry-run] would fit " + std::to_string(cfg.fit_modes.size()) + " mode(s)");
            return kExitOk;
        }
        const LoadedSamples ls = load_samples(ctx, sp);
        const BoundarySet b = load_boundary(bp, ls);
        std::map<FitMode, FitResult> done;
        int code = kExitOk;
        for (FitMode mode : ordered_modes(cfg)) {
            const Clock clock;
            FitResult r = compute_fit(ctx, ls.set, b, mode, warm_start_for(mode, done));
            write_text_file(ctx.out / artifact::fit_json(mode), fit_result_json(r));
            write_text_file(ctx.out / artifact::fit_report(mode), fit_markdown(r));
            ctx.log(std::string("[fit] ") + to_string(mode) + ": objective " +
                    fixed(r.objective_value, 6) + (r.feasible ? "" : " (INFEASIBLE)") + " (" +
                    fixed(clock.seconds(), 3) + " s)");
            if (!r.feasible) code = kExitInfeasibleFit;
            done.emplace(mode, std::move(r));
        }
        return code;
    } catch (const IntegrityError& e) {
        ctx.log(std::string("[fit] ") + e.what());
        return kExitIntegrity;
    }
}

int cmd_simulate(const PipelineConfig& cfg, const RunOptions& opts) {
    const Context ctx(cfg, opts);
    std::vector<fs::path> files = opts.candidates;
    if (files.empty()) {
        for (FitMode m : ordered_modes(cfg)) files.push_back(ctx.out / artifact::fit_json(m));
    }
    try {
        std::vector<std::pair<FitResult, fs::path>> inputs;
        for (const fs::path& f : files) inputs.emplace_back(load_fit(f), f);
        if (opts.dry_run) {
            ctx.log("[dry-run] would simulate " + std::to_string(inputs.size()) + " candidate file(s)");
            return kExitOk;
        }
        for (const auto& [fit, file] : inputs) {
            const std::string checksum = fnv1a_hex(read_text_file(file));
            run_simulations(ctx, fit.mode, fit.candidates, file, checksum, true);
        }
        return kExitOk;
    } catch (const IntegrityError& e) {
        ctx.log(std::string("[simulate] ") + e.what());
        return kExitIntegrity;
    }
}

int cmd_pipeline(const PipelineConfig& cfg, const RunOptions& opts) {
    const Context ctx(cfg, opts);
    StageCache cache(ctx.out);
    const json echo = ctx.echo();
    const std::string sample_key = ctx.sampling_key();

    if (opts.dry_run) {
        ctx.log(std::string("[dry-run] samples: ") + (cache.fresh("samples", sample_key) ? "reuse" : "run"));
        ctx.log("[dry-run] then boundary, fit (" + std::to_string(cfg.fit_modes.size()) +
                " modes), simulate and report into " + ctx.out.string());
        return kExitOk;
    }

    PipelineState st;
    const Clock total;
    // samples
    {
        const Clock clock;
        const fs::path path = ctx.out / artifact::samples;
        bool reused = false;
        if (cache.fresh("samples", sample_key)) {
            try {
                LoadedSamples ls = load_samples(ctx, path);
                st.samples = std::move(ls.set);
                reused = true;
            } catch (const IntegrityError&) {
            }
        }
        if (!reused) {
            st.samples = compute_samples(ctx);
            const std::string text = samples_text(ctx, st.samples);
            write_text_file(path, text);
            write_text_file(ctx.out / artifact::convergence, convergence_csv(st.samples));
            cache.record("samples", sample_key, artifact::samples, fnv1a_hex(text));
            cache.save();
        }
        st.samples_checksum = sample_records_checksum(st.samples);
        ctx.log(std::string("[sample] ") + (reused ? "reused" : "computed") + ": n = " +
                std::to_string(st.samples.records.size()) + ", J = " +
                fixed(st.samples.tracker.jaccard(), 6) + " (" + fixed(clock.seconds(), 3) + " s)");
        if (!st.samples.converged) return kExitNotConverged;
    }
    const std::string samples_digest = fnv1a_hex(read_text_file(ctx.out / artifact::samples));
    // boundary
    {
        const std::string key = fnv1a_hex(json{{"boundary", echo["boundary"]}, {"samples", samples_digest}}.dump());
        const fs::path path = ctx.out / artifact::boundary;
        bool reused = false;
        if (cache.fresh("boundary", key)) {
            try {
                std::istringstream in(read_text_file(path));
                st.boundary = read_boundary(in);
                reused = st.boundary.source_checksum == st.samples_checksum;
            } catch (const IntegrityError&) {
            }
        }
        if (!reused) {
            st.boundary = compute_boundary(ctx, st.samples);
            const std::string text = boundary_text(st.boundary);
            write_text_file(path, text);
            write_text_file(ctx.out / artifact::boundary_summary,
                            boundary_summary(ctx, st.samples, st.boundary));
            cache.record("boundary", key, artifact::boundary, fnv1a_hex(text));
            cache.save();
        }
        ctx.log(std::string("[boundary] ") + (reused ? "reused" : "computed") + ": " +
                std::to_string(st.boundary.points.size()) + " points");
        if (st.boundary.points.empty()) ctx.log("[boundary] warning: empty boundary");
    }
    const std::string boundary_digest = fnv1a_hex(read_text_file(ctx.out / artifact::boundary));
    // fits
    std::map<FitMode, std::string> fit_digests;
    for (FitMode mode : ordered_modes(cfg)) {
        const Clock clock;
        const std::optional<CbfCandidate> warm = warm_start_for(mode, st.fits);
        json key_doc{{"fit", echo["fit"]},
                     {"mode", to_string(mode)},
                     {"samples", samples_digest},
                     {"boundary", boundary_digest}};
        if (mode == FitMode::NonUniform && fit_digests.contains(FitMode::Uniform)) {
            key_doc["warm"] = fit_digests[FitMode::Uniform];
        }
        if (mode == FitMode::Multi) {
            for (FitMode w : {FitMode::NonUniform, FitMode::Uniform}) {
                if (fit_digests.contains(w)) {
                    key_doc["warm"] = fit_digests[w];
                    break;
                }
            }
        }
        const std::string key = fnv1a_hex(key_doc.dump());
        const std::string stage = std::string("fit_") + to_string(mode);
        const fs::path path = ctx.out / artifact::fit_json(mode);
        bool reused = false;
        FitResult r;
        if (cache.fresh(stage, key)) {
            try {
                r = load_fit(path);
                reused = r.mode == mode;
            } catch (const IntegrityError&) {
            }
        }
        if (!reused) {
            r = compute_fit(ctx, st.samples, st.boundary, mode, warm);
            const std::string text = fit_result_json(r);
            write_text_file(path, text);
            write_text_file(ctx.out / artifact::fit_report(mode), fit_markdown(r));
            cache.record(stage, key, artifact::fit_json(mode), fnv1a_hex(text));
            cache.save();
        }
        fit_digests[mode] = fnv1a_hex(read_text_file(path));
        ctx.log(std::string("[fit] ") + to_string(mode) + (reused ? " reused" : " computed") +
                ": objective " + fixed(r.objective_value, 6) + " (" + fixed(clock.seconds(), 3) + " s)");
        const bool feasible = r.feasible;
        st.fits.emplace(mode, std::move(r));
        if (!feasible) return kExitInfeasibleFit;
    }
    // simulations
    for (const auto& [mode, r] : st.fits) {
        const fs::path file = ctx.out / artifact::fit_json(mode);
        st.sims.emplace(mode, run_simulations(ctx, mode, r.candidates, file, fit_digests[mode], true));
    }
    if (cfg.report.qp_checks > 0) st.qp = qp_self_check(cfg.report.qp_checks, cfg.sampling.seed);

    if (cfg.report.verify_determinism) {
        const Clock clock;
        bool same = true;
        auto compare = [&](const std::string& name, const std::string& fresh) {
            if (read_text_file(ctx.out / name) != fresh) {
                same = false;
                st.determinism_notes.push_back(name);
            }
        };
        const SampleSet s2 = compute_samples(ctx);
        compare(artifact::samples, samples_text(ctx, s2));
        const BoundarySet b2 = compute_boundary(ctx, s2);
        compare(artifact::boundary, boundary_text(b2));
        std::map<FitMode, FitResult> again;
        for (FitMode mode : ordered_modes(cfg)) {
            FitResult r2 = compute_fit(ctx, s2, b2, mode, warm_start_for(mode, again));
            compare(artifact::fit_json(mode), fit_result_json(r2));
            if (!cfg.simulate.starts.empty()) {
                const Vec& start = cfg.simulate.starts.front();
                try {
                    const Trajectory tr = simulate(sim_config(ctx, start), ctx.inst.model,
                                                   r2.candidates, filter_config(ctx, r2.candidates.size()));
                    compare(artifact::sim_dir(mode) + "/start_1.csv", trajectory_csv(tr));
                } catch (const SafeStartError&) {
                }
            }
            again.emplace(mode, std::move(r2));
        }
        st.deterministic = same;
        ctx.log(std::string("[report] determinism rerun ") + (same ? "matched" : "DIFFERED") + " (" +
                fixed(clock.seconds(), 3) + " s)");
    }
    write_text_file(ctx.out / artifact::report, report_markdown(ctx, st));
    ctx.log("[pipeline] done in " + fixed(total.seconds(), 3) + " s; report at " +
            (ctx.out / artifact::report).string());
    return kExitOk;
}

}  // namespace cbfsyn
