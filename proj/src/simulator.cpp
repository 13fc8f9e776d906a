#include "cbfsyn/simulator.hpp"

#include "cbfsyn/qp.hpp"
#include "cbfsyn/serialization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cbfsyn {

namespace {

Vec checked(Vec v, const char* what) {
    if (!v.allFinite()) throw std::domain_error(std::string("non-finite ") + what);
    return v;
}

struct FilterRows {
    Mat rows;
    Vec rhs;
};

QpSolution solve_filter_qp(const Vec& u_nom, const FilterRows& fr, const FilterConfig& fc,
                           double* slack) {
    const Eigen::Index m = u_nom.size();
    const Eigen::Index k = fr.rows.rows();
    QpProblem qp;
    if (!fc.relaxation) {
        qp.hessian = 2.0 * Mat::Identity(m, m);
        qp.linear = -2.0 * u_nom;
        qp.constant = u_nom.squaredNorm();
        qp.ineq_rows = fr.rows;
        qp.ineq_rhs = fr.rhs;
        qp.box = fc.input_box;
        *slack = 0.0;
        return solve_box_qp(qp);
    }
    // one shared slack s >= 0 added to every row, priced at weight * s^2
    qp.hessian = Mat::Zero(m + 1, m + 1);
    qp.hessian.topLeftCorner(m, m) = 2.0 * Mat::Identity(m, m);
    qp.hessian(m, m) = 2.0 * *fc.relaxation;
    qp.linear = Vec::Zero(m + 1);
    qp.linear.head(m) = -2.0 * u_nom;
    qp.constant = u_nom.squaredNorm();
    qp.ineq_rows = Mat::Zero(k, m + 1);
    qp.ineq_rows.leftCols(m) = fr.rows;
    qp.ineq_rows.col(m).setOnes();
    qp.ineq_rhs = fr.rhs;
    const double span = 1e6 * (1.0 + (k ? fr.rhs.cwiseAbs().maxCoeff() : 0.0));
    Vec lo(m + 1), hi(m + 1);
    lo << fc.input_box.lower(), 0.0;
    hi << fc.input_box.upper(), span;
    qp.box = BoxSet(lo, hi);
    QpSolution sol = solve_box_qp(qp);
    *slack = sol.argmin[m];
    sol.argmin = Vec(sol.argmin.head(m));
    return sol;
}

// d x+ / d u by central differences of the RK4 map (exact for dynamics affine in u).
Mat step_sensitivity(const SystemModel& sys, const Vec& x, const Vec& u, double dt) {
    Mat out(x.size(), u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        const double h = 1e-4 * (1.0 + std::abs(u[i]));
        Vec up = u, dn = u;
        up[i] += h;
        dn[i] -= h;
        out.col(i) = (rk4_step(sys, x, up, dt) - rk4_step(sys, x, dn, dt)) / (2.0 * h);
    }
    return out;
}

}  // namespace

const char* to_string(StepStatus status) {
    switch (status) {
        case StepStatus::Optimal: return "optimal";
        case StepStatus::Infeasible: return "infeasible";
        case StepStatus::Relaxed: return "relaxed";
        case StepStatus::Unfiltered: return "unfiltered";
    }
    return "?";
}

StepStatus step_status_from_string(const std::string& name) {
    for (StepStatus s : {StepStatus::Optimal, StepStatus::Infeasible, StepStatus::Relaxed,
                         StepStatus::Unfiltered}) {
        if (name == to_string(s)) return s;
    }
    throw std::invalid_argument("unknown step status '" + name + "'");
}

void FilterConfig::validate(std::size_t candidates) const {
    if (alphas.size() != candidates) {
        throw std::invalid_argument("filter needs one alpha per candidate");
    }
    for (double a : alphas) {
        if (!(a > 0.0) || !std::isfinite(a)) throw std::invalid_argument("alphas must be positive");
    }
    if (input_box.dim() == 0) throw std::invalid_argument("filter input box is empty");
    if (relaxation && !(*relaxation > 0.0)) {
        throw std::invalid_argument("relaxation weight must be positive");
    }
    if (correction_rounds < 0) throw std::invalid_argument("correction_rounds must be >= 0");
}

ReferenceSpline::ReferenceSpline(Vec start, Vec goal, double duration)
    : start_(std::move(start)), goal_(std::move(goal)), duration_(duration) {
    if (!(duration > 0.0)) throw std::invalid_argument("spline duration must be positive");
    if (start_.size() != goal_.size()) throw std::invalid_argument("spline end dimensions differ");
}

Vec ReferenceSpline::operator()(double t) const {
    const double s = std::clamp(t / duration_, 0.0, 1.0);
    return start_ + (goal_ - start_) * (s * s * (3.0 - 2.0 * s));
}

Vec ReferenceSpline::velocity(double t) const {
    if (t <= 0.0 || t >= duration_) return Vec::Zero(start_.size());
    const double s = t / duration_;
    return (goal_ - start_) * (6.0 * s * (1.0 - s) / duration_);
}

Vec nominal_controller(const Vec& x, const Vec& reference, double kp) {
    if (!(kp > 0.0)) throw std::invalid_argument("kp must be positive");
    if (reference.size() > x.size()) throw std::invalid_argument("reference longer than state");
    return kp * (reference - x.head(reference.size()));
}

Vec rk4_step(const SystemModel& sys, const Vec& x, const Vec& u, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
    auto rate = [&](const Vec& s) { return Vec(sys.drift(s) + sys.actuation(s) * u); };
    const Vec k1 = rate(x);
    const Vec k2 = rate(x + 0.5 * dt * k1);
    const Vec k3 = rate(x + 0.5 * dt * k2);
    const Vec k4 = rate(x + dt * k3);
    return checked(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), "state after integration");
}

FilterResult safety_filter(const Vec& x, const Vec& u_nom, const std::vector<CbfCandidate>& cands,
                           const SystemModel& sys, const FilterConfig& fc, double dt) {
    if (cands.empty()) throw std::invalid_argument("safety_filter: no candidates");
    fc.validate(cands.size());
    if (u_nom.size() != fc.input_box.dim()) {
        throw std::invalid_argument("safety_filter: input dimension mismatch");
    }
    const Vec f = checked(sys.drift(x), "drift");
    const Mat g = sys.actuation(x);
    if (!g.allFinite()) throw std::domain_error("non-finite actuation matrix");

    const auto s = static_cast<Eigen::Index>(cands.size());
    FilterRows fr{Mat(s, u_nom.size()), Vec(s)};
    std::vector<double> h(cands.size());
    for (Eigen::Index j = 0; j < s; ++j) {
        const auto& c = cands[static_cast<std::size_t>(j)];
        h[j] = eval_h(c, sys.hcf, x);
        const RowVec grad = eval_h_grad(c, sys.hcf, x);
        fr.rows.row(j) = grad * g;
        fr.rhs[j] = -fc.alphas[static_cast<std::size_t>(j)] * h[j] - grad.dot(f);
    }
    if (!fr.rows.allFinite() || !fr.rhs.allFinite()) throw std::domain_error("non-finite filter row");

    FilterResult out;
    const bool nominal_ok = fc.input_box.contains(u_nom) &&
                            ((fr.rows * u_nom - fr.rhs).array() >= 0.0).all();
    if (nominal_ok) {
        out.input = u_nom;
    } else {
        const QpSolution sol = solve_filter_qp(u_nom, fr, fc, &out.slack);
        out.input = fc.input_box.clamp(sol.argmin);
        if (sol.status == QpStatus::Infeasible) {
            out.status = StepStatus::Infeasible;
            return out;
        }
        if (out.slack > 1e-9) out.status = StepStatus::Relaxed;
    }
    if (!(dt > 0.0) || !fc.step_correction) return out;

    for (int round = 0; round < fc.correction_rounds; ++round) {
        const Vec next = rk4_step(sys, x, out.input, dt);
        std::vector<std::pair<RowVec, double>> extra;
        Mat sens;
        for (Eigen::Index j = 0; j < s; ++j) {
            const auto& c = cands[static_cast<std::size_t>(j)];
            const double target = (1.0 - fc.alphas[static_cast<std::size_t>(j)] * dt) * h[j];
            const double pad = 1e-9 * (1.0 + std::abs(h[j]));
            const double predicted = eval_h(c, sys.hcf, next);
            if (predicted >= target - pad) continue;
            if (sens.size() == 0) sens = step_sensitivity(sys, x, out.input, dt);
            const RowVec slope = eval_h_grad(c, sys.hcf, next) * sens;
            extra.emplace_back(slope, target + pad - predicted + slope.dot(out.input));
        }
        if (extra.empty()) return out;
        const Eigen::Index k = fr.rows.rows();
        FilterRows grown{Mat(k + static_cast<Eigen::Index>(extra.size()), u_nom.size()),
                         Vec(k + static_cast<Eigen::Index>(extra.size()))};
        grown.rows.topRows(k) = fr.rows;
        grown.rhs.head(k) = fr.rhs;
        for (std::size_t e = 0; e < extra.size(); ++e) {
            grown.rows.row(k + static_cast<Eigen::Index>(e)) = extra[e].first;
            grown.rhs[k + static_cast<Eigen::Index>(e)] = extra[e].second;
        }
        double slack = 0.0;
        const QpSolution sol = solve_filter_qp(u_nom, grown, fc, &slack);
        if (sol.status == QpStatus::Infeasible) {
            out.correction_failed = true;  // keep the continuous-time solution
            return out;
        }
        fr = std::move(grown);
        out.input = fc.input_box.clamp(sol.argmin);
        out.slack = slack;
        out.correction_rows += static_cast<int>(extra.size());
        if (slack > 1e-9) out.status = StepStatus::Relaxed;
    }
    const Vec next = rk4_step(sys, x, out.input, dt);
    for (Eigen::Index j = 0; j < s; ++j) {
        const double target = (1.0 - fc.alphas[static_cast<std::size_t>(j)] * dt) * h[j];
        if (eval_h(cands[static_cast<std::size_t>(j)], sys.hcf, next) <
            target - 1e-9 * (1.0 + std::abs(h[j]))) {
            out.correction_failed = true;
        }
    }
    return out;
}

void SimConfig::validate(const SystemModel& sys) const {
    if (x_init.size() != sys.n || x_goal.size() != sys.n) {
        throw std::invalid_argument("simulation states must match the system dimension");
    }
    if (!x_init.allFinite() || !x_goal.allFinite()) {
        throw std::invalid_argument("simulation states must be finite");
    }
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (!(horizon >= 0.0) || (horizon > 0.0 && horizon < dt)) {
        throw std::invalid_argument("horizon must be 0 or at least one step");
    }
    if (!(kp > 0.0)) throw std::invalid_argument("kp must be positive");
    if (sys.m > sys.n) throw std::invalid_argument("P controller needs m <= n");
    if (constant_nominal && constant_nominal->size() != sys.m) {
        throw std::invalid_argument("constant nominal input has the wrong dimension");
    }
}

std::size_t SimConfig::steps() const {
    return static_cast<std::size_t>(std::floor(horizon / dt + 1e-9));
}

Trajectory simulate(const SimConfig& cfg, const SystemModel& sys,
                    const std::vector<CbfCandidate>& cands, const FilterConfig& fc) {
    cfg.validate(sys);
    if (cfg.filter_enabled) fc.validate(cands.size());
    if (cfg.require_safe_start) {
        const double h0 = min_h(cands, sys.hcf, cfg.x_init);
        if (cands.empty() || h0 < 0.0) {
            throw SafeStartError("initial state lies outside the certified safe set (min h = " +
                                 format_real(cands.empty() ? -1.0 : h0) + ")");
        }
    }
    const double spline_t = cfg.spline_duration > 0.0 ? cfg.spline_duration
                                                      : std::max(cfg.horizon / 2.0, cfg.dt);
    const ReferenceSpline ref(cfg.x_init.head(sys.m), cfg.x_goal.head(sys.m), spline_t);

    Trajectory tr;
    const std::size_t steps = cfg.steps();
    Vec x = cfg.x_init;
    for (std::size_t k = 0; k <= steps; ++k) {
        const double t = static_cast<double>(k) * cfg.dt;
        Vec hv(static_cast<Eigen::Index>(cands.size()));
        for (std::size_t j = 0; j < cands.size(); ++j) {
            hv[static_cast<Eigen::Index>(j)] = eval_h(cands[j], sys.hcf, x);
        }
        const Vec u_nom =
            cfg.constant_nominal ? *cfg.constant_nominal : nominal_controller(x, ref(t), cfg.kp);
        Vec u;
        StepStatus status = StepStatus::Unfiltered;
        if (cfg.filter_enabled) {
            const FilterResult fr = safety_filter(x, u_nom, cands, sys, fc, cfg.dt);
            u = fr.input;
            status = fr.status;
            if (fr.correction_failed) ++tr.correction_failures;
        } else {
            u = fc.input_box.dim() == u_nom.size() ? fc.input_box.clamp(u_nom) : u_nom;
        }
        tr.times.push_back(t);
        tr.states.push_back(x);
        tr.nominal_inputs.push_back(u_nom);
        tr.filtered_inputs.push_back(u);
        tr.h_values.push_back(hv);
        tr.z_values.push_back(eval_z(sys.hcf, x));
        tr.statuses.push_back(status);
        if (status == StepStatus::Infeasible && cfg.stop_on_infeasible) break;
        if (k < steps) x = rk4_step(sys, x, u, cfg.dt);
    }
    return tr;
}

InvarianceReport check_invariance(const Trajectory& traj, double tol_h, double tol_z) {
    InvarianceReport rep;
    rep.min_z = std::numeric_limits<double>::infinity();
    const Eigen::Index s = traj.h_values.empty() ? 0 : traj.h_values.front().size();
    rep.min_h.assign(static_cast<std::size_t>(s), std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        const Vec& hv = traj.h_values[k];
        for (Eigen::Index j = 0; j < s; ++j) {
            rep.min_h[static_cast<std::size_t>(j)] =
                std::min(rep.min_h[static_cast<std::size_t>(j)], hv[j]);
        }
        rep.min_z = std::min(rep.min_z, traj.z_values[k]);
        const bool h_breach = s > 0 && hv.minCoeff() < -tol_h;
        const bool z_breach = traj.z_values[k] < -tol_z;
        rep.invariance_breaches += h_breach ? 1 : 0;
        rep.constraint_breaches += z_breach ? 1 : 0;
        if ((h_breach || z_breach) && !rep.first_breach_time) rep.first_breach_time = traj.times[k];
        if (traj.statuses[k] == StepStatus::Infeasible) ++rep.infeasible_steps;
    }
    return rep;
}

std::size_t alpha_monotonicity_violations(const Trajectory& traj, const std::vector<double>& alphas,
                                          double dt, double tol) {
    std::size_t count = 0;
    for (std::size_t k = 0; k + 1 < traj.states.size(); ++k) {
        if (traj.statuses[k] != StepStatus::Optimal || traj.statuses[k + 1] != StepStatus::Optimal) {
            continue;
        }
        for (std::size_t j = 0; j < alphas.size(); ++j) {
            const double now = traj.h_values[k][static_cast<Eigen::Index>(j)];
            const double next = traj.h_values[k + 1][static_cast<Eigen::Index>(j)];
            if (next < (1.0 - alphas[j] * dt) * now - tol * (1.0 + std::abs(now))) ++count;
        }
    }
    return count;
}

std::string trajectory_csv(const Trajectory& traj) {
    std::string out = "t";
    const Eigen::Index n = traj.states.empty() ? 0 : traj.states.front().size();
    const Eigen::Index m = traj.filtered_inputs.empty() ? 0 : traj.filtered_inputs.front().size();
    const Eigen::Index s = traj.h_values.empty() ? 0 : traj.h_values.front().size();
    for (Eigen::Index i = 0; i < n; ++i) out += ",x" + std::to_string(i + 1);
    for (Eigen::Index i = 0; i < m; ++i) out += ",u_nom_" + std::to_string(i + 1);
    for (Eigen::Index i = 0; i < m; ++i) out += ",u_" + std::to_string(i + 1);
    for (Eigen::Index i = 0; i < s; ++i) out += ",h_" + std::to_string(i + 1);
    out += ",z,status\n";
    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        append_real(out, traj.times[k]);
        for (Eigen::Index i = 0; i < n; ++i) {
            out += ',';
            append_real(out, traj.states[k][i]);
        }
        for (Eigen::Index i = 0; i < m; ++i) {
            out += ',';
            append_real(out, traj.nominal_inputs[k][i]);
        }
        for (Eigen::Index i = 0; i < m; ++i) {
            out += ',';
            append_real(out, traj.filtered_inputs[k][i]);
        }
        for (Eigen::Index i = 0; i < s; ++i) {
            out += ',';
            append_real(out, traj.h_values[k][i]);
        }
        out += ',';
        append_real(out, traj.z_values[k]);
        out += ',';
        out += to_string(traj.statuses[k]);
        out += '\n';
    }
    return out;
}

}  // namespace cbfsyn
