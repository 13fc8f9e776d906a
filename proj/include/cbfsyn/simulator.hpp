#pragma once

#include "cbfsyn/system.hpp"
#include "cbfsyn/types.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbfsyn {

enum class StepStatus { Optimal, Infeasible, Relaxed, Unfiltered };

const char* to_string(StepStatus status);
StepStatus step_status_from_string(const std::string& name);

struct FilterConfig {
    std::vector<double> alphas;  // linear class-K gains, one per candidate
    BoxSet input_box;
    std::optional<double> relaxation;  // slack weight; unset = hard rows
    // When simulating, also require the RK4-predicted next state to satisfy the discrete
    // comparison h(x+) >= (1 - kappa dt) h(x), adding linearized rows as needed.
    bool step_correction = true;
    int correction_rounds = 4;

    void validate(std::size_t candidates) const;
};

struct FilterResult {
    Vec input;
    StepStatus status = StepStatus::Optimal;
    double slack = 0.0;
    int correction_rows = 0;
    bool correction_failed = false;
};

/// Cubic position reference with zero end slopes, held at the goal after T.
class ReferenceSpline {
public:
    ReferenceSpline(Vec start, Vec goal, double duration);
    Vec operator()(double t) const;
    Vec velocity(double t) const;

private:
    Vec start_;
    Vec goal_;
    double duration_;
};

/// Positions are the first m state components (m = size of the reference).
Vec nominal_controller(const Vec& x, const Vec& reference, double kp);

/// min ||u - u_nom||^2 over the input box subject to
///   dh_j/dx g(x) u >= -kappa_j h_j(x) - dh_j/dx f(x)   for every candidate.
/// With dt > 0 and step_correction on, rows from the discrete comparison are appended.
FilterResult safety_filter(const Vec& x, const Vec& u_nom, const std::vector<CbfCandidate>& cands,
                           const SystemModel& sys, const FilterConfig& fc, double dt = 0.0);

/// Classical RK4 with the input held over the step.
Vec rk4_step(const SystemModel& sys, const Vec& x, const Vec& u, double dt);

class SafeStartError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SimConfig {
    Vec x_init;
    Vec x_goal;
    double horizon = 10.0;
    double dt = 0.01;
    double kp = 10.0;
    double spline_duration = 0.0;  // <= 0 selects horizon / 2
    bool require_safe_start = true;
    bool filter_enabled = true;
    std::optional<Vec> constant_nominal;  // replaces the P controller (adversarial runs)
    bool stop_on_infeasible = false;      // end the run at the first Infeasible filter step

    void validate(const SystemModel& sys) const;
    std::size_t steps() const;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> states;
    std::vector<Vec> nominal_inputs;
    std::vector<Vec> filtered_inputs;
    std::vector<Vec> h_values;
    std::vector<double> z_values;
    std::vector<StepStatus> statuses;
    int correction_failures = 0;
};

Trajectory simulate(const SimConfig& cfg, const SystemModel& sys,
                    const std::vector<CbfCandidate>& cands, const FilterConfig& fc);

struct InvarianceReport {
    std::vector<double> min_h;  // per candidate
    double min_z = 0.0;
    std::size_t invariance_breaches = 0;  // steps with min_j h_j < -tol_h
    std::size_t constraint_breaches = 0;  // steps with z < -tol_z
    std::size_t infeasible_steps = 0;
    std::optional<double> first_breach_time;
    bool safe() const { return invariance_breaches == 0 && constraint_breaches == 0; }
};

InvarianceReport check_invariance(const Trajectory& traj, double tol_h = 1e-6,
                                  double tol_z = 1e-6);

/// Steps k (both ends filtered Optimal) with h_j(k+1) < (1 - kappa_j dt) h_j(k) - tol (1 + |h_j(k)|).
std::size_t alpha_monotonicity_violations(const Trajectory& traj, const std::vector<double>& alphas,
                                          double dt, double tol = 1e-6);

std::string trajectory_csv(const Trajectory& traj);

}  // namespace cbfsyn
