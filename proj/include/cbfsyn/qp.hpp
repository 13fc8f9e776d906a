#pragma once

#include "cbfsyn/system.hpp"
#include "cbfsyn/types.hpp"

namespace cbfsyn {

/// minimize 0.5 u'Hu + q'u + constant  s.t.  A u >= b,  u in box.
struct QpProblem {
    Mat hessian;
    Vec linear;
    double constant = 0.0;
    Mat ineq_rows;  // k x m, may have zero rows
    Vec ineq_rhs;   // k
    BoxSet box;
};

enum class QpStatus { Optimal, Infeasible };

const char* to_string(QpStatus status);

struct QpSolution {
    Vec argmin;
    double objective = 0.0;
    QpStatus status = QpStatus::Optimal;
    // KKT multipliers: H u + q - A'rows - lower + upper = 0, all entries >= 0.
    Vec row_multipliers;
    Vec lower_multipliers;
    Vec upper_multipliers;
    /// max_i (b_i - a_i u)^+ at argmin.
    double max_violation = 0.0;
    /// For Infeasible: w'b - max_{u in box} w'A u with w the phase-1 residual; positive certifies
    /// that no point of the box satisfies the rows.
    double farkas_gap = 0.0;
    int iterations = 0;
};

struct QpOptions {
    double feasibility_tol = 1e-9;
    int max_iterations = 0;  // 0 selects a size-based default
};

/// Small dense convex QP by a primal active-set method (handles semidefinite Hessians).
/// Infeasibility is detected by a least-violation phase 1 whose optimal residual gives a
/// Farkas-type certificate.
QpSolution solve_box_qp(const QpProblem& problem, const QpOptions& options = {});

double qp_objective(const QpProblem& problem, const Vec& u);

struct ResidualResult {
    Vec input;
    double residual = 0.0;
};

/// min over u in the box of (L_f z(x) + L_g z(x) u)^2.
ResidualResult min_zdot_residual(const SystemModel& sys, const Vec& x, const BoxSet& input_box);

/// Zero threshold for the residual above: tol_scale * (1 + (L_f z)^2).
double residual_zero_tolerance(double lfz, double tol_scale = 1e-9);

/// True iff max over the box of bias + row u is >= 0 (closed form at the sign-selected vertex).
bool exists_input_nonneg(const RowVec& row, double bias, const BoxSet& input_box);

/// max over the box of bias + row u.
double max_over_box(const RowVec& row, double bias, const BoxSet& input_box);

}  // namespace cbfsyn
