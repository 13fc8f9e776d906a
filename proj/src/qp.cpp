#include "cbfsyn/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace cbfsyn {

const char* to_string(QpStatus status) {
    return status == QpStatus::Optimal ? "optimal" : "infeasible";
}

namespace {

struct ActiveSetResult {
    Vec y;
    Vec multipliers;  // one per constraint row of C, zero when inactive
    int iterations = 0;
};

// Null-space basis of the working rows (kept linearly independent by the ratio test).
Mat null_space(const Mat& working, Eigen::Index nv) {
    if (working.rows() == 0) return Mat::Identity(nv, nv);
    Eigen::ColPivHouseholderQR<Mat> qr(working.transpose());
    const Eigen::Index rank = qr.rank();
    Mat q = qr.householderQ();
    return q.rightCols(nv - rank);
}

// Primal active-set for min 0.5 y'Hy + q'y  s.t.  C y >= d, started from a feasible y.
// Zero-curvature directions of the reduced Hessian are followed as rays until a constraint
// blocks them; the constraint set must make every such ray bounded.
ActiveSetResult active_set(const Mat& H, const Vec& q, const Mat& C, const Vec& d, Vec y,
                           int max_iterations) {
    const Eigen::Index nv = y.size();
    const Eigen::Index nc = C.rows();
    std::vector<Eigen::Index> working;
    std::vector<char> in_working(static_cast<std::size_t>(nc), 0);
    ActiveSetResult out;
    out.multipliers = Vec::Zero(nc);

    Vec row_norm(nc);
    for (Eigen::Index j = 0; j < nc; ++j) row_norm[j] = C.row(j).norm();

    auto working_rows = [&]() {
        Mat w(static_cast<Eigen::Index>(working.size()), nv);
        for (std::size_t i = 0; i < working.size(); ++i) {
            w.row(static_cast<Eigen::Index>(i)) = C.row(working[i]);
        }
        return w;
    };

    int iter = 0;
    for (; iter < max_iterations; ++iter) {
        const Vec g = H * y + q;
        const Mat aw = working_rows();
        const Mat z = null_space(aw, nv);

        Vec p = Vec::Zero(nv);
        bool ray = false;
        if (z.cols() > 0) {
            const Mat hr = z.transpose() * H * z;
            const Vec gr = z.transpose() * g;
            Eigen::SelfAdjointEigenSolver<Mat> es(hr);
            const Vec& ev = es.eigenvalues();
            const Mat& vecs = es.eigenvectors();
            const double curvature_tol = 1e-11 * std::max(1.0, ev.cwiseAbs().maxCoeff());
            const Vec w = vecs.transpose() * gr;
            const double grad_tol = 1e-12 * (1.0 + g.norm());
            Vec flat = Vec::Zero(z.cols());
            for (Eigen::Index i = 0; i < ev.size(); ++i) {
                if (ev[i] <= curvature_tol && std::abs(w[i]) > grad_tol) {
                    flat -= vecs.col(i) * w[i];
                    ray = true;
                }
            }
            if (ray) {
                p = z * flat;
            } else {
                Vec t = Vec::Zero(z.cols());
                for (Eigen::Index i = 0; i < ev.size(); ++i) {
                    if (ev[i] > curvature_tol) t -= vecs.col(i) * (w[i] / ev[i]);
                }
                p = z * t;
            }
        }

        if (!ray && p.norm() <= 1e-13 * (1.0 + y.norm())) {
            if (working.empty()) break;
            // g = A_W' lambda_W
            const Vec lam = aw.transpose().colPivHouseholderQr().solve(g);
            Eigen::Index worst = -1;
            double most_negative = -1e-12 * (1.0 + g.cwiseAbs().maxCoeff());
            for (Eigen::Index i = 0; i < lam.size(); ++i) {
                if (lam[i] < most_negative) {
                    most_negative = lam[i];
                    worst = i;
                }
            }
            if (worst < 0) break;
            in_working[static_cast<std::size_t>(working[static_cast<std::size_t>(worst)])] = 0;
            working.erase(working.begin() + worst);
            continue;
        }

        double alpha = ray ? std::numeric_limits<double>::infinity() : 1.0;
        Eigen::Index blocking = -1;
        const double pn = p.norm();
        for (Eigen::Index j = 0; j < nc; ++j) {
            if (in_working[static_cast<std::size_t>(j)]) continue;
            const double ap = C.row(j).dot(p);
            if (ap >= -1e-14 * row_norm[j] * pn) continue;
            const double slack = std::max(0.0, C.row(j).dot(y) - d[j]);
            const double a = slack / (-ap);
            if (a < alpha) {
                alpha = a;
                blocking = j;
            }
        }
        if (blocking < 0 && ray) {
            throw std::logic_error("active_set: unbounded direction in a bounded problem");
        }
        y += alpha * p;
        if (blocking >= 0) {
            working.push_back(blocking);
            in_working[static_cast<std::size_t>(blocking)] = 1;
        }
    }

    out.iterations = iter;
    if (!working.empty()) {
        const Vec g = H * y + q;
        const Mat aw = working_rows();
        const Vec lam = aw.transpose().colPivHouseholderQr().solve(g);
        for (std::size_t i = 0; i < working.size(); ++i) {
            out.multipliers[working[i]] = std::max(0.0, lam[static_cast<Eigen::Index>(i)]);
        }
    }
    out.y = std::move(y);
    return out;
}

void validate(const QpProblem& p) {
    const Eigen::Index m = p.hessian.rows();
    if (p.hessian.cols() != m) throw std::invalid_argument("solve_box_qp: Hessian must be square");
    if (p.linear.size() != m) throw std::invalid_argument("solve_box_qp: linear term dimension mismatch");
    if (p.box.dim() != m) throw std::invalid_argument("solve_box_qp: box dimension mismatch");
    if (p.ineq_rows.rows() != p.ineq_rhs.size()) {
        throw std::invalid_argument("solve_box_qp: inequality rows/rhs count mismatch");
    }
    if (p.ineq_rows.rows() > 0 && p.ineq_rows.cols() != m) {
        throw std::invalid_argument("solve_box_qp: inequality row width mismatch");
    }
    if (!p.hessian.allFinite() || !p.linear.allFinite() || !p.ineq_rows.allFinite() ||
        !p.ineq_rhs.allFinite()) {
        throw std::invalid_argument("solve_box_qp: non-finite problem data");
    }
    const double asym = (p.hessian - p.hessian.transpose()).cwiseAbs().maxCoeff();
    if (m > 0 && asym > 1e-12 * (1.0 + p.hessian.cwiseAbs().maxCoeff())) {
        throw std::invalid_argument("solve_box_qp: Hessian is not symmetric");
    }
}

}  // namespace

double qp_objective(const QpProblem& problem, const Vec& u) {
    return 0.5 * u.dot(problem.hessian * u) + problem.linear.dot(u) + problem.constant;
}

QpSolution solve_box_qp(const QpProblem& problem, const QpOptions& options) {
    validate(problem);
    const Eigen::Index m = problem.hessian.rows();
    const Eigen::Index k = problem.ineq_rows.rows();
    const Mat& A = problem.ineq_rows;
    const Vec& b = problem.ineq_rhs;
    const Vec& lo = problem.box.lower();
    const Vec& hi = problem.box.upper();

    Mat H = 0.5 * (problem.hessian + problem.hessian.transpose());
    if (m > 0) {
        const double min_eig = Eigen::SelfAdjointEigenSolver<Mat>(H, Eigen::EigenvaluesOnly)
                                   .eigenvalues()
                                   .minCoeff();
        if (min_eig < -1e-10) throw std::invalid_argument("solve_box_qp: Hessian is indefinite");
        if (min_eig < 0.0) H += 1e-10 * Mat::Identity(m, m);
    }
    const int max_iter = options.max_iterations > 0
                             ? options.max_iterations
                             : static_cast<int>(50 + 20 * (m + k) + 10 * m);

    QpSolution sol;
    const double tol = options.feasibility_tol * (1.0 + (k > 0 ? b.cwiseAbs().maxCoeff() : 0.0));

    // Phase 1: least squared violation over the box.
    Vec u0 = problem.box.clamp(Vec::Zero(m));
    bool feasible_start = true;
    for (Eigen::Index i = 0; i < k; ++i) {
        if (A.row(i).dot(u0) < b[i]) feasible_start = false;
    }
    int iterations = 0;
    if (!feasible_start) {
        const Eigen::Index nv = m + k;
        Mat H1 = Mat::Zero(nv, nv);
        H1.bottomRightCorner(k, k).setIdentity();
        const Vec q1 = Vec::Zero(nv);
        Vec s0 = (b - A * u0).cwiseMax(0.0);
        const double smax = s0.maxCoeff() + 1.0;
        Mat C = Mat::Zero(3 * k + 2 * m, nv);
        Vec d = Vec::Zero(3 * k + 2 * m);
        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < k; ++i, ++r) {
            C.row(r).head(m) = A.row(i);
            C(r, m + i) = 1.0;
            d[r] = b[i];
        }
        for (Eigen::Index i = 0; i < k; ++i, ++r) {
            C(r, m + i) = 1.0;
            d[r] = 0.0;
        }
        for (Eigen::Index i = 0; i < k; ++i, ++r) {
            C(r, m + i) = -1.0;
            d[r] = -smax;
        }
        for (Eigen::Index j = 0; j < m; ++j, ++r) {
            C(r, j) = 1.0;
            d[r] = lo[j];
        }
        for (Eigen::Index j = 0; j < m; ++j, ++r) {
            C(r, j) = -1.0;
            d[r] = -hi[j];
        }
        Vec y0(nv);
        y0 << u0, s0;
        const ActiveSetResult ph1 = active_set(H1, q1, C, d, y0, max_iter);
        iterations += ph1.iterations;
        u0 = problem.box.clamp(ph1.y.head(m));
        const Vec resid = (b - A * u0).cwiseMax(0.0);
        const double violation = resid.maxCoeff();
        if (violation > tol) {
            const RowVec w = resid.transpose();
            const RowVec wa = w * A;
            double best = 0.0;
            for (Eigen::Index j = 0; j < m; ++j) best += std::max(wa[j] * lo[j], wa[j] * hi[j]);
            sol.farkas_gap = w.dot(b) - best;
            if (sol.farkas_gap > 0.0) {
                sol.status = QpStatus::Infeasible;
                sol.argmin = u0;
                sol.objective = qp_objective(problem, u0);
                sol.max_violation = violation;
                sol.row_multipliers = Vec::Zero(k);
                sol.lower_multipliers = Vec::Zero(m);
                sol.upper_multipliers = Vec::Zero(m);
                sol.iterations = iterations;
                return sol;
            }
        }
    }

    // Phase 2 from the feasible point.
    Mat C(k + 2 * m, m);
    Vec d(k + 2 * m);
    if (k > 0) {
        C.topRows(k) = A;
        d.head(k) = b;
    }
    C.middleRows(k, m) = Mat::Identity(m, m);
    d.segment(k, m) = lo;
    C.bottomRows(m) = -Mat::Identity(m, m);
    d.tail(m) = -hi;
    const ActiveSetResult ph2 = active_set(H, problem.linear, C, d, u0, max_iter);
    iterations += ph2.iterations;

    sol.status = QpStatus::Optimal;
    sol.argmin = problem.box.clamp(ph2.y);
    sol.objective = qp_objective(problem, sol.argmin);
    sol.row_multipliers = ph2.multipliers.head(k);
    sol.lower_multipliers = ph2.multipliers.segment(k, m);
    sol.upper_multipliers = ph2.multipliers.tail(m);
    sol.max_violation = k > 0 ? (b - A * sol.argmin).cwiseMax(0.0).maxCoeff() : 0.0;
    sol.iterations = iterations;
    return sol;
}

double residual_zero_tolerance(double lfz, double tol_scale) {
    return tol_scale * (1.0 + lfz * lfz);
}

ResidualResult min_zdot_residual(const SystemModel& sys, const Vec& x, const BoxSet& input_box) {
    const RowVec grad = sys.hcf.gradient(x);
    const double a = grad.dot(sys.drift(x));
    const RowVec row = grad * sys.actuation(x);
    ResidualResult out;
    if (row.cwiseAbs().maxCoeff() == 0.0) {
        out.input = input_box.clamp(Vec::Zero(sys.m));
        out.residual = a * a;
        return out;
    }
    QpProblem qp;
    qp.hessian = 2.0 * row.transpose() * row;
    qp.linear = 2.0 * a * row.transpose();
    qp.constant = a * a;
    qp.ineq_rows = Mat(0, sys.m);
    qp.ineq_rhs = Vec(0);
    qp.box = input_box;
    const QpSolution sol = solve_box_qp(qp);
    out.input = sol.argmin;
    const double r = a + row.dot(sol.argmin);
    out.residual = r * r;
    return out;
}

double max_over_box(const RowVec& row, double bias, const BoxSet& input_box) {
    if (row.size() != input_box.dim()) {
        throw std::invalid_argument("max_over_box: row dimension mismatch");
    }
    double best = bias;
    for (Eigen::Index j = 0; j < row.size(); ++j) {
        best += std::max(row[j] * input_box.lower()[j], row[j] * input_box.upper()[j]);
    }
    return best;
}

bool exists_input_nonneg(const RowVec& row, double bias, const BoxSet& input_box) {
    return max_over_box(row, bias, input_box) >= 0.0;
}

}  // namespace cbfsyn
