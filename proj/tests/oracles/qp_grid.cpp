#include "qp_grid.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace oracles {

namespace {

using Point = std::array<double, 3>;

struct Dense {
    int m = 0;
    int k = 0;
    double H[3][3] = {};
    double q[3] = {};
    double A[8][3] = {};
    double b[8] = {};
    double lo[3] = {};
    double hi[3] = {};
};

double objective(const Dense& d, const Point& u) {
    double f = 0.0;
    for (int i = 0; i < d.m; ++i) {
        f += d.q[i] * u[i];
        for (int j = 0; j < d.m; ++j) f += 0.5 * u[i] * d.H[i][j] * u[j];
    }
    return f;
}

bool rows_ok(const Dense& d, const Point& u, double tol) {
    for (int i = 0; i < d.k; ++i) {
        double s = 0.0;
        for (int j = 0; j < d.m; ++j) s += d.A[i][j] * u[j];
        if (s < d.b[i] - tol) return false;
    }
    return true;
}

// Best value of the last coordinate given the others: the rows cut an interval out of the
// box and the objective is a 1-D quadratic on it.
bool best_last(const Dense& d, Point& u, double tol) {
    const int j = d.m - 1;
    double lo = d.lo[j];
    double hi = d.hi[j];
    for (int i = 0; i < d.k; ++i) {
        const double a = d.A[i][j];
        double rest = 0.0;
        for (int c = 0; c < j; ++c) rest += d.A[i][c] * u[c];
        const double need = d.b[i] - rest;
        if (std::abs(a) < 1e-14) {
            if (need > tol) return false;
        } else if (a > 0) {
            lo = std::max(lo, need / a);
        } else {
            hi = std::min(hi, need / a);
        }
    }
    if (lo > hi + tol) return false;
    if (lo > hi) lo = hi;
    const double curv = d.H[j][j];
    double slope = d.q[j];
    for (int c = 0; c < j; ++c) slope += d.H[j][c] * u[c];
    if (curv > 1e-14) {
        u[j] = std::clamp(-slope / curv, lo, hi);
    } else {
        u[j] = slope > 0 ? lo : hi;
    }
    return true;
}

struct Cut {
    double c[3] = {0.0, 0.0, 0.0};  // c . u >= rhs
    double rhs = 0.0;
};

// Fourier-Motzkin: drop `axis` from the system, keeping every implied cut.
std::vector<Cut> eliminate(const std::vector<Cut>& cuts, int axis) {
    std::vector<Cut> out;
    std::vector<const Cut*> pos;
    std::vector<const Cut*> neg;
    for (const Cut& c : cuts) {
        if (std::abs(c.c[axis]) < 1e-14) {
            Cut z = c;
            z.c[axis] = 0.0;
            out.push_back(z);
        } else if (c.c[axis] > 0) {
            pos.push_back(&c);
        } else {
            neg.push_back(&c);
        }
    }
    for (const Cut* p : pos) {
        for (const Cut* n : neg) {
            const double wp = -n->c[axis];
            const double wn = p->c[axis];
            Cut z;
            for (int j = 0; j < 3; ++j) z.c[j] = wp * p->c[j] + wn * n->c[j];
            z.c[axis] = 0.0;
            z.rhs = wp * p->rhs + wn * n->rhs;
            out.push_back(z);
        }
    }
    return out;
}

struct Search {
    const Dense& d;
    int points;
    int zoom_levels;
    double tol;
    std::vector<std::vector<Cut>> projected;  // projected[j] only involves axes <= j
};

// Exact range of u[axis] that still admits a feasible completion of the later axes.
bool feasible_range(const Search& s, int axis, const Point& u, double& lo, double& hi) {
    lo = -std::numeric_limits<double>::infinity();
    hi = std::numeric_limits<double>::infinity();
    for (const Cut& c : s.projected[static_cast<std::size_t>(axis)]) {
        double rest = c.rhs;
        for (int j = 0; j < axis; ++j) rest -= c.c[j] * u[j];
        const double a = c.c[axis];
        if (std::abs(a) < 1e-14) {
            if (rest > s.tol * (1.0 + std::abs(c.rhs))) return false;
        } else if (a > 0) {
            lo = std::max(lo, rest / a);
        } else {
            hi = std::min(hi, rest / a);
        }
    }
    if (lo > hi + s.tol) return false;
    if (lo > hi) lo = hi = 0.5 * (lo + hi);
    return true;
}

// Minimum over axes >= axis with the earlier entries of u fixed. Partial minimization of a
// convex problem is convex in the remaining prefix, so the grid minimizer's two neighbours
// bracket the true minimizer and the zoom can restrict to them.
double minimize_from(const Search& s, int axis, Point& u) {
    const Dense& d = s.d;
    if (axis == d.m - 1 && d.m == 3) {
        if (!best_last(d, u, s.tol)) return std::numeric_limits<double>::infinity();
        return objective(d, u);
    }
    double range_lo;
    double range_hi;
    if (!feasible_range(s, axis, u, range_lo, range_hi)) {
        return std::numeric_limits<double>::infinity();
    }
    const bool last = axis == d.m - 1;
    double lo = range_lo;
    double hi = range_hi;
    double best_f = std::numeric_limits<double>::infinity();
    Point best_u = u;
    for (int level = 0; level <= s.zoom_levels; ++level) {
        const int n = level == 0 ? s.points : 41;
        const double step = (hi - lo) / (n - 1);
        int best_i = -1;
        double level_f = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            Point v = u;
            v[axis] = i == n - 1 ? hi : lo + step * i;
            double f;
            if (last) {
                f = rows_ok(d, v, s.tol) ? objective(d, v) : std::numeric_limits<double>::infinity();
            } else {
                f = minimize_from(s, axis + 1, v);
            }
            if (f < level_f) {
                level_f = f;
                best_i = i;
                if (f < best_f) {
                    best_f = f;
                    best_u = v;
                }
            }
        }
        if (best_i < 0 || step <= 1e-13 * (1.0 + std::abs(lo) + std::abs(hi))) break;
        const double centre = best_i == n - 1 ? hi : lo + step * best_i;
        lo = std::max(range_lo, centre - step);
        hi = std::min(range_hi, centre + step);
    }
    u = best_u;
    return best_f;
}

}  // namespace

GridResult grid_minimize(const GridQp& qp, int points, int zoom_levels, double feas_tol) {
    const int m = static_cast<int>(qp.linear.size());
    const int k = static_cast<int>(qp.rows.rows());
    if (m < 1 || m > 3) throw std::invalid_argument("grid_minimize supports 1 <= m <= 3");
    if (k > 8) throw std::invalid_argument("grid_minimize supports at most 8 rows");
    Dense d;
    d.m = m;
    d.k = k;
    for (int i = 0; i < m; ++i) {
        d.q[i] = qp.linear[i];
        d.lo[i] = qp.lower[i];
        d.hi[i] = qp.upper[i];
        for (int j = 0; j < m; ++j) d.H[i][j] = qp.hessian(i, j);
    }
    for (int r = 0; r < k; ++r) {
        d.b[r] = qp.rhs[r];
        for (int j = 0; j < m; ++j) d.A[r][j] = qp.rows(r, j);
    }

    Search search{d, points, zoom_levels, feas_tol, {}};
    std::vector<Cut> cuts;
    for (int r = 0; r < k; ++r) {
        Cut c;
        for (int j = 0; j < m; ++j) c.c[j] = d.A[r][j];
        c.rhs = d.b[r];
        cuts.push_back(c);
    }
    for (int j = 0; j < m; ++j) {
        Cut lower;
        lower.c[j] = 1.0;
        lower.rhs = d.lo[j];
        Cut upper;
        upper.c[j] = -1.0;
        upper.rhs = -d.hi[j];
        cuts.push_back(lower);
        cuts.push_back(upper);
    }
    search.projected.assign(static_cast<std::size_t>(m), {});
    search.projected[static_cast<std::size_t>(m - 1)] = cuts;
    for (int j = m - 2; j >= 0; --j) {
        search.projected[static_cast<std::size_t>(j)] =
            eliminate(search.projected[static_cast<std::size_t>(j + 1)], j + 1);
    }
    Point best_u{};
    const double best_f = minimize_from(search, 0, best_u);
    const bool found = std::isfinite(best_f);

    GridResult out;
    out.feasible = found;
    if (found) {
        out.objective = best_f;
        out.argmin = Eigen::VectorXd(m);
        for (int i = 0; i < m; ++i) out.argmin[i] = best_u[i];
    }
    return out;
}

}  // namespace oracles
