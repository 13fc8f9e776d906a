#include "cbfsyn/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace cbfsyn {

SearchResult nelder_mead(const Objective& f, const Vec& start, const Vec& step, const Vec& lower,
                         const Vec& upper, const NelderMeadOptions& options) {
    const Eigen::Index n = start.size();
    if (step.size() != n || lower.size() != n || upper.size() != n) {
        throw std::invalid_argument("nelder_mead: dimension mismatch");
    }
    auto clamp = [&](const Vec& x) { return Vec(x.cwiseMax(lower).cwiseMin(upper)); };
    int evals = 0;
    auto eval = [&](const Vec& x) {
        ++evals;
        return f(x);
    };

    std::vector<Vec> pts;
    std::vector<double> vals;
    pts.push_back(clamp(start));
    vals.push_back(eval(pts[0]));
    for (Eigen::Index i = 0; i < n; ++i) {
        Vec p = pts[0];
        p[i] += step[i];
        if (p[i] > upper[i]) p[i] = pts[0][i] - step[i];
        p = clamp(p);
        pts.push_back(p);
        vals.push_back(eval(p));
    }

    std::vector<std::size_t> order(pts.size());
    while (evals < options.max_evaluations) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
        const std::size_t best = order.front();
        const std::size_t worst = order.back();
        const std::size_t second = order[order.size() - 2];

        double size = 0.0;
        for (const Vec& p : pts) size = std::max(size, (p - pts[best]).cwiseAbs().maxCoeff());
        if (std::abs(vals[worst] - vals[best]) <= options.f_tol && size <= options.x_tol) break;
        if (size <= options.x_tol * 1e-3) break;

        Vec centroid = Vec::Zero(n);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (i != worst) centroid += pts[i];
        }
        centroid /= static_cast<double>(n);

        const Vec reflected = clamp(centroid + (centroid - pts[worst]));
        const double fr = eval(reflected);
        if (fr < vals[best]) {
            const Vec expanded = clamp(centroid + 2.0 * (centroid - pts[worst]));
            const double fe = eval(expanded);
            if (fe < fr) {
                pts[worst] = expanded;
                vals[worst] = fe;
            } else {
                pts[worst] = reflected;
                vals[worst] = fr;
            }
            continue;
        }
        if (fr < vals[second]) {
            pts[worst] = reflected;
            vals[worst] = fr;
            continue;
        }
        const bool outside = fr < vals[worst];
        const Vec contracted = outside ? clamp(centroid + 0.5 * (reflected - centroid))
                                       : clamp(centroid + 0.5 * (pts[worst] - centroid));
        const double fc = eval(contracted);
        if (fc < (outside ? fr : vals[worst])) {
            pts[worst] = contracted;
            vals[worst] = fc;
            continue;
        }
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (i == best) continue;
            pts[i] = clamp(pts[best] + 0.5 * (pts[i] - pts[best]));
            vals[i] = eval(pts[i]);
        }
    }

    const auto it = std::min_element(vals.begin(), vals.end());
    SearchResult out;
    out.x = pts[static_cast<std::size_t>(it - vals.begin())];
    out.value = *it;
    out.evaluations = evals;
    return out;
}

SearchResult golden_polish(const Objective& f, const SearchResult& from, const Vec& radius,
                           const Vec& lower, const Vec& upper, int sweeps, int iterations) {
    constexpr double kInvPhi = 0.6180339887498949;
    SearchResult cur = from;
    for (int sweep = 0; sweep < sweeps; ++sweep) {
        for (Eigen::Index i = 0; i < cur.x.size(); ++i) {
            double a = std::max(lower[i], cur.x[i] - radius[i]);
            double b = std::min(upper[i], cur.x[i] + radius[i]);
            if (!(b > a)) continue;
            Vec probe = cur.x;
            auto at = [&](double t) {
                probe[i] = t;
                ++cur.evaluations;
                return f(probe);
            };
            // the ends are often where a bound is active (e.g. a zero scale)
            for (double end : {a, b}) {
                const double fe = at(end);
                if (fe < cur.value) {
                    cur.value = fe;
                    cur.x[i] = end;
                }
            }
            double c = b - kInvPhi * (b - a);
            double d = a + kInvPhi * (b - a);
            double fc = at(c);
            double fd = at(d);
            for (int it = 0; it < iterations; ++it) {
                if (fc <= fd) {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - kInvPhi * (b - a);
                    fc = at(c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + kInvPhi * (b - a);
                    fd = at(d);
                }
                if (fc < cur.value) {
                    cur.value = fc;
                    cur.x[i] = c;
                }
                if (fd < cur.value) {
                    cur.value = fd;
                    cur.x[i] = d;
                }
            }
        }
    }
    return cur;
}

}  // namespace cbfsyn
