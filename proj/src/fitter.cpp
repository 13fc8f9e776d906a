#include "cbfsyn/fitter.hpp"

#include "cbfsyn/nelder_mead.hpp"
#include "cbfsyn/parallel.hpp"
#include "cbfsyn/qp.hpp"
#include "cbfsyn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cbfsyn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double candidate_value(const CbfCandidate& c, const HardConstraint& hcf, const Vec& x, Vec& arg) {
    arg.noalias() = c.scale.cwiseProduct(x) + c.shift;
    return hcf.value(arg) + c.offset;
}

// min_j h_j at every point.
std::vector<double> min_values(const std::vector<CbfCandidate>& cands, const HardConstraint& hcf,
                               const std::vector<Vec>& pts) {
    std::vector<double> out(pts.size(), kInf);
    if (pts.empty()) return out;
    Vec arg(pts.front().size());
    for (const CbfCandidate& c : cands) {
        for (std::size_t i = 0; i < pts.size(); ++i) {
            out[i] = std::min(out[i], candidate_value(c, hcf, pts[i], arg));
        }
    }
    return out;
}

const BoxSet& region_of(const SampleSet& s, const FitConfig& cfg) {
    return cfg.volume_region ? *cfg.volume_region : s.bounds;
}

// Measured over the axes the samples actually vary along.
double region_volume(const SampleSet& s, const FitConfig& cfg) {
    const BoxSet& region = region_of(s, cfg);
    double v = 1.0;
    for (Eigen::Index i = 0; i < region.dim(); ++i) {
        if (s.bounds.width()[i] > 0.0) v *= region.width()[i];
    }
    return v;
}

// Data the search loop touches on every evaluation.
struct SearchData {
    std::vector<Vec> pts;
    std::vector<char> bad;  // not FeasibleZ0
    std::vector<Vec> boundary;
    std::vector<RowVec> boundary_grad;  // dz/dx at the boundary point itself
    std::vector<Vec> boundary_drift;
    std::vector<Mat> boundary_act;
    Vec width;              // sampling box widths, for distances in normalized units
    double band = 0.0;      // normalized distance within which a boundary point is "on" a level set
    double volume = 0.0;
};

SearchData gather(const SampleSet& s, const BoundarySet& b, const SystemModel& sys,
                  const FitConfig& cfg, bool subsample) {
    const BoxSet& region = region_of(s, cfg);
    SearchData d;
    d.volume = region_volume(s, cfg);
    std::vector<std::size_t> inside;
    for (std::size_t i = 0; i < s.records.size(); ++i) {
        if (region.contains(s.records[i].state)) inside.push_back(i);
    }
    std::size_t take = inside.size();
    if (subsample && cfg.search.subsample > 0) take = std::min(take, cfg.search.subsample);
    d.pts.reserve(take);
    d.bad.reserve(take);
    for (std::size_t q = 0; q < take; ++q) {
        // evenly strided so the subsample stays spread over the whole region
        const std::size_t i = inside[q * inside.size() / take];
        d.pts.push_back(s.records[i].state);
        d.bad.push_back(s.records[i].cls != SampleClass::FeasibleZ0);
    }
    d.boundary = b.points;
    d.width = s.bounds.width();
    d.band = 2.0 * b.epsilon;
    for (const Vec& x : b.points) {
        d.boundary_grad.push_back(sys.hcf.gradient(x));
        d.boundary_drift.push_back(sys.drift(x));
        d.boundary_act.push_back(sys.actuation(x));
    }
    return d;
}

struct Projection {
    bool feasible = false;
    double tau = 0.0;
    double value = 0.0;
};

// Chooses the level tau so that {m >= tau} is as large as possible while every boundary point
// stays at or below tau - margin and the non-feasible share of the set is within tolerance.
Projection project(const std::vector<double>& m, const std::vector<char>& bad, double floor_tau,
                   double tol, SizeObjective objective, double volume) {
    Projection p;
    if (m.empty()) return p;
    auto finish = [&](double tau) {
        p.tau = tau;
        double acc = 0.0;
        for (double v : m) {
            if (objective == SizeObjective::SampleCount) {
                acc += v >= tau ? 1.0 : 0.0;
            } else {
                acc += std::max(0.0, v - tau);
            }
        }
        p.value = acc / static_cast<double>(m.size()) * volume;
        return p;
    };

    const double lowest = *std::min_element(m.begin(), m.end());
    const double start = std::isfinite(floor_tau) ? floor_tau : lowest;
    std::size_t count = 0, nbad = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] >= start) {
            ++count;
            nbad += bad[i] ? 1 : 0;
        }
    }
    if (count > 0 && static_cast<double>(nbad) <= tol * static_cast<double>(count)) {
        p.feasible = true;
        return finish(start);
    }

    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] >= start) idx.push_back(i);
    }
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return m[a] != m[b] ? m[a] > m[b] : a < b;
    });
    std::size_t best = 0;
    nbad = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        nbad += bad[idx[k]] ? 1 : 0;
        if (static_cast<double>(nbad) <= tol * static_cast<double>(k + 1)) best = k + 1;
    }
    // a tie group straddling the cut cannot be split by a level set
    while (best > 0 && best < idx.size() && m[idx[best]] == m[idx[best - 1]]) --best;
    if (best == 0) {
        finish(start);  // report the smallest admissible level for diagnostics
        p.feasible = false;
        return p;
    }
    p.feasible = true;
    return finish(m[idx[best - 1]]);
}

// Decision-vector layout. Uniform: [d, t_1..t_n]; NonUniform: [d_1..d_n, t_1..t_n];
// Multi: per candidate [d_1..d_n, t_1..t_n, offset]. The shift is d * t so t is a location in
// state units.
struct Layout {
    FitMode mode;
    int n;
    int s;

    int per() const {
        switch (mode) {
            case FitMode::Uniform: return n + 1;
            case FitMode::NonUniform: return 2 * n;
            case FitMode::Multi: return 2 * n + 1;
        }
        return 0;
    }
    int size() const { return per() * s; }

    std::vector<CbfCandidate> decode(const Vec& theta) const {
        std::vector<CbfCandidate> out;
        for (int j = 0; j < s; ++j) {
            const Vec p = theta.segment(j * per(), per());
            CbfCandidate c;
            if (mode == FitMode::Uniform) {
                c.scale = Vec::Constant(n, p[0]);
                c.shift = p[0] * p.tail(n);
            } else {
                c.scale = p.head(n);
                c.shift = c.scale.cwiseProduct(p.segment(n, n));
                if (mode == FitMode::Multi) c.offset = p[2 * n];
            }
            out.push_back(std::move(c));
        }
        return out;
    }

    Vec encode(const std::vector<CbfCandidate>& cands) const {
        Vec theta(size());
        for (int j = 0; j < s; ++j) {
            const CbfCandidate& c = cands[static_cast<std::size_t>(j)];
            Vec loc(n);
            for (int i = 0; i < n; ++i) loc[i] = c.scale[i] > 0.0 ? c.shift[i] / c.scale[i] : 0.0;
            Vec p(per());
            if (mode == FitMode::Uniform) {
                p << c.scale.mean(), loc;
            } else if (mode == FitMode::NonUniform) {
                p << c.scale, loc;
            } else {
                p << c.scale, loc, c.offset;
            }
            theta.segment(j * per(), per()) = p;
        }
        return theta;
    }
};

struct Bounds {
    Vec lower, upper, step, radius;
};

Bounds search_bounds(const Layout& lay, const BoxSet& box, double scale_max, double offset_span) {
    Bounds b;
    b.lower.resize(lay.size());
    b.upper.resize(lay.size());
    b.step.resize(lay.size());
    b.radius.resize(lay.size());
    const double min_scale = lay.mode == FitMode::Uniform ? 1e-3 : 0.0;
    for (int j = 0; j < lay.s; ++j) {
        const int base = j * lay.per();
        const int nscale = lay.mode == FitMode::Uniform ? 1 : lay.n;
        for (int i = 0; i < nscale; ++i) {
            b.lower[base + i] = min_scale;
            b.upper[base + i] = scale_max;
            b.step[base + i] = 0.5;
            b.radius[base + i] = 0.05 * scale_max;
        }
        for (int i = 0; i < lay.n; ++i) {
            const int k = base + nscale + i;
            // far enough that an indicator threshold can leave the box on either side
            const double reach = std::abs(box.lower()[i]) + std::abs(box.upper()[i]) +
                                 box.width()[i];
            b.lower[k] = -reach;
            b.upper[k] = reach;
            b.step[k] = 0.1 * box.width()[i];
            b.radius[k] = 0.05 * reach;
        }
        if (lay.mode == FitMode::Multi) {
            const int k = base + 2 * lay.n;
            b.lower[k] = -offset_span;
            b.upper[k] = offset_span;
            b.step[k] = 0.1 * offset_span / scale_max;
            b.radius[k] = 0.05 * offset_span;
        }
    }
    return b;
}

std::vector<CbfCandidate> apply_level(std::vector<CbfCandidate> cands, double tau) {
    for (CbfCandidate& c : cands) c.offset -= tau;
    return cands;
}

struct Scorer {
    const Layout& lay;
    const SearchData& data;
    const HardConstraint& hcf;
    const BoxSet& input_box;
    const FitConfig& cfg;
    bool check_scaling;

    // Share of (boundary point, candidate) pairs failing the feasible-input scaling condition.
    double scaling_failures(const std::vector<CbfCandidate>& cands) const {
        if (!check_scaling || data.boundary.empty()) return 0.0;
        std::size_t fail = 0, total = 0;
        for (const CbfCandidate& c : cands) {
            if (c.is_uniform()) {
                total += data.boundary.size();
                continue;
            }
            const RowVec dbar = (c.scale.array() - c.scale[0]).matrix().transpose();
            for (std::size_t k = 0; k < data.boundary.size(); ++k) {
                RowVec w = data.boundary_grad[k].cwiseProduct(dbar);
                w[0] = 0.0;
                const RowVec row = w * data.boundary_act[k];
                const double bias = w.dot(data.boundary_drift[k]);
                ++total;
                if (!exists_input_nonneg(row, bias, input_box)) ++fail;
            }
        }
        return total ? static_cast<double>(fail) / static_cast<double>(total) : 0.0;
    }

    // Share of (boundary point, candidate) pairs where the point sits within the band of the
    // candidate's zero level yet no input keeps h_j from decreasing. Catches set boundaries
    // pressed against the frontier along which the input has no authority.
    double boundary_cbf_failures(const std::vector<CbfCandidate>& cands) const {
        if (data.boundary.empty() || !(data.band > 0.0)) return 0.0;
        std::size_t fail = 0;
        Vec arg(data.width.size());
        for (const CbfCandidate& c : cands) {
            for (std::size_t k = 0; k < data.boundary.size(); ++k) {
                const Vec& x = data.boundary[k];
                const double h = candidate_value(c, hcf, x, arg);
                const RowVec grad = hcf.gradient(arg).cwiseProduct(c.scale.transpose());
                const double slope = grad.cwiseProduct(data.width.transpose()).norm();
                if (!(slope > 0.0) || std::abs(h) > data.band * slope) continue;
                const double bias = grad.dot(data.boundary_drift[k]);
                if (max_over_box(grad * data.boundary_act[k], bias, input_box) <
                    -1e-9 * (1.0 + std::abs(bias))) {
                    ++fail;
                }
            }
        }
        return static_cast<double>(fail) /
               static_cast<double>(data.boundary.size() * cands.size());
    }

    Projection evaluate(const std::vector<CbfCandidate>& cands) const {
        const std::vector<double> m = min_values(cands, hcf, data.pts);
        double floor_tau = -kInf;
        if (!data.boundary.empty()) {
            const std::vector<double> mb = min_values(cands, hcf, data.boundary);
            floor_tau = *std::max_element(mb.begin(), mb.end()) + cfg.margin;
            // keeps h(x_k) <= -margin after the offset update rounds
            floor_tau += 1e-12 * (1.0 + std::abs(floor_tau));
        }
        if (lay.mode == FitMode::Multi) floor_tau = std::max(floor_tau, 0.0);
        return project(m, data.bad, floor_tau, cfg.containment_tol, cfg.objective, data.volume);
    }

    double operator()(const Vec& theta) const {
        const std::vector<CbfCandidate> cands = lay.decode(theta);
        const double failing = scaling_failures(cands);
        if (failing > 0.0) return 1.0 + failing;
        const Projection p = evaluate(cands);
        if (!p.feasible) return 0.0;
        const double stuck = boundary_cbf_failures(apply_level(cands, p.tau));
        return stuck > 0.0 ? 1.0 + stuck : -p.value;
    }
};

Vec random_start(const Bounds& b, const Scorer& score, const CounterRng& rng, int population) {
    Vec best;
    double best_val = kInf;
    const auto dim = static_cast<std::uint64_t>(b.lower.size());
    for (int p = 0; p < std::max(1, population); ++p) {
        Vec theta(b.lower.size());
        for (Eigen::Index a = 0; a < theta.size(); ++a) {
            const double u = rng.uniform(static_cast<std::uint64_t>(p) * dim +
                                         static_cast<std::uint64_t>(a));
            theta[a] = b.lower[a] + (b.upper[a] - b.lower[a]) * u;
        }
        const double v = score(theta);
        if (v < best_val) {
            best_val = v;
            best = theta;
        }
    }
    return best;
}

double max_abs_z(const SearchData& data, const HardConstraint& hcf) {
    double out = 0.0;
    for (const Vec& x : data.pts) out = std::max(out, std::abs(hcf.value(x)));
    return out;
}

FitResult run_fit(const SampleSet& s, const BoundarySet& b, const SystemModel& sys,
                  const BoxSet& input_box, const FitConfig& cfg,
                  const std::vector<std::vector<CbfCandidate>>& seeds) {
    cfg.validate();
    if (s.records.empty()) throw std::invalid_argument("fit: the sample set is empty");
    const int n = static_cast<int>(s.bounds.dim());
    const Layout lay{cfg.mode, n, cfg.mode == FitMode::Multi ? cfg.count : 1};
    const SearchData data = gather(s, b, sys, cfg, true);
    if (data.pts.empty()) throw std::invalid_argument("fit: no samples inside the volume region");

    const double offset_span = cfg.search.scale_max * (max_abs_z(data, sys.hcf) + 1.0);
    const Bounds bounds = search_bounds(lay, s.bounds, cfg.search.scale_max, offset_span);
    const Scorer score{lay, data, sys.hcf, input_box, cfg, cfg.mode != FitMode::Uniform};

    FitResult result;
    result.mode = cfg.mode;
    result.config = cfg;
    if (b.points.empty()) {
        result.warnings.push_back("boundary set is empty; only containment limits the fit");
    }

    const auto restarts = static_cast<std::size_t>(cfg.search.restarts);
    std::vector<SearchResult> found(restarts);
    const CounterRng root(cfg.search.seed);
    const Objective objective = [&](const Vec& theta) { return score(theta); };
    parallel_for(restarts, cfg.search.threads, [&](std::size_t r) {
        const Vec start = r < seeds.size()
                              ? lay.encode(seeds[r]).cwiseMax(bounds.lower).cwiseMin(bounds.upper)
                              : random_start(bounds, score, root.split(r + 1),
                                             cfg.search.population);
        NelderMeadOptions nm;
        nm.max_evaluations = cfg.search.iterations;
        const SearchResult local = nelder_mead(objective, start, bounds.step, bounds.lower,
                                               bounds.upper, nm);
        found[r] = golden_polish(objective, local, bounds.radius, bounds.lower, bounds.upper,
                                 cfg.search.polish_sweeps);
    });
    for (const SearchResult& f : found) result.restart_values.push_back(-f.value);

    std::vector<std::size_t> order(restarts);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t c) { return found[a].value < found[c].value; });

    const SearchData full = gather(s, b, sys, cfg, false);
    const Scorer full_score{lay, full, sys.hcf, input_box, cfg, score.check_scaling};
    bool accepted = false;
    for (std::size_t r : order) {
        std::vector<CbfCandidate> cands = lay.decode(found[r].x);
        if (full_score.scaling_failures(cands) > 0.0) continue;
        const Projection p = full_score.evaluate(cands);
        cands = apply_level(std::move(cands), p.tau);
        if (p.feasible && full_score.boundary_cbf_failures(cands) > 0.0) {
            result.warnings.push_back("restart " + std::to_string(r) +
                                      " rejected: no input authority on part of its boundary");
            continue;
        }
        if (cfg.mode == FitMode::Multi && p.feasible) {
            // the scaling condition is also required on each candidate's active boundary
            bool ok = true;
            const auto probes = active_boundary_probes(cands, sys.hcf, s, cfg.probes);
            for (std::size_t j = 0; j < cands.size() && ok; ++j) {
                for (const Vec& x : probes[j]) {
                    if (!scaling_condition_holds(cands[j], sys, input_box, x)) {
                        ok = false;
                        break;
                    }
                }
            }
            if (!ok) {
                result.warnings.push_back("restart " + std::to_string(r) +
                                          " rejected: scaling condition fails on its boundary");
                continue;
            }
        }
        result.candidates = std::move(cands);
        result.feasible = p.feasible && p.value > 0.0;
        accepted = true;
        break;
    }
    if (!accepted) {
        // nothing admissible: keep the best restart for diagnostics
        const Projection p = full_score.evaluate(lay.decode(found[order.front()].x));
        result.candidates = apply_level(lay.decode(found[order.front()].x), p.tau);
        result.feasible = false;
    }
    if (!result.feasible) {
        result.warnings.push_back("no feasible candidate found after all restarts");
    }

    if (cfg.mode == FitMode::Multi) {
        result.redundancy = collapse_redundant(result.candidates, sys.hcf, redundancy_probes(s),
                                               &result.warnings);
    }
    result.objective_value = estimate_set_size(result.candidates, sys.hcf, s, cfg);
    result.verification = verify_candidate(result.candidates, s, b, sys, input_box, cfg.probes);
    return result;
}

}  // namespace

const char* to_string(FitMode mode) {
    switch (mode) {
        case FitMode::Uniform: return "uniform";
        case FitMode::NonUniform: return "nonuniform";
        case FitMode::Multi: return "multi";
    }
    return "?";
}

FitMode fit_mode_from_string(const std::string& name) {
    if (name == "uniform") return FitMode::Uniform;
    if (name == "nonuniform") return FitMode::NonUniform;
    if (name == "multi") return FitMode::Multi;
    throw std::invalid_argument("unknown fit mode '" + name + "'");
}

const char* to_string(SizeObjective objective) {
    return objective == SizeObjective::SampleCount ? "sample_count" : "integral_surrogate";
}

SizeObjective size_objective_from_string(const std::string& name) {
    if (name == "sample_count") return SizeObjective::SampleCount;
    if (name == "integral_surrogate") return SizeObjective::IntegralSurrogate;
    throw std::invalid_argument("unknown fit objective '" + name + "'");
}

void FitConfig::validate() const {
    if (mode == FitMode::Multi && count < 2) {
        throw std::invalid_argument("multi fit needs at least two candidates");
    }
    if (mode != FitMode::Multi && count != 1) {
        throw std::invalid_argument("uniform and non-uniform fits produce one candidate");
    }
    if (!(margin >= 0.0) || !std::isfinite(margin)) {
        throw std::invalid_argument("fit margin must be finite and >= 0");
    }
    if (!(containment_tol >= 0.0 && containment_tol < 1.0)) {
        throw std::invalid_argument("containment tolerance must lie in [0, 1)");
    }
    if (probes < 1) throw std::invalid_argument("probe count must be positive");
    if (search.restarts < 1 || search.iterations < 1 || search.population < 1 ||
        search.polish_sweeps < 0) {
        throw std::invalid_argument("search settings must be positive");
    }
    if (!(search.scale_max > 0.0)) throw std::invalid_argument("scale_max must be positive");
    if (volume_region && volume_region->nondegenerate_axes() == 0) {
        throw std::invalid_argument("volume region has zero volume");
    }
}

double estimate_set_size(const std::vector<CbfCandidate>& cands, const HardConstraint& hcf,
                         const SampleSet& s, const FitConfig& cfg) {
    if (cands.empty()) throw std::invalid_argument("estimate_set_size: no candidates");
    const BoxSet& region = region_of(s, cfg);
    const double volume = region_volume(s, cfg);
    if (!(volume > 0.0)) throw std::invalid_argument("volume region has zero volume");
    std::vector<Vec> pts;
    for (const SampleRecord& r : s.records) {
        if (region.contains(r.state)) pts.push_back(r.state);
    }
    if (pts.empty()) return 0.0;
    const std::vector<double> m = min_values(cands, hcf, pts);
    double acc = 0.0;
    for (double v : m) {
        acc += cfg.objective == SizeObjective::SampleCount ? (v >= 0.0 ? 1.0 : 0.0)
                                                           : std::max(0.0, v);
    }
    return acc / static_cast<double>(pts.size()) * volume;
}

double boundary_excess(const std::vector<CbfCandidate>& cands, const HardConstraint& hcf,
                       const BoundarySet& b) {
    const std::vector<double> m = min_values(cands, hcf, b.points);
    return m.empty() ? -kInf : *std::max_element(m.begin(), m.end());
}

FitResult fit_uniform(const SampleSet& s, const BoundarySet& b, const SystemModel& sys,
                      const BoxSet& input_box, const FitConfig& cfg) {
    if (cfg.mode != FitMode::Uniform) throw std::invalid_argument("fit_uniform: wrong mode");
    return run_fit(s, b, sys, input_box, cfg, {{CbfCandidate::identity(sys.n)}});
}

FitResult fit_nonuniform(const SampleSet& s, const BoundarySet& b, const SystemModel& sys,
                         const BoxSet& input_box, const FitConfig& cfg,
                         const std::optional<CbfCandidate>& warm_start) {
    if (cfg.mode != FitMode::NonUniform) throw std::invalid_argument("fit_nonuniform: wrong mode");
    std::vector<std::vector<CbfCandidate>> seeds;
    if (warm_start) seeds.push_back({*warm_start});
    seeds.push_back({CbfCandidate::identity(sys.n)});
    return run_fit(s, b, sys, input_box, cfg, seeds);
}

FitResult fit_multi(const SampleSet& s, const BoundarySet& b, const SystemModel& sys,
                    const BoxSet& input_box, const FitConfig& cfg,
                    const std::optional<CbfCandidate>& warm_start) {
    if (cfg.mode != FitMode::Multi) throw std::invalid_argument("fit_multi: wrong mode");
    cfg.validate();
    const int n = sys.n;
    const CbfCandidate identity = CbfCandidate::identity(n);
    const CbfCandidate base = warm_start.value_or(identity);

    // Axis-subset patterns: the constraint restricted to some coordinates, the rest frozen.
    std::vector<CbfCandidate> patterns;
    for (std::uint32_t mask = 1; n < 16 && mask + 1 < (1u << n); ++mask) {
        CbfCandidate p = identity;
        for (int i = 0; i < n; ++i) p.scale[i] = (mask >> i) & 1u ? 1.0 : 0.0;
        patterns.push_back(p);
    }

    auto fill = [&](std::vector<CbfCandidate> head) {
        while (static_cast<int>(head.size()) < cfg.count) head.push_back(head.back());
        head.resize(static_cast<std::size_t>(cfg.count));
        return head;
    };
    std::vector<std::vector<CbfCandidate>> seeds;
    seeds.push_back(fill({base}));
    for (const CbfCandidate& p : patterns) seeds.push_back(fill({identity, p}));
    if (warm_start) {
        for (const CbfCandidate& p : patterns) seeds.push_back(fill({base, p}));
    }
    return run_fit(s, b, sys, input_box, cfg, seeds);
}

RedundancyCheck check_redundancy(const CbfCandidate& c1, const CbfCandidate& c2,
                                 const HardConstraint& hcf, const std::vector<Vec>& probe_states) {
    RedundancyCheck out;
    if (probe_states.empty()) {
        out.indeterminate = true;
        return out;
    }
    if (probe_states.size() < static_cast<std::size_t>(c1.dim()) + 2) {
        throw std::invalid_argument("check_redundancy: need at least n + 2 probe states");
    }
    Vec arg(c1.dim());
    std::vector<double> h1, h2;
    double max1 = 0.0, max2 = 0.0;
    for (const Vec& x : probe_states) {
        h1.push_back(candidate_value(c1, hcf, x, arg));
        h2.push_back(candidate_value(c2, hcf, x, arg));
        max1 = std::max(max1, std::abs(h1.back()));
        max2 = std::max(max2, std::abs(h2.back()));
    }
    const double tol2 = 1e-9 * (1.0 + max2);
    const double tol1 = 1e-7 * (1.0 + max1);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < h1.size(); ++i) {
        if (std::abs(h2[i]) > tol2) {
            num += h1[i] * h2[i];
            den += h2[i] * h2[i];
        }
    }
    if (den == 0.0) {
        out.indeterminate = true;
        return out;
    }
    const double ratio = num / den;
    out.ratio = ratio;
    if (!(ratio > 0.0)) return out;
    for (std::size_t i = 0; i < h1.size(); ++i) {
        if (std::abs(h1[i] - ratio * h2[i]) > tol1) return out;
    }
    if (hcf.affine) {
        const RowVec& A = hcf.affine->A;
        const RowVec lin1 = A.cwiseProduct(c1.scale.transpose());
        const RowVec lin2 = A.cwiseProduct(c2.scale.transpose());
        const double icpt1 = A.dot(c1.shift) + c1.offset + hcf.affine->b;
        const double icpt2 = A.dot(c2.shift) + c2.offset + hcf.affine->b;
        const double scale = 1.0 + lin1.cwiseAbs().maxCoeff() + std::abs(icpt1);
        if ((lin1 - ratio * lin2).cwiseAbs().maxCoeff() > 1e-9 * scale) return out;
        if (std::abs(icpt1 - ratio * icpt2) > 1e-9 * scale) return out;
    }
    out.redundant = true;
    return out;
}

std::vector<PairRedundancy> collapse_redundant(std::vector<CbfCandidate>& cands,
                                               const HardConstraint& hcf,
                                               const std::vector<Vec>& probe_states,
                                               std::vector<std::string>* warnings) {
    std::vector<PairRedundancy> flags;
    std::vector<char> drop(cands.size(), 0);
    for (std::size_t i = 0; i < cands.size(); ++i) {
        for (std::size_t j = i + 1; j < cands.size(); ++j) {
            const RedundancyCheck r = check_redundancy(cands[i], cands[j], hcf, probe_states);
            flags.push_back({static_cast<int>(i), static_cast<int>(j), r.redundant, r.ratio});
            if (r.indeterminate && warnings) {
                warnings->push_back("redundancy of candidates " + std::to_string(i) + " and " +
                                    std::to_string(j) + " is indeterminate");
            }
            if (r.redundant && !drop[i]) drop[j] = 1;
        }
    }
    std::vector<CbfCandidate> kept;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        if (!drop[i]) kept.push_back(cands[i]);
    }
    if (kept.size() < cands.size() && warnings) {
        warnings->push_back("redundant candidates collapsed: " + std::to_string(cands.size()) +
                            " -> " + std::to_string(kept.size()));
    }
    cands = std::move(kept);
    return flags;
}

std::vector<Vec> redundancy_probes(const SampleSet& s, std::size_t count) {
    count = std::max<std::size_t>(count, static_cast<std::size_t>(s.bounds.dim()) + 2);
    std::vector<Vec> out;
    const std::size_t n = s.records.size();
    if (n == 0) return out;
    count = std::min(count, n);
    for (std::size_t q = 0; q < count; ++q) out.push_back(s.records[q * n / count].state);
    return out;
}

bool scaling_condition_holds(const CbfCandidate& cand, const SystemModel& sys,
                             const BoxSet& input_box, const Vec& x) {
    if (cand.is_uniform()) return true;
    RowVec w = sys.hcf.gradient(x);
    for (Eigen::Index i = 1; i < w.size(); ++i) w[i] *= cand.scale[i] - cand.scale[0];
    w[0] = 0.0;
    return exists_input_nonneg(w * sys.actuation(x), w.dot(sys.drift(x)), input_box);
}

std::vector<std::vector<Vec>> active_boundary_probes(const std::vector<CbfCandidate>& cands,
                                                     const HardConstraint& hcf,
                                                     const SampleSet& s, int per_candidate) {
    std::vector<std::vector<Vec>> out(cands.size());
    const std::size_t n = s.records.size();
    if (n < 2 || cands.empty()) return out;

    std::vector<Vec> pts;
    pts.reserve(n);
    for (const SampleRecord& r : s.records) pts.push_back(r.state);
    std::vector<std::vector<double>> h(cands.size());
    for (std::size_t j = 0; j < cands.size(); ++j) h[j] = min_values({cands[j]}, hcf, pts);
    std::vector<double> m(n, kInf);
    for (std::size_t j = 0; j < cands.size(); ++j) {
        for (std::size_t i = 0; i < n; ++i) m[i] = std::min(m[i], h[j][i]);
    }

    std::vector<Vec> unit;
    unit.reserve(n);
    for (const Vec& x : pts) unit.push_back(s.bounds.normalize(x));
    const int live = std::max(1, s.bounds.nondegenerate_axes());
    const double radius =
        std::min(0.5, 3.0 * std::pow(1.0 / static_cast<double>(n), 1.0 / live));
    const SpatialGrid grid(unit, radius);

    Vec arg(s.bounds.dim());
    for (std::size_t j = 0; j < cands.size(); ++j) {
        // in-set sample paired with its nearest neighbour that candidate j excludes
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t i = 0; i < n; ++i) {
            if (!(m[i] >= 0.0)) continue;
            std::size_t nearest = n;
            double best = kInf;
            grid.for_each_near(unit[i], radius, [&](std::size_t k) {
                if (h[j][k] < 0.0) {
                    const double d = (unit[k] - unit[i]).squaredNorm();
                    if (d < best) {
                        best = d;
                        nearest = k;
                    }
                }
                return true;
            });
            if (nearest < n) pairs.emplace_back(i, nearest);
        }
        const std::size_t want = std::min(pairs.size(), static_cast<std::size_t>(per_candidate));
        for (std::size_t q = 0; q < want; ++q) {
            const auto [a_idx, b_idx] = pairs[q * pairs.size() / want];
            Vec in = pts[a_idx];
            Vec out_pt = pts[b_idx];
            for (int it = 0; it < 60; ++it) {
                const Vec mid = 0.5 * (in + out_pt);
                if (candidate_value(cands[j], hcf, mid, arg) >= 0.0) {
                    in = mid;
                } else {
                    out_pt = mid;
                }
            }
            double others = kInf;
            for (std::size_t i = 0; i < cands.size(); ++i) {
                others = std::min(others, candidate_value(cands[i], hcf, in, arg));
            }
            if (others >= -1e-9) out[j].push_back(in);
        }
    }
    return out;
}

VerificationReport verify_candidate(const std::vector<CbfCandidate>& cands, const SampleSet& s,
                                    const BoundarySet& b, const SystemModel& sys,
                                    const BoxSet& input_box, int probes) {
    if (cands.empty()) throw std::invalid_argument("verify_candidate: no candidates");
    VerificationReport rep;

    std::vector<Vec> pts;
    pts.reserve(s.records.size());
    for (const SampleRecord& r : s.records) pts.push_back(r.state);
    const std::vector<double> m = min_values(cands, sys.hcf, pts);
    std::size_t good = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] >= 0.0) {
            ++rep.in_set_samples;
            if (s.records[i].cls == SampleClass::FeasibleZ0) ++good;
        }
    }
    if (rep.in_set_samples == 0) {
        rep.warnings.push_back("candidate set contains no samples; fractions are vacuous");
    } else {
        rep.containment_fraction =
            static_cast<double>(good) / static_cast<double>(rep.in_set_samples);
    }

    const auto boundary = active_boundary_probes(cands, sys.hcf, s, probes);
    std::size_t ok = 0;
    const Eigen::Index nu = input_box.dim();
    for (std::size_t j = 0; j < cands.size(); ++j) {
        for (const Vec& x : boundary[j]) {
            const RowVec grad = eval_h_grad(cands[j], sys.hcf, x);
            const double bias = grad.dot(sys.drift(x));
            QpProblem qp;
            qp.hessian = Mat::Zero(nu, nu);
            qp.linear = Vec::Zero(nu);
            qp.ineq_rows = grad * sys.actuation(x);
            qp.ineq_rhs = Vec::Constant(1, -bias - 1e-9 * (1.0 + std::abs(bias)));
            qp.box = input_box;
            ++rep.boundary_probes;
            if (solve_box_qp(qp).status == QpStatus::Optimal) ++ok;
        }
    }
    if (rep.boundary_probes > 0) {
        rep.boundary_cbf_feasible_fraction =
            static_cast<double>(ok) / static_cast<double>(rep.boundary_probes);
    }

    std::size_t pass = 0, total = 0;
    for (const CbfCandidate& c : cands) {
        for (const Vec& x : b.points) {
            ++total;
            if (scaling_condition_holds(c, sys, input_box, x)) ++pass;
        }
    }
    if (total > 0) rep.prop2_feasible_fraction = static_cast<double>(pass) / static_cast<double>(total);
    if (rep.containment_fraction < 1.0) {
        rep.warnings.push_back("candidate set includes samples outside the feasible class");
    }
    return rep;
}

}  // namespace cbfsyn
