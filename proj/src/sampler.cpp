#include "cbfsyn/sampler.hpp"

#include "cbfsyn/parallel.hpp"
#include "cbfsyn/qp.hpp"

#include <cmath>
#include <stdexcept>

namespace cbfsyn {

const char* to_string(SampleClass cls) {
    switch (cls) {
        case SampleClass::OutsideZ:
            return "outside";
        case SampleClass::InfeasibleZ:
            return "infeasible";
        case SampleClass::FeasibleZ0:
            return "feasible";
    }
    return "outside";
}

SampleClass sample_class_from_string(const std::string& name) {
    if (name == "outside") return SampleClass::OutsideZ;
    if (name == "infeasible") return SampleClass::InfeasibleZ;
    if (name == "feasible") return SampleClass::FeasibleZ0;
    throw std::invalid_argument("unknown sample class '" + name + "'");
}

void JaccardTracker::add(const SampleRecord& record) {
    ++n_total_;
    if (record.cls == SampleClass::FeasibleZ0) ++n_feasible_;
}

void JaccardTracker::add_counts(std::size_t total, std::size_t feasible) {
    if (feasible > total) throw std::invalid_argument("feasible count exceeds total");
    n_total_ += total;
    n_feasible_ += feasible;
}

double JaccardTracker::jaccard() const {
    return n_total_ == 0 ? 0.0 : static_cast<double>(n_feasible_) / static_cast<double>(n_total_);
}

Checkpoint JaccardTracker::checkpoint() {
    history_.push_back({n_total_, jaccard()});
    return history_.back();
}

StatePredicate input_independent_ascent(const SystemModel& sys) {
    return [sys](const Vec& x) {
        const RowVec lg = lie_g(sys, x);
        return lg.cwiseAbs().maxCoeff() == 0.0 && lie_f(sys, x) > 0.0;
    };
}

std::vector<Vec> draw_batch(const BoxSet& bounds, std::size_t count, const CounterRng& rng,
                            std::size_t first) {
    if (count < 1) throw std::invalid_argument("draw_batch: count must be >= 1");
    const auto n = static_cast<std::size_t>(bounds.dim());
    std::vector<Vec> out(count, Vec(bounds.dim()));
    const Vec& lo = bounds.lower();
    const Vec w = bounds.width();
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t a = 0; a < n; ++a) {
            const auto ax = static_cast<Eigen::Index>(a);
            out[i][ax] = lo[ax] + w[ax] * rng.uniform((first + i) * n + a);
        }
    }
    return out;
}

SampleRecord classify(const SystemModel& sys, const BoxSet& input_box, const Vec& x,
                      double zero_tol, const StatePredicate& extra_feasible) {
    SampleRecord rec;
    rec.state = x;
    if (eval_z(sys.hcf, x) < 0.0) {
        rec.cls = SampleClass::OutsideZ;
        return rec;
    }
    const ResidualResult r = min_zdot_residual(sys, x, input_box);
    if (!std::isfinite(r.residual)) throw std::domain_error("classify: non-finite residual");
    rec.residual = r.residual;
    const bool zeroable = r.residual <= residual_zero_tolerance(lie_f(sys, x), zero_tol);
    rec.cls = zeroable || (extra_feasible && extra_feasible(x)) ? SampleClass::FeasibleZ0
                                                                : SampleClass::InfeasibleZ;
    return rec;
}

void SamplingConfig::validate() const {
    if (bounds.dim() < 1) throw std::invalid_argument("sampling: bounds must be set");
    if (n_min < 1) throw std::invalid_argument("sampling: n_min must be >= 1");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("sampling: delta must be in (0, 1)");
    if (!(growth > 1.0)) throw std::invalid_argument("sampling: growth must be > 1");
    if (n_start < 1) throw std::invalid_argument("sampling: n_start must be >= 1");
    if (n_max < n_start) throw std::invalid_argument("sampling: n_max must be >= n_start");
    if (!(zero_tol >= 0.0)) throw std::invalid_argument("sampling: zero_tol must be >= 0");
}

std::vector<std::size_t> checkpoint_schedule(const SamplingConfig& cfg) {
    std::vector<std::size_t> sizes;
    double target = static_cast<double>(cfg.n_start);
    std::size_t last = 0;
    while (true) {
        auto n = static_cast<std::size_t>(std::llround(target));
        if (n <= last) n = last + 1;
        sizes.push_back(n);
        if (n >= cfg.n_max) break;
        last = n;
        target *= cfg.growth;
    }
    return sizes;
}

SampleSet run_sampling(const SystemModel& sys, const BoxSet& input_box, const SamplingConfig& cfg,
                       const StatePredicate& extra_feasible) {
    cfg.validate();
    if (cfg.bounds.dim() != sys.n) throw std::invalid_argument("sampling: bounds dimension != n");
    SampleSet set;
    set.bounds = cfg.bounds;
    set.seed = cfg.seed;
    set.zero_tol = cfg.zero_tol;
    const CounterRng rng = CounterRng(cfg.seed).split(0);

    double previous_j = 0.0;
    bool have_previous = false;
    for (const std::size_t n : checkpoint_schedule(cfg)) {
        const std::size_t first = set.records.size();
        const std::size_t count = n - first;
        const std::vector<Vec> states = draw_batch(cfg.bounds, count, rng, first);
        std::vector<SampleRecord> batch(count);
        parallel_for(count, cfg.threads, [&](std::size_t i) {
            batch[i] = classify(sys, input_box, states[i], cfg.zero_tol, extra_feasible);
        });
        for (auto& rec : batch) {
            set.tracker.add(rec);
            set.records.push_back(std::move(rec));
        }
        const Checkpoint cp = set.tracker.checkpoint();
        const bool settled = have_previous && std::abs(cp.jaccard - previous_j) <= cfg.delta;
        if (cp.n >= cfg.n_min && settled) {
            set.converged = true;
            break;
        }
        previous_j = cp.jaccard;
        have_previous = true;
    }
    return set;
}

SampleSet merge(const SampleSet& a, const SampleSet& b) {
    if (!(a.bounds == b.bounds)) throw std::invalid_argument("merge: sampling bounds differ");
    SampleSet out;
    out.bounds = a.bounds;
    out.seed = a.seed;
    out.zero_tol = a.zero_tol;
    out.records = a.records;
    out.records.insert(out.records.end(), b.records.begin(), b.records.end());
    out.tracker.add_counts(a.tracker.n_total(), a.tracker.n_feasible());
    out.tracker.add_counts(b.tracker.n_total(), b.tracker.n_feasible());
    out.tracker.checkpoint();
    out.converged = a.converged && b.converged;
    return out;
}

}  // namespace cbfsyn
