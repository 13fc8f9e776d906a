#pragma once

#include "cbfsyn/rng.hpp"
#include "cbfsyn/system.hpp"
#include "cbfsyn/types.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cbfsyn {

enum class SampleClass { OutsideZ, InfeasibleZ, FeasibleZ0 };

/// "outside" | "infeasible" | "feasible"
const char* to_string(SampleClass cls);
SampleClass sample_class_from_string(const std::string& name);

struct SampleRecord {
    Vec state;
    SampleClass cls = SampleClass::OutsideZ;
    double residual = 0.0;  // 0 for OutsideZ
};

struct Checkpoint {
    std::size_t n = 0;
    double jaccard = 0.0;
};

/// card(feasible) / card(all) with its value recorded at each checkpoint.
class JaccardTracker {
public:
    void add(const SampleRecord& record);
    void add_counts(std::size_t total, std::size_t feasible);
    Checkpoint checkpoint();

    std::size_t n_total() const { return n_total_; }
    std::size_t n_feasible() const { return n_feasible_; }
    double jaccard() const;
    const std::vector<Checkpoint>& history() const { return history_; }
    void set_history(std::vector<Checkpoint> history) { history_ = std::move(history); }

private:
    std::size_t n_total_ = 0;
    std::size_t n_feasible_ = 0;
    std::vector<Checkpoint> history_;
};

using StatePredicate = std::function<bool(const Vec&)>;

/// Input cannot move zdot but zdot is already strictly positive: L_g z = 0 and L_f z > 0.
StatePredicate input_independent_ascent(const SystemModel& sys);

/// Points i in [first, first + count) of the stream; axis a of point i uses counter i * n + a.
std::vector<Vec> draw_batch(const BoxSet& bounds, std::size_t count, const CounterRng& rng,
                            std::size_t first = 0);

/// zero_tol is the scale of the residual threshold zero_tol * (1 + (L_f z)^2).
SampleRecord classify(const SystemModel& sys, const BoxSet& input_box, const Vec& x,
                      double zero_tol, const StatePredicate& extra_feasible);

struct SamplingConfig {
    BoxSet bounds;
    std::size_t n_start = 243;
    std::size_t n_min = 1000;
    std::size_t n_max = 1594323;
    double delta = 1e-3;
    double growth = 3.0;
    std::uint64_t seed = 0;
    double zero_tol = 1e-9;
    int threads = 1;

    void validate() const;
};

struct SampleSet {
    std::vector<SampleRecord> records;
    BoxSet bounds;
    std::uint64_t seed = 0;
    double zero_tol = 1e-9;
    JaccardTracker tracker;
    bool converged = false;
};

/// Checkpoint sizes n_start, n_start * growth, ... (rounded) up to and including the first
/// size >= n_max.
std::vector<std::size_t> checkpoint_schedule(const SamplingConfig& cfg);

/// Grows the nested sample set along the schedule and stops at the first checkpoint with
/// n >= n_min and |J_k - J_{k-1}| <= delta. Reaching n_max first returns converged = false.
SampleSet run_sampling(const SystemModel& sys, const BoxSet& input_box, const SamplingConfig& cfg,
                       const StatePredicate& extra_feasible);

/// Concatenation with summed tracker counts; the merged history holds one checkpoint.
SampleSet merge(const SampleSet& a, const SampleSet& b);

}  // namespace cbfsyn
