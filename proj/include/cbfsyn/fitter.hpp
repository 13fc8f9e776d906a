#pragma once

#include "cbfsyn/boundary.hpp"
#include "cbfsyn/sampler.hpp"
#include "cbfsyn/system.hpp"
#include "cbfsyn/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cbfsyn {

enum class FitMode { Uniform, NonUniform, Multi };
enum class SizeObjective { SampleCount, IntegralSurrogate };

const char* to_string(FitMode mode);
FitMode fit_mode_from_string(const std::string& name);
const char* to_string(SizeObjective objective);
SizeObjective size_objective_from_string(const std::string& name);

struct SearchSettings {
    int population = 16;    // random draws screened for each random restart
    int iterations = 400;   // Nelder-Mead evaluation budget per restart
    int restarts = 8;
    std::uint64_t seed = 0;
    int polish_sweeps = 2;
    std::size_t subsample = 30000;  // samples used inside the search loop; 0 = all
    double scale_max = 10.0;
    int threads = 1;
};

struct FitConfig {
    FitMode mode = FitMode::Uniform;
    int count = 1;  // number of candidates; Multi needs >= 2
    double margin = 0.0;
    SizeObjective objective = SizeObjective::SampleCount;
    SearchSettings search;
    std::optional<BoxSet> volume_region;  // defaults to the sampling box
    double containment_tol = 1e-3;
    int probes = 256;

    void validate() const;
};

struct VerificationReport {
    double containment_fraction = 1.0;
    double boundary_cbf_feasible_fraction = 1.0;
    double prop2_feasible_fraction = 1.0;
    std::size_t in_set_samples = 0;
    std::size_t boundary_probes = 0;
    std::vector<std::string> warnings;
};

struct RedundancyCheck {
    bool redundant = false;
    bool indeterminate = false;
    double ratio = 0.0;  // h1 = ratio * h2 when redundant
};

struct PairRedundancy {
    int first = 0;
    int second = 0;
    bool redundant = false;
    double ratio = 0.0;
};

struct FitResult {
    FitMode mode = FitMode::Uniform;
    bool feasible = false;
    std::vector<CbfCandidate> candidates;
    double objective_value = 0.0;
    VerificationReport verification;
    std::vector<PairRedundancy> redundancy;
    std::vector<double> restart_values;  // final objective of each restart, search data only
    std::vector<std::string> warnings;
    FitConfig config;
};

/// Fraction-of-samples estimate of the size of {min_j h_j >= 0} inside the volume region.
double estimate_set_size(const std::vector<CbfCandidate>& cands, const HardConstraint& hcf,
                         const SampleSet& s, const FitConfig& cfg);

/// max_k min_j h_j(x_k) over the boundary points, -inf when there are none. A fit honours the
/// boundary constraint when this is <= -margin.
double boundary_excess(const std::vector<CbfCandidate>& cands, const HardConstraint& hcf,
                       const BoundarySet& b);

/// The input box only enters the verification report; a uniform scaling has no input condition.
FitResult fit_uniform(const SampleSet& s, const BoundarySet& b, const SystemModel& sys,
                      const BoxSet& input_box, const FitConfig& cfg);

/// `warm_start` (typically the uniform incumbent) seeds restart 0.
FitResult fit_nonuniform(const SampleSet& s, const BoundarySet& b, const SystemModel& sys,
                         const BoxSet& input_box, const FitConfig& cfg,
                         const std::optional<CbfCandidate>& warm_start = std::nullopt);

FitResult fit_multi(const SampleSet& s, const BoundarySet& b, const SystemModel& sys,
                    const BoxSet& input_box, const FitConfig& cfg,
                    const std::optional<CbfCandidate>& warm_start = std::nullopt);

/// Is h1 = ratio * h2 with ratio > 0 on every probe?
RedundancyCheck check_redundancy(const CbfCandidate& c1, const CbfCandidate& c2,
                                 const HardConstraint& hcf, const std::vector<Vec>& probe_states);

/// Drops every candidate that is a positive multiple of an earlier one. Returns the pair flags
/// computed before dropping.
std::vector<PairRedundancy> collapse_redundant(std::vector<CbfCandidate>& cands,
                                               const HardConstraint& hcf,
                                               const std::vector<Vec>& probe_states,
                                               std::vector<std::string>* warnings = nullptr);

/// Deterministic probe subset of the samples (evenly strided), at least n + 2 states.
std::vector<Vec> redundancy_probes(const SampleSet& s, std::size_t count = 64);

/// The feasible-input condition on the non-uniform part of the scaling:
/// exists u in U with dz/dx(x) Dbar (f(x) + g(x) u) >= 0, Dbar = diag(0, d2 - d1, ..., dn - d1).
bool scaling_condition_holds(const CbfCandidate& cand, const SystemModel& sys,
                             const BoxSet& input_box, const Vec& x);

VerificationReport verify_candidate(const std::vector<CbfCandidate>& cands, const SampleSet& s,
                                    const BoundarySet& b, const SystemModel& sys,
                                    const BoxSet& input_box, int probes);

/// States on {h_j = 0, min_i h_i >= 0} found by bisection between neighbouring in-set and
/// out-of-set samples, at most `per_candidate` for each candidate.
std::vector<std::vector<Vec>> active_boundary_probes(const std::vector<CbfCandidate>& cands,
                                                     const HardConstraint& hcf,
                                                     const SampleSet& s, int per_candidate);

}  // namespace cbfsyn
