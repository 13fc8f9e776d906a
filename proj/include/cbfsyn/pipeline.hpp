#pragma once

#include "cbfsyn/config.hpp"
#include "cbfsyn/fitter.hpp"
#include "cbfsyn/simulator.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cbfsyn {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitNotConverged = 3,
    kExitIntegrity = 4,
    kExitInfeasibleFit = 5,
};

struct RunOptions {
    std::filesystem::path out_dir;  // empty = the config's output.dir
    int threads = 1;
    bool dry_run = false;
    std::ostream* log = nullptr;  // progress lines; nothing is logged when null
    // Explicit inputs for the single-stage commands; default to the files in out_dir.
    std::optional<std::filesystem::path> samples;
    std::optional<std::filesystem::path> boundary;
    std::vector<std::filesystem::path> candidates;
};

/// Fixed artifact names inside the output directory.
namespace artifact {
inline constexpr const char* samples = "samples.jsonl";
inline constexpr const char* convergence = "convergence.csv";
inline constexpr const char* boundary = "boundary.jsonl";
inline constexpr const char* boundary_summary = "boundary_summary.json";
inline constexpr const char* stages = "stages.json";
inline constexpr const char* report = "report.md";
std::string fit_json(FitMode mode);
std::string fit_report(FitMode mode);
std::string sim_dir(FitMode mode);
}  // namespace artifact

struct RunSummary {
    Vec start;
    bool admitted = false;
    std::string file;
    InvarianceReport invariance;
    std::size_t alpha_violations = 0;
    int correction_failures = 0;
    Vec terminal;
};

struct SweepSummary {
    std::size_t runs = 0;
    std::size_t unsafe = 0;
    std::size_t infeasible_steps = 0;
    std::size_t runs_with_infeasible = 0;
};

struct ModeSimulation {
    FitMode mode = FitMode::Uniform;
    std::string candidates_file;
    std::string candidates_checksum;
    std::vector<RunSummary> runs;
    std::optional<RunSummary> unfiltered;
    std::optional<SweepSummary> sweep;
};

/// Certificates of the box QP solver on random problems: KKT residuals for Optimal solves,
/// a positive Farkas gap for Infeasible ones.
struct QpSelfCheck {
    int problems = 0;
    int optimal = 0;
    int infeasible = 0;
    int failures = 0;
    double max_kkt_residual = 0.0;
};

QpSelfCheck qp_self_check(int problems, std::uint64_t seed);

/// Each command returns an ExitCode. Configuration errors are the caller's to report (exit 2).
int cmd_sample(const PipelineConfig& cfg, const RunOptions& opts);
int cmd_boundary(const PipelineConfig& cfg, const RunOptions& opts);
int cmd_fit(const PipelineConfig& cfg, const RunOptions& opts);
int cmd_simulate(const PipelineConfig& cfg, const RunOptions& opts);
/// sample -> boundary -> fit (each configured mode) -> simulate, then report.md. Stages whose
/// recorded inputs and file digests still match are reused.
int cmd_pipeline(const PipelineConfig& cfg, const RunOptions& opts);

/// Applies --seed: the sampling seed and the fit search seed.
void override_seed(PipelineConfig& cfg, std::uint64_t seed);

}  // namespace cbfsyn
