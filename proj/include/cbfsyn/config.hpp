#pragma once

#include "cbfsyn/boundary.hpp"
#include "cbfsyn/fitter.hpp"
#include "cbfsyn/sampler.hpp"
#include "cbfsyn/system.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cbfsyn {

struct ConfigPosition {
    int line = 0;  // 1-based; 0 means "no position"
    int column = 0;
};

/// Syntax or schema problem in a config file. what() already carries "line L, column C: ".
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& message, ConfigPosition where);
    ConfigPosition where() const { return where_; }

private:
    ConfigPosition where_;
};

/// Sections of key = value entries, kept as {section: {key: value}} plus source positions.
/// Grammar (a TOML subset):
///   file    := { blank | comment | header | entry }
///   header  := '[' name ']'
///   entry   := name '=' value
///   value   := string | number | 'true' | 'false' | array
///   array   := '[' [ value { ',' value } [','] ] ']'      (may span lines)
///   string  := '"' chars with \" \\ \n \t escapes '"'
///   name    := [A-Za-z0-9_-]+
/// '#' starts a comment outside strings. Entries must follow a header; duplicate sections or
/// keys are errors.
struct ConfigDocument {
    nlohmann::json values = nlohmann::json::object();
    std::map<std::string, ConfigPosition> positions;  // "section" and "section.key"

    ConfigPosition where(const std::string& section, const std::string& key = {}) const;
};

ConfigDocument parse_config(std::string_view text);

struct SimulateSection {
    std::vector<Vec> starts;
    Vec goal;
    double horizon = 10.0;
    double dt = 0.01;
    double kp = 10.0;
    double spline_duration = 0.0;
    double kappa = 5.0;
    std::vector<double> kappas;  // per candidate; empty = kappa for every candidate
    std::optional<double> relaxation;
    bool step_correction = true;
    bool require_safe_start = true;
    bool stop_on_infeasible = false;
    int adversarial_grid = 20;  // per-axis starts of the full-throttle sweep; 0 disables
    bool unfiltered_demo = true;
    double goal_radius = 0.5;
};

struct ReportSection {
    bool verify_determinism = false;  // rerun every stage in memory and compare bytes
    int qp_checks = 500;
};

struct PipelineConfig {
    std::string system_name;
    ParamTable system_params;
    SamplingConfig sampling;
    BoundaryOptions boundary;
    std::vector<FitMode> fit_modes{FitMode::Uniform, FitMode::NonUniform, FitMode::Multi};
    int multi_count = 2;
    FitConfig fit;  // mode and count are filled per run
    SimulateSection simulate;
    ReportSection report;
    std::string output_dir = "out";

    SystemInstance instantiate() const;
    FitConfig fit_for(FitMode mode) const;
    std::vector<double> alphas(std::size_t candidates) const;
};

/// Unknown sections or keys, wrong types and invalid values raise ConfigError at their position.
PipelineConfig pipeline_config_from(const ConfigDocument& doc);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Canonical echo of every setting (threads excluded); digests of its sections key the caches.
nlohmann::json pipeline_config_json(const PipelineConfig& cfg);

}  // namespace cbfsyn
