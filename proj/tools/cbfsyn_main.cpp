#include "cbfsyn/config.hpp"
#include "cbfsyn/pipeline.hpp"
#include "cbfsyn/serialization.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

struct Globals {
    std::string config;
    std::string out;
    int threads = 1;
    std::optional<std::uint64_t> seed;
    bool dry_run = false;
};

void add_globals(CLI::App& app, Globals& g) {
    app.add_option("--config", g.config, "Pipeline config file")->required()->check(CLI::ExistingFile);
    app.add_option("--out", g.out, "Output directory (default: output.dir from the config)");
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--seed", g.seed, "Overrides the sampling and fit seeds");
    app.add_flag("--dry-run", g.dry_run, "Validate the config and inputs, write nothing");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Control barrier function synthesis from hard constraints"};
    app.require_subcommand(1);

    Globals g;
    std::string samples, boundary;
    std::vector<std::string> candidates;

    CLI::App* sample = app.add_subcommand("sample", "Sample the state box until the Jaccard index settles");
    CLI::App* bnd = app.add_subcommand("boundary", "Extract the boundary of the feasible class");
    CLI::App* fit = app.add_subcommand("fit", "Fit the configured candidate modes");
    CLI::App* sim = app.add_subcommand("simulate", "Closed-loop runs with the safety filter");
    CLI::App* pipe = app.add_subcommand("pipeline", "All stages plus report.md");
    for (CLI::App* sub : {sample, bnd, fit, sim, pipe}) add_globals(*sub, g);
    bnd->add_option("--samples", samples, "Sample file (default: <out>/samples.jsonl)");
    fit->add_option("--samples", samples, "Sample file (default: <out>/samples.jsonl)");
    fit->add_option("--boundary", boundary, "Boundary file (default: <out>/boundary.jsonl)");
    sim->add_option("--candidates", candidates, "Fit result file(s) (default: every configured mode)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cbfsyn::kExitUsage;
    }

    cbfsyn::PipelineConfig cfg;
    try {
        cfg = cbfsyn::load_pipeline_config(g.config);
    } catch (const cbfsyn::ConfigError& e) {
        std::cerr << g.config << ": " << e.what() << "\n\n" << app.help();
        return cbfsyn::kExitUsage;
    }
    if (g.seed) cbfsyn::override_seed(cfg, *g.seed);

    cbfsyn::RunOptions opts;
    opts.out_dir = g.out;
    opts.threads = g.threads;
    opts.dry_run = g.dry_run;
    opts.log = &std::cout;
    if (!samples.empty()) opts.samples = samples;
    if (!boundary.empty()) opts.boundary = boundary;
    for (const std::string& c : candidates) opts.candidates.emplace_back(c);

    try {
        if (sample->parsed()) return cbfsyn::cmd_sample(cfg, opts);
        if (bnd->parsed()) return cbfsyn::cmd_boundary(cfg, opts);
        if (fit->parsed()) return cbfsyn::cmd_fit(cfg, opts);
        if (sim->parsed()) return cbfsyn::cmd_simulate(cfg, opts);
        return cbfsyn::cmd_pipeline(cfg, opts);
    } catch (const cbfsyn::IntegrityError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return cbfsyn::kExitIntegrity;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return cbfsyn::kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
