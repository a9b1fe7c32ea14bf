// Command line front end: convergence sweeps from a JSON config, the
// randomized identity/bound check suite, and a built-in demo sweep.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "esrf/esrf.hpp"

namespace {

using namespace esrf;

void print_report_summary(const ConvergenceReport& rep) {
    std::printf("%-18s %-17s %9s %9s %6s  %s\n", "variant", "error_kind", "slope", "r2",
                "pass", "note");
    for (const ErrorTable& t : rep.tables) {
        if (t.fit)
            std::printf("%-18s %-17s %9.3f %9.4f %6s  %s\n", t.variant.c_str(),
                        to_string(t.kind), t.fit->slope, t.fit->r_squared,
                        t.pass ? "yes" : "NO", t.note.c_str());
        else
            std::printf("%-18s %-17s %9s %9s %6s  %s\n", t.variant.c_str(), to_string(t.kind),
                        "-", "-", t.pass ? "yes" : "NO", t.note.c_str());
    }
}

int run_sweep_command(const std::string& config_path, const std::string& out_dir,
                      int seeds_override, int parallel_override,
                      const std::string& format_override) {
    const json root = load_json_file(config_path);
    SweepConfig cfg = parse_sweep_config(root);
    OutputConfig out = parse_output_config(root);

    if (seeds_override > 0) cfg.num_seeds = seeds_override;
    if (parallel_override >= 0) cfg.parallelism = parallel_override;
    if (!out_dir.empty()) out.directory = out_dir;
    if (!format_override.empty()) {
        if (format_override == "csv") out.format = ReportFormat::Csv;
        else if (format_override == "jsonl") out.format = ReportFormat::JsonLines;
        else throw ConfigError("--format: expected csv | jsonl");
    }

    const ConvergenceReport rep = run_sweep(cfg);
    emit_report(rep, out.format, out.directory);
    print_report_summary(rep);
    std::cout << "report written to " << out.directory << "\n";
    return rep.all_pass() ? 0 : 1;
}

int run_check_command(std::uint64_t seed, int scale) {
    const std::vector<CheckResult> results = run_identity_checks(seed, scale);
    bool all_pass = true;
    for (const CheckResult& r : results) {
        std::printf("check %-38s %-4s  trials %-5d worst residual/tol %.3g\n", r.name.c_str(),
                    r.pass ? "pass" : "FAIL", r.trials, r.max_residual);
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

int run_demo_command(const std::string& out_dir, int seeds, int parallel) {
    // built-in scalar model sweep across the deterministic filters
    StateSpaceModel model(1, 1, LinearDrift{Matrix::Constant(1, 1, -0.5)},
                          Matrix::Identity(1, 1), Matrix::Identity(1, 1),
                          Matrix::Identity(1, 1), 2.0);
    SweepConfig cfg{std::move(model)};
    cfg.model_tag = "demo-scalar";
    for (FilterKind kind :
         {FilterKind::Eakf, FilterKind::Etkf, FilterKind::WhitakerHamill}) {
        EsrfVariant v;
        v.kind = kind;
        v.perturbation.kind = PerturbationKind::Reich;
        cfg.variants.push_back(v);
    }
    for (int k = 4; k <= 9; ++k) cfg.h_values.push_back(std::pow(2.0, -k));
    cfg.num_seeds = seeds;
    cfg.parallelism = parallel;
    cfg.error_kinds = {ErrorKind::CovForecast, ErrorKind::CovAnalysis, ErrorKind::Mean,
                       ErrorKind::EnsembleGap, ErrorKind::PairwiseVariant};

    const ConvergenceReport rep = run_sweep(cfg);
    emit_report(rep, ReportFormat::Csv, out_dir);
    print_report_summary(rep);
    std::cout << "demo report written to " << out_dir << "\n";
    return rep.all_pass() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ensemble square-root filters, their continuous-time limits, and "
                 "convergence-rate sweeps"};
    app.require_subcommand(1);

    std::string config_path, out_dir, format;
    int seeds = -1;
    int parallel = -1;

    CLI::App* sweep = app.add_subcommand("sweep", "run a sweep described by a JSON config");
    sweep->add_option("--config", config_path, "sweep configuration file")
        ->required()
        ->check(CLI::ExistingFile);
    sweep->add_option("--out", out_dir, "output directory (overrides the config)");
    sweep->add_option("--seeds", seeds, "number of seeds (overrides the config)");
    sweep->add_option("--parallel", parallel, "worker threads, 0 = hardware");
    sweep->add_option("--format", format, "csv | jsonl (overrides the config)");

    std::uint64_t check_seed = 0xC0FFEE;
    int check_scale = 1;
    CLI::App* check = app.add_subcommand(
        "check", "run the randomized identity and bound checks, print pass/fail");
    check->add_option("--seed", check_seed, "base seed for the random instances");
    check->add_option("--scale", check_scale, "trial count multiplier")
        ->check(CLI::PositiveNumber);

    std::string demo_out = "demo-out";
    int demo_seeds = 10;
    int demo_parallel = 0;
    CLI::App* demo = app.add_subcommand("demo", "built-in scalar-model sweep");
    demo->add_option("--out", demo_out, "output directory");
    demo->add_option("--seeds", demo_seeds, "number of seeds")->check(CLI::PositiveNumber);
    demo->add_option("--parallel", demo_parallel, "worker threads, 0 = hardware");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sweep->parsed())
            return run_sweep_command(config_path, out_dir, seeds, parallel, format);
        if (check->parsed()) return run_check_command(check_seed, check_scale);
        if (demo->parsed()) return run_demo_command(demo_out, demo_seeds, demo_parallel);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
