// Command line front end: validate configurations, run experiment batches,
// re-emit summaries from manifests and drive the sweep subset.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "stoplab/runner.hpp"

namespace {

int do_validate(const std::string& config_path) {
    try {
        const auto cfg = stoplab::ExperimentConfig::load(config_path);
        cfg.validate();
        stoplab::validate_check_ids(cfg);
        // round-trip integrity
        const auto again = stoplab::ExperimentConfig::from_json(cfg.to_json());
        if (again.to_json() != cfg.to_json()) {
            std::cerr << "validate: serialization round-trip mismatch\n";
            return 1;
        }
        std::cout << "ok " << cfg.hash() << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "invalid: " << e.what() << "\n";
        return 1;
    }
}

int do_run(const std::string& config_path, const stoplab::RunOptions& opts) {
    const auto cfg = stoplab::ExperimentConfig::load(config_path);
    const auto manifest = stoplab::run_experiment(cfg, opts);
    for (const auto& task : manifest.tasks) {
        for (const auto& check : task.checks)
            std::cout << (check.pass ? "[pass] " : "[FAIL] ") << check.id << "  measured="
                      << check.measured << " bound=" << check.bound << "\n";
        if (task.checks.empty())
            std::cout << "[" << task.status << "] " << task.id << "\n";
    }
    std::cout << "manifest: " << manifest.output_dir << "/manifest.json\n";
    return manifest.all_pass() ? 0 : 1;
}

int do_report(const std::string& manifest_path, const std::string& format,
              const std::string& out_path) {
    const auto manifest = stoplab::RunManifest::load(manifest_path);
    stoplab::verify_artifacts(manifest);
    const std::string body = format == "jsonl" ? stoplab::summary_jsonl(manifest)
                                               : stoplab::summary_csv(manifest);
    if (out_path.empty()) {
        std::cout << body;
    } else {
        std::ofstream f(out_path, std::ios::binary);
        if (!f) {
            std::cerr << "report: cannot write " << out_path << "\n";
            return 1;
        }
        f << body;
    }
    return manifest.all_pass() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimal-stopping approximation ladder laboratory"};
    app.require_subcommand(1);

    std::string config_path, manifest_path, format = "csv", out_override, report_out;
    stoplab::RunOptions opts;
    uint64_t seed = 0;
    bool seed_set = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Configuration file")->required();
        cmd->add_option("--seed", seed, "Master seed override")->each([&](const std::string&) {
            seed_set = true;
        });
        cmd->add_option("--out", out_override, "Output directory override");
        cmd->add_option("--jobs", opts.jobs, "Worker threads for independent tasks");
        cmd->add_option("--check", opts.only_checks, "Run only the named checks");
    };

    auto* validate = app.add_subcommand("validate", "Parse and range-check a configuration");
    validate->add_option("--config", config_path, "Configuration file")->required();

    auto* run = app.add_subcommand("run", "Execute the enabled checks");
    add_common(run);

    auto* sweep = app.add_subcommand("sweep", "Execute only the sweep checks");
    add_common(sweep);

    auto* report = app.add_subcommand("report", "Summarize a manifest");
    report->add_option("--manifest", manifest_path, "Manifest file")->required();
    report->add_option("--format", format, "csv or json-lines")
        ->check(CLI::IsMember({"csv", "jsonl"}));
    report->add_option("--out", report_out, "Write the summary here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(validate)) return do_validate(config_path);
        opts.output_override = out_override;
        opts.has_seed_override = seed_set;
        opts.seed_override = seed;
        if (app.got_subcommand(run)) return do_run(config_path, opts);
        if (app.got_subcommand(sweep)) {
            if (opts.only_checks.empty()) opts.only_checks = {"sweep"};
            return do_run(config_path, opts);
        }
        if (app.got_subcommand(report)) return do_report(manifest_path, format, report_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
