#pragma once

#include "stoplab/config.hpp"

namespace stoplab {

struct CheckResult {
    std::string id;
    std::string property; // stable description of what the check certifies
    bool pass = false;
    double measured = 0.0;
    double bound = 0.0;
    double tolerance = 0.0;
    std::string detail;
};

struct TaskRecord {
    std::string id;
    std::string status; // "ok" | "failed" | "error"
    double seconds = 0.0;
    std::vector<std::string> artifacts;
    std::vector<CheckResult> checks;
};

struct RunManifest {
    std::string config_hash;
    std::string version;
    std::string output_dir;
    std::vector<TaskRecord> tasks;

    bool all_pass() const;
    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

struct RunOptions {
    int jobs = 1;
    std::vector<std::string> only_checks; // empty = everything enabled in the config
    std::string output_override;
    bool has_seed_override = false;
    uint64_t seed_override = 0;
};

/// Executes the enabled checks, persists artifacts under the output directory
/// and returns the manifest (also written as manifest.json).
RunManifest run_experiment(const ExperimentConfig& config, const RunOptions& opts = {});

/// One row per check: id, property, status, measured, bound, tolerance.
std::string summary_csv(const RunManifest& manifest);
std::string summary_jsonl(const RunManifest& manifest);

/// Verifies that every artifact recorded in the manifest exists on disk.
void verify_artifacts(const RunManifest& manifest);

/// The full catalog of check ids with their property strings.
const std::map<std::string, std::string>& check_catalog();

/// Rejects configurations naming checks that do not exist.
void validate_check_ids(const ExperimentConfig& config);

} // namespace stoplab
