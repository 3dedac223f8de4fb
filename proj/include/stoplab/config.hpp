#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "stoplab/sde.hpp"

namespace stoplab {

struct GainConfig {
    std::string kind = "constant"; // constant | capped_put | capped_call
    std::vector<double> weights;
    double strike = 1.0;
    double cap = 1.0;
    double smoothing = 0.1;
    double level = 1.0;
    double tf_a0 = 1.0;
    double tf_a1 = 0.0;
    double horizon = 1.0;
    GainSpec build() const;
};

struct ProblemConfig {
    std::vector<double> lambdas;
    std::string operator_kind = "diagonal"; // diagonal | dense
    std::vector<double> operator_diag;
    std::vector<std::vector<double>> operator_dense;
    std::string diffusion_kind = "constant"; // constant | saturated_affine
    std::vector<double> gamma;
    std::vector<double> gamma_amp;
    std::vector<double> gamma_slope;
    GainConfig gain;
    ProblemSpec build() const;
};

struct LadderConfig {
    std::vector<double> alphas{16.0};
    std::vector<int> ns{1};
    std::vector<double> radii{5.0};
    std::vector<double> penalty_epsilons{1e-4};
    std::string epsilon_rule = "inverse"; // inverse | inverse_log | explicit
    double epsilon_scale = 1.0;
    std::vector<double> epsilon_values; // used when the rule is explicit
    double base_radius = 5.0;
    int grid_nodes = 201;
    int time_steps = 100;
    double target_spacing = 0.05;
    double contact_delta = 1e-7;
    long mc_paths = 20000;
    int mc_steps = 200;
    long bundle_paths = 5000;
    long study_paths = 4000;
    int study_steps = 256;
    std::vector<double> study_alphas;
    std::vector<int> study_ns;
    long ou_paths = 20000;
    int ou_steps = 1024;

    double epsilon_for(int n) const;
};

struct ExperimentConfig {
    ProblemConfig problem;
    LadderConfig ladder;
    std::vector<double> x0{0.0};
    std::vector<std::vector<double>> probes;
    std::map<std::string, bool> checks;
    uint64_t seed = 1;
    std::string output_dir = "out";

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    void save(const std::string& path) const;

    /// Full range validation; throws InputError naming the offending key.
    void validate() const;
    std::string hash() const;
    bool enabled(const std::string& check) const;
};

} // namespace stoplab
