#include "stoplab/config.hpp"

#include <fstream>

namespace stoplab {

using nlohmann::json;

GainSpec GainConfig::build() const {
    const TimeFactor tf{tf_a0, tf_a1};
    if (kind == "constant") return GainSpec::constant(level, tf, horizon);
    Vec w(static_cast<Eigen::Index>(weights.size()));
    for (size_t i = 0; i < weights.size(); ++i) w[static_cast<Eigen::Index>(i)] = weights[i];
    if (kind == "capped_put") return GainSpec::capped_put(w, strike, cap, smoothing, tf, horizon);
    if (kind == "capped_call") return GainSpec::capped_call(w, strike, cap, smoothing, tf, horizon);
    throw InputError("config: gain.kind must be constant, capped_put or capped_call");
}

ProblemSpec ProblemConfig::build() const {
    CovarianceSpec cov(lambdas);
    OperatorSpec op = [&] {
        if (operator_kind == "diagonal") return OperatorSpec::diagonal(operator_diag);
        if (operator_kind == "dense") {
            const auto rows = operator_dense.size();
            Mat m(rows, rows);
            for (size_t i = 0; i < rows; ++i) {
                if (operator_dense[i].size() != rows)
                    throw InputError("config: operator.dense must be square");
                for (size_t j = 0; j < rows; ++j)
                    m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                        operator_dense[i][j];
            }
            return OperatorSpec::dense(m);
        }
        throw InputError("config: operator.kind must be diagonal or dense");
    }();
    auto to_vec = [](const std::vector<double>& v) {
        Vec out(static_cast<Eigen::Index>(v.size()));
        for (size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
        return out;
    };
    DiffusionSpec diff = [&] {
        if (diffusion_kind == "constant") return DiffusionSpec::constant_gamma(to_vec(gamma));
        if (diffusion_kind == "saturated_affine")
            return DiffusionSpec::saturated_affine(to_vec(gamma), to_vec(gamma_amp),
                                                   to_vec(gamma_slope));
        throw InputError("config: diffusion.kind must be constant or saturated_affine");
    }();
    return ProblemSpec{std::move(op), std::move(cov), std::move(diff), gain.build(),
                       gain.horizon};
}

double LadderConfig::epsilon_for(int n) const {
    if (epsilon_rule == "inverse") return epsilon_schedule(n, EpsilonRule::Inverse, epsilon_scale);
    if (epsilon_rule == "inverse_log")
        return epsilon_schedule(n, EpsilonRule::InverseLog, epsilon_scale);
    if (epsilon_rule == "explicit") {
        if (n < 1 || static_cast<size_t>(n) > epsilon_values.size())
            throw InputError("config: ladder.epsilon_values missing level " + std::to_string(n));
        return epsilon_values[static_cast<size_t>(n - 1)];
    }
    throw InputError("config: ladder.epsilon_rule must be inverse, inverse_log or explicit");
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& dst) {
    if (j.contains(key)) dst = j.at(key).get<T>();
}

} // namespace

json ExperimentConfig::to_json() const {
    json j;
    j["problem"]["covariance"]["lambdas"] = problem.lambdas;
    j["problem"]["operator"]["kind"] = problem.operator_kind;
    if (problem.operator_kind == "diagonal")
        j["problem"]["operator"]["entries"] = problem.operator_diag;
    else
        j["problem"]["operator"]["matrix"] = problem.operator_dense;
    j["problem"]["diffusion"]["kind"] = problem.diffusion_kind;
    j["problem"]["diffusion"]["gamma"] = problem.gamma;
    if (problem.diffusion_kind == "saturated_affine") {
        j["problem"]["diffusion"]["amp"] = problem.gamma_amp;
        j["problem"]["diffusion"]["slope"] = problem.gamma_slope;
    }
    auto& g = j["problem"]["gain"];
    g["kind"] = problem.gain.kind;
    if (problem.gain.kind == "constant") {
        g["level"] = problem.gain.level;
    } else {
        g["weights"] = problem.gain.weights;
        g["strike"] = problem.gain.strike;
        g["cap"] = problem.gain.cap;
        g["smoothing"] = problem.gain.smoothing;
    }
    g["time_factor"]["a0"] = problem.gain.tf_a0;
    g["time_factor"]["a1"] = problem.gain.tf_a1;
    g["horizon"] = problem.gain.horizon;

    json l;
    l["alphas"] = ladder.alphas;
    l["ns"] = ladder.ns;
    l["radii"] = ladder.radii;
    l["penalty_epsilons"] = ladder.penalty_epsilons;
    l["epsilon_rule"] = ladder.epsilon_rule;
    l["epsilon_scale"] = ladder.epsilon_scale;
    if (!ladder.epsilon_values.empty()) l["epsilon_values"] = ladder.epsilon_values;
    l["base_radius"] = ladder.base_radius;
    l["grid_nodes"] = ladder.grid_nodes;
    l["time_steps"] = ladder.time_steps;
    l["target_spacing"] = ladder.target_spacing;
    l["contact_delta"] = ladder.contact_delta;
    l["mc_paths"] = ladder.mc_paths;
    l["mc_steps"] = ladder.mc_steps;
    l["bundle_paths"] = ladder.bundle_paths;
    l["study_paths"] = ladder.study_paths;
    l["study_steps"] = ladder.study_steps;
    if (!ladder.study_alphas.empty()) l["study_alphas"] = ladder.study_alphas;
    if (!ladder.study_ns.empty()) l["study_ns"] = ladder.study_ns;
    l["ou_paths"] = ladder.ou_paths;
    l["ou_steps"] = ladder.ou_steps;
    j["ladder"] = l;

    j["x0"] = x0;
    j["probes"] = probes;
    j["checks"] = checks;
    j["seed"] = seed;
    j["output_dir"] = output_dir;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    const auto& p = j.at("problem");
    c.problem.lambdas = p.at("covariance").at("lambdas").get<std::vector<double>>();
    const auto& op = p.at("operator");
    c.problem.operator_kind = op.at("kind").get<std::string>();
    if (c.problem.operator_kind == "diagonal")
        c.problem.operator_diag = op.at("entries").get<std::vector<double>>();
    else
        c.problem.operator_dense = op.at("matrix").get<std::vector<std::vector<double>>>();
    const auto& d = p.at("diffusion");
    c.problem.diffusion_kind = d.at("kind").get<std::string>();
    c.problem.gamma = d.at("gamma").get<std::vector<double>>();
    read(d, "amp", c.problem.gamma_amp);
    read(d, "slope", c.problem.gamma_slope);
    const auto& g = p.at("gain");
    c.problem.gain.kind = g.at("kind").get<std::string>();
    read(g, "level", c.problem.gain.level);
    read(g, "weights", c.problem.gain.weights);
    read(g, "strike", c.problem.gain.strike);
    read(g, "cap", c.problem.gain.cap);
    read(g, "smoothing", c.problem.gain.smoothing);
    if (g.contains("time_factor")) {
        read(g.at("time_factor"), "a0", c.problem.gain.tf_a0);
        read(g.at("time_factor"), "a1", c.problem.gain.tf_a1);
    }
    c.problem.gain.horizon = g.at("horizon").get<double>();

    if (j.contains("ladder")) {
        const auto& l = j.at("ladder");
        read(l, "alphas", c.ladder.alphas);
        read(l, "ns", c.ladder.ns);
        read(l, "radii", c.ladder.radii);
        read(l, "penalty_epsilons", c.ladder.penalty_epsilons);
        read(l, "epsilon_rule", c.ladder.epsilon_rule);
        read(l, "epsilon_scale", c.ladder.epsilon_scale);
        read(l, "epsilon_values", c.ladder.epsilon_values);
        read(l, "base_radius", c.ladder.base_radius);
        read(l, "grid_nodes", c.ladder.grid_nodes);
        read(l, "time_steps", c.ladder.time_steps);
        read(l, "target_spacing", c.ladder.target_spacing);
        read(l, "contact_delta", c.ladder.contact_delta);
        read(l, "mc_paths", c.ladder.mc_paths);
        read(l, "mc_steps", c.ladder.mc_steps);
        read(l, "bundle_paths", c.ladder.bundle_paths);
        read(l, "study_paths", c.ladder.study_paths);
        read(l, "study_steps", c.ladder.study_steps);
        read(l, "study_alphas", c.ladder.study_alphas);
        read(l, "study_ns", c.ladder.study_ns);
        read(l, "ou_paths", c.ladder.ou_paths);
        read(l, "ou_steps", c.ladder.ou_steps);
    }
    read(j, "x0", c.x0);
    read(j, "probes", c.probes);
    read(j, "checks", c.checks);
    read(j, "seed", c.seed);
    read(j, "output_dir", c.output_dir);
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("config: cannot open " + path);
    json j;
    f >> j;
    return from_json(j);
}

void ExperimentConfig::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw InputError("config: cannot open " + path + " for writing");
    f << to_json().dump(2) << '\n';
}

void ExperimentConfig::validate() const {
    const ProblemSpec built = problem.build(); // runs all constructor validation
    const int n_master = built.cov.master_dim();
    for (const double a : ladder.alphas)
        if (!(a > 0.0)) throw InputError("config: ladder.alphas must be positive");
    for (const int n : ladder.ns)
        if (n < 1 || n > n_master)
            throw InputError("config: ladder.ns outside [1, covariance truncation]");
    for (size_t i = 0; i < ladder.radii.size(); ++i) {
        if (!(ladder.radii[i] > 0.0)) throw InputError("config: ladder.radii must be positive");
        if (i > 0 && !(ladder.radii[i] > ladder.radii[i - 1]))
            throw InputError("config: ladder.radii must increase strictly");
    }
    for (size_t i = 1; i < ladder.penalty_epsilons.size(); ++i)
        if (!(ladder.penalty_epsilons[i] < ladder.penalty_epsilons[i - 1]))
            throw InputError("config: ladder.penalty_epsilons must decrease strictly");
    for (const double e : ladder.penalty_epsilons)
        if (!(e > 0.0)) throw InputError("config: ladder.penalty_epsilons must be positive");
    // schedule admissibility over the whole master truncation
    std::vector<double> eps;
    for (int n = 1; n <= n_master; ++n) eps.push_back(ladder.epsilon_for(n));
    try {
        validate_schedule(eps);
    } catch (const InputError& e) {
        throw InputError(std::string("config: ladder.epsilon_rule rejected: ") + e.what());
    }
    if (ladder.grid_nodes < 3) throw InputError("config: ladder.grid_nodes too small");
    if (ladder.time_steps < 1) throw InputError("config: ladder.time_steps too small");
    if (!(ladder.base_radius > 0.0)) throw InputError("config: ladder.base_radius must be positive");
    if (!(ladder.contact_delta > 0.0))
        throw InputError("config: ladder.contact_delta must be positive");
    if (x0.size() < 1) throw InputError("config: x0 must have at least one coordinate");
    for (const int n : ladder.ns)
        if (static_cast<int>(x0.size()) < n)
            throw InputError("config: x0 has fewer coordinates than ladder.ns requires");
    // reduction studies couple against the master-level rung
    if (!ladder.study_ns.empty() && static_cast<int>(x0.size()) < n_master)
        throw InputError("config: x0 must cover the master truncation for ladder.study_ns");
    for (const int n : ladder.study_ns)
        if (n < 1 || n > n_master)
            throw InputError("config: ladder.study_ns outside [1, covariance truncation]");
    const double rmin = ladder.radii.empty() ? ladder.base_radius : ladder.radii.front();
    for (const auto& probe : probes) {
        double norm2 = 0.0;
        for (const double v : probe) norm2 += v * v;
        if (std::sqrt(norm2) >= rmin)
            throw InputError("config: probes must lie inside the smallest ball");
    }
}

std::string ExperimentConfig::hash() const {
    // the destination directory does not identify the experiment
    nlohmann::json j = to_json();
    j.erase("output_dir");
    const std::string dump = j.dump();
    uint64_t h = 0xCBF29CE484222325ull;
    for (const char ch : dump) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001B3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

bool ExperimentConfig::enabled(const std::string& check) const {
    const auto it = checks.find(check);
    return it != checks.end() && it->second;
}

} // namespace stoplab
