#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stoplab/runner.hpp"
#include "stoplab/vi.hpp"

using namespace stoplab;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config(const std::string& outdir) {
    ExperimentConfig c;
    c.problem.lambdas = {1.0};
    c.problem.operator_diag = {-0.05};
    c.problem.gamma = {0.3};
    c.problem.gain.kind = "capped_put";
    c.problem.gain.weights = {1.0};
    c.problem.gain.strike = 1.0;
    c.problem.gain.cap = 1.0;
    c.problem.gain.smoothing = 0.1;
    c.problem.gain.horizon = 1.0;
    c.ladder.alphas = {16.0};
    c.ladder.ns = {1};
    c.ladder.radii = {2.0, 3.0, 4.0};
    c.ladder.penalty_epsilons = {1e-2, 1e-3, 1e-4};
    c.ladder.epsilon_scale = 0.5;
    c.ladder.base_radius = 3.0;
    c.ladder.grid_nodes = 121;
    c.ladder.time_steps = 50;
    c.ladder.target_spacing = 0.05;
    c.ladder.mc_paths = 2000;
    c.ladder.mc_steps = 100;
    c.ladder.bundle_paths = 800;
    c.ladder.study_paths = 500;
    c.ladder.study_steps = 64;
    c.x0 = {1.0};
    c.probes = {{0.5}, {1.0}, {1.5}};
    c.checks = {{"sweep.penalty", true},
                {"sweep.domain", true},
                {"ladder.yosida", true},
                {"trivial.suite", true},
                {"trace.diagnostics", true}};
    c.seed = 99;
    c.output_dir = outdir;
    return c;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), {});
}

} // namespace

TEST_CASE("config: serialization round-trips to an identical structure") {
    const ExperimentConfig c = small_config("rt_out");
    const auto j1 = c.to_json();
    const ExperimentConfig back = ExperimentConfig::from_json(j1);
    CHECK(back.to_json() == j1);

    c.save("config_roundtrip.json");
    const ExperimentConfig loaded = ExperimentConfig::load("config_roundtrip.json");
    CHECK(loaded.to_json() == j1);
    CHECK(loaded.hash() == c.hash());
    std::remove("config_roundtrip.json");
}

TEST_CASE("config: validation names the offending constraint") {
    ExperimentConfig c = small_config("val_out");
    CHECK_NOTHROW(c.validate());

    // a schedule whose sqrt(n)-scaled levels do not vanish is rejected
    ExperimentConfig bad = c;
    bad.problem.lambdas = {1.0, 0.5, 0.25};
    bad.ladder.epsilon_rule = "explicit";
    bad.ladder.epsilon_values = {1.0, 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(3.0)};
    try {
        bad.validate();
        FAIL("expected rejection");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("sqrt(n)*eps_n") != std::string::npos);
    }

    ExperimentConfig bad2 = c;
    bad2.ladder.radii = {3.0, 2.0};
    CHECK_THROWS_AS(bad2.validate(), InputError);

    ExperimentConfig bad3 = c;
    bad3.probes = {{2.5}};
    CHECK_THROWS_AS(bad3.validate(), InputError);

    ExperimentConfig bad4 = c;
    bad4.ladder.penalty_epsilons = {1e-4, 1e-3};
    CHECK_THROWS_AS(bad4.validate(), InputError);
}

TEST_CASE("runner: determinism of artifacts across reruns") {
    fs::remove_all("det_a");
    fs::remove_all("det_b");
    ExperimentConfig c = small_config("det_a");
    const RunManifest ma = run_experiment(c);
    RunOptions opts;
    opts.output_override = "det_b";
    const RunManifest mb = run_experiment(c, opts);
    CHECK(ma.config_hash == mb.config_hash);
    REQUIRE(ma.tasks.size() == mb.tasks.size());
    for (size_t t = 0; t < ma.tasks.size(); ++t) {
        REQUIRE(ma.tasks[t].artifacts.size() == mb.tasks[t].artifacts.size());
        for (size_t a = 0; a < ma.tasks[t].artifacts.size(); ++a)
            CHECK(slurp(ma.tasks[t].artifacts[a]) == slurp(mb.tasks[t].artifacts[a]));
    }
    // summaries byte-identical too
    CHECK(slurp("det_a/summary.csv") == slurp("det_b/summary.csv"));
    CHECK(slurp("det_a/summary.jsonl") == slurp("det_b/summary.jsonl"));
    CHECK(ma.all_pass());
    fs::remove_all("det_a");
    fs::remove_all("det_b");
}

TEST_CASE("runner: unknown check ids are rejected by name") {
    ExperimentConfig c = small_config("unknown_out");
    c.checks["sweep.typo"] = true;
    try {
        run_experiment(c);
        FAIL("expected rejection");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("sweep.typo") != std::string::npos);
    }
}

TEST_CASE("runner: worker pool reproduces the sequential results") {
    fs::remove_all("jobs_a");
    fs::remove_all("jobs_b");
    ExperimentConfig c = small_config("jobs_a");
    const RunManifest seq = run_experiment(c);
    RunOptions opts;
    opts.output_override = "jobs_b";
    opts.jobs = 3;
    const RunManifest par = run_experiment(c, opts);
    REQUIRE(seq.tasks.size() == par.tasks.size());
    for (size_t t = 0; t < seq.tasks.size(); ++t) {
        CHECK(seq.tasks[t].id == par.tasks[t].id);
        REQUIRE(seq.tasks[t].checks.size() == par.tasks[t].checks.size());
        for (size_t k = 0; k < seq.tasks[t].checks.size(); ++k)
            CHECK(seq.tasks[t].checks[k].measured == par.tasks[t].checks[k].measured);
    }
    CHECK(slurp("jobs_a/summary.csv") == slurp("jobs_b/summary.csv"));
    fs::remove_all("jobs_a");
    fs::remove_all("jobs_b");
}

TEST_CASE("runner: a failing task is recorded without aborting the rest") {
    fs::remove_all("err_out");
    ExperimentConfig c = small_config("err_out");
    // the drift-resolvent study needs a diagonal operator; a dense one makes
    // that task error while the others still run
    c.problem.operator_kind = "dense";
    c.problem.operator_dense = {{-0.05}};
    c.checks = {{"ladder.yosida", true}, {"trace.diagnostics", true}};
    const RunManifest m = run_experiment(c);
    REQUIRE(m.tasks.size() == 2);
    std::map<std::string, std::string> status;
    for (const auto& t : m.tasks) status[t.id] = t.status;
    CHECK(status["ladder.yosida"] == "error");
    CHECK(status["trace.diagnostics"] == "ok");
    CHECK_FALSE(m.all_pass());
    // the error surfaces as a failing row, not a silent skip
    CHECK(summary_csv(m).find("ladder.yosida") != std::string::npos);
    fs::remove_all("err_out");
}

TEST_CASE("runner: check filter and seed override") {
    fs::remove_all("filter_out");
    ExperimentConfig c = small_config("filter_out");
    RunOptions opts;
    opts.only_checks = {"trace.diagnostics"};
    const RunManifest m = run_experiment(c, opts);
    REQUIRE(m.tasks.size() == 1);
    CHECK(m.tasks[0].id == "trace.diagnostics");

    RunOptions seeded = opts;
    seeded.has_seed_override = true;
    seeded.seed_override = 4242;
    const RunManifest m2 = run_experiment(c, seeded);
    CHECK(m2.config_hash != m.config_hash); // the seed participates in the hash
    fs::remove_all("filter_out");
}

TEST_CASE("manifest: save, load, artifact integrity") {
    fs::remove_all("mani_out");
    ExperimentConfig c = small_config("mani_out");
    RunOptions opts;
    opts.only_checks = {"trace.diagnostics", "trivial.suite"};
    const RunManifest m = run_experiment(c, opts);
    const RunManifest loaded = RunManifest::load("mani_out/manifest.json");
    CHECK(loaded.config_hash == m.config_hash);
    CHECK(loaded.tasks.size() == m.tasks.size());
    CHECK_NOTHROW(verify_artifacts(loaded));

    // deleting a recorded artifact is an integrity error
    fs::remove("mani_out/trace_diagnostics.csv");
    CHECK_THROWS_AS(verify_artifacts(loaded), InputError);
    fs::remove_all("mani_out");
}

TEST_CASE("summary: per-check rows, failing rows, empty manifest") {
    RunManifest m;
    m.config_hash = "deadbeef";
    m.version = "0.1.0";
    CHECK(summary_csv(m) == "check_id,property,status,measured,bound,tolerance\n");
    CHECK(summary_jsonl(m).empty());

    TaskRecord t;
    t.id = "field.complementarity";
    t.status = "failed";
    CheckResult c;
    c.id = "field.complementarity";
    c.property = "obstacle complementarity residual within tolerance";
    c.pass = false;
    c.measured = 0.05;
    c.bound = 1e-6;
    t.checks.push_back(c);
    m.tasks.push_back(t);
    const std::string csv = summary_csv(m);
    CHECK(csv.find("field.complementarity") != std::string::npos);
    CHECK(csv.find("fail") != std::string::npos);
    CHECK_FALSE(m.all_pass());
}

TEST_CASE("corrupted field shows up as a failing complementarity row") {
    // build a tiny instance, corrupt one interior node and push the residual
    // through the same check bookkeeping the runner uses
    const CovarianceSpec cov({1.0});
    const DiffusionSpec diff = DiffusionSpec::constant_gamma((Vec(1) << 0.3).finished());
    const YosidaMatrix drift = yosida(OperatorSpec::diagonal({-0.05}), 16.0, 1);
    const GeneratorCoefficients coeffs(drift, diff, cov, 0.5);
    Vec w(1);
    w << 1.0;
    const GainSpec gain = GainSpec::capped_put(w, 1.0, 1.0, 0.1, TimeFactor{1, 0}, 1.0);
    const ForcingField f(gain, coeffs);
    DomainSpec dom(3.0, {121});
    ValueField field = solve_psor(coeffs, f, dom, 50);
    field.u_ref(25, dom.total_nodes() / 2) += 0.1;
    const ResidualStats stats = complementarity_residual(field, coeffs, f, dom);

    RunManifest m;
    TaskRecord t;
    t.id = "field.complementarity";
    CheckResult c;
    c.id = "field.complementarity";
    c.measured = stats.sup;
    c.bound = 1e-6;
    c.pass = stats.sup <= 1e-6;
    t.checks.push_back(c);
    t.status = c.pass ? "ok" : "failed";
    m.tasks.push_back(t);
    CHECK_FALSE(m.all_pass());
    CHECK(summary_csv(m).find("fail") != std::string::npos);
}

TEST_CASE("check catalog covers every runnable id with a property string") {
    for (const auto& [id, property] : check_catalog()) {
        CHECK_FALSE(id.empty());
        CHECK_FALSE(property.empty());
    }
    CHECK(check_catalog().count("field.agreement") == 1);
    CHECK(check_catalog().count("ou.invariant") == 1);
}
