// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Runs the shipped configurations through the same execution
// path the command line uses.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "stoplab/runner.hpp"

using namespace stoplab;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const std::string& id, bool pass, const std::string& detail) {
    std::printf("[%s] %s  %s\n", pass ? "PASS" : "FAIL", id.c_str(), detail.c_str());
    if (!pass) ++g_failures;
}

struct ManifestView {
    RunManifest manifest;
    std::map<std::string, CheckResult> checks;
    std::map<std::string, double> seconds;

    explicit ManifestView(RunManifest m) : manifest(std::move(m)) {
        for (const auto& t : manifest.tasks) {
            seconds[t.id] = t.seconds;
            for (const auto& c : t.checks) checks[c.id] = c;
        }
    }
    bool pass(const std::string& id) const {
        const auto it = checks.find(id);
        return it != checks.end() && it->second.pass;
    }
    std::string describe(const std::string& id) const {
        const auto it = checks.find(id);
        if (it == checks.end()) return id + " missing";
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s measured=%.6g bound=%.6g", id.c_str(),
                      it->second.measured, it->second.bound);
        return std::string(buf);
    }
    double time_of(std::initializer_list<const char*> ids) const {
        double total = 0.0;
        for (const char* id : ids) {
            const auto it = seconds.find(id);
            if (it != seconds.end()) total += it->second;
        }
        return total;
    }
};

ManifestView run_config(const std::string& name, const std::string& outdir) {
    const std::string path = std::string(STOPLAB_CONFIG_DIR) + "/" + name;
    const auto cfg = ExperimentConfig::load(path);
    RunOptions opts;
    opts.output_override = outdir;
    return ManifestView(run_experiment(cfg, opts));
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return "<missing:" + path + ">";
    return std::string(std::istreambuf_iterator<char>(f), {});
}

char timing_line(double seconds, double budget, std::string& detail) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), " runtime=%.1fs budget=%.0fs", seconds, budget);
    detail += buf;
    return ' ';
}

} // namespace

int main() {
    fs::remove_all("acceptance_out");

    // canonical one-dimensional capped put
    const ManifestView canonical = run_config("canonical_put_1d.json", "acceptance_out/canonical");

    {
        const double secs =
            canonical.time_of({"field.solve", "field.agreement", "field.complementarity"});
        std::string detail = canonical.describe("field.agreement") + "; " +
                             canonical.describe("field.complementarity");
        timing_line(secs, 60.0, detail);
        report("C1 obstacle-problem correctness",
               canonical.pass("field.agreement") && canonical.pass("field.complementarity") &&
                   secs <= 60.0,
               detail);
    }
    {
        const double secs = canonical.time_of({"rule.optimality"});
        std::string detail =
            canonical.describe("rule.optimality") + "; " + canonical.describe("rule.suboptimal");
        timing_line(secs, 120.0, detail);
        report("C2 optimal-rule verification",
               canonical.pass("rule.optimality") && canonical.pass("rule.suboptimal") &&
                   secs <= 120.0,
               detail);
    }
    report("C3 dynamic programming identity", canonical.pass("rule.martingale"),
           canonical.describe("rule.martingale"));
    report("C4 value bounds and spatial slope",
           canonical.pass("field.bounds") && canonical.pass("field.lipschitz"),
           canonical.describe("field.bounds") + "; " + canonical.describe("field.lipschitz"));
    report("C7 penalty convergence", canonical.pass("sweep.penalty"),
           canonical.describe("sweep.penalty"));
    report("C8 domain stabilization", canonical.pass("sweep.domain"),
           canonical.describe("sweep.domain"));
    {
        const double secs = canonical.time_of({"trivial.suite"});
        std::string detail = canonical.describe("trivial.suite");
        timing_line(secs, 10.0, detail);
        report("C10 trivial-instance suite", canonical.pass("trivial.suite") && secs <= 10.0,
               detail);
    }

    // uniform norm sweep across radii, penalty levels, dimensions, drift rungs
    const ManifestView sweep = run_config("uniform_norms_sweep.json", "acceptance_out/sweep");
    report("C5 uniform-norm audit",
           sweep.pass("sweep.uniform_bound") && sweep.pass("sweep.norm_trend"),
           sweep.describe("sweep.uniform_bound") + "; " + sweep.describe("sweep.norm_trend"));

    // ladder convergence studies
    const ManifestView ladder = run_config("ladder_convergence.json", "acceptance_out/ladder");
    {
        const double sy = ladder.time_of({"ladder.yosida"});
        const double sg = ladder.time_of({"ladder.galerkin"});
        std::string detail =
            ladder.describe("ladder.yosida") + "; " + ladder.describe("ladder.galerkin");
        char buf[96];
        std::snprintf(buf, sizeof(buf), " runtimes=%.1fs/%.1fs budget=90s each", sy, sg);
        detail += buf;
        report("C6 ladder convergence trends",
               ladder.pass("ladder.yosida") && ladder.pass("ladder.galerkin") && sy <= 90.0 &&
                   sg <= 90.0,
               detail);
    }

    // stationary covariance of the dissipative diagonal case
    const ManifestView ou = run_config("ou_invariant.json", "acceptance_out/ou");
    report("C9 invariant measure and symmetric form",
           ou.pass("ou.invariant") && ou.pass("ou.symmetric"),
           ou.describe("ou.invariant") + "; " + ou.describe("ou.symmetric"));

    // determinism: identical seeds reproduce identical bytes
    {
        const ManifestView a = run_config("smoke_small.json", "acceptance_out/det_a");
        const ManifestView b = run_config("smoke_small.json", "acceptance_out/det_b");
        bool identical = a.manifest.tasks.size() == b.manifest.tasks.size();
        std::string mismatch;
        for (size_t t = 0; identical && t < a.manifest.tasks.size(); ++t) {
            const auto& ta = a.manifest.tasks[t];
            const auto& tb = b.manifest.tasks[t];
            identical = ta.artifacts.size() == tb.artifacts.size();
            for (size_t i = 0; identical && i < ta.artifacts.size(); ++i) {
                if (slurp(ta.artifacts[i]) != slurp(tb.artifacts[i])) {
                    identical = false;
                    mismatch = ta.artifacts[i];
                }
            }
        }
        identical = identical && slurp("acceptance_out/det_a/summary.csv") ==
                                     slurp("acceptance_out/det_b/summary.csv");
        report("C11 determinism", identical,
               identical ? "artifact bytes identical across reruns"
                         : "first differing artifact: " + mismatch);
    }

    std::printf("%d criterion(s) failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
