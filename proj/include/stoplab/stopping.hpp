#pragma once

#include <memory>

#include "stoplab/sde.hpp"
#include "stoplab/vi.hpp"

namespace stoplab {

/// First-hitting rule for the contact region {U - Theta <= delta}. Off-grid
/// queries interpolate the gap field; paths are stopped at the first grid time
/// whose gap falls below delta and never after leaving the ball.
class StoppingRule {
public:
    StoppingRule(std::shared_ptr<const ValueField> field, double delta);

    double delta() const { return delta_; }
    const ValueField& field() const { return *field_; }

    bool should_stop(double t, const Vec& x) const { return field_->interp_u(t, x) <= delta_; }

    /// Grid mask of the contact region, true where the gap is within delta.
    bool mask(int k, long node) const;
    /// Fraction of in-ball nodes in contact at time level k.
    double contact_area(int k) const;
    /// 1D only: infimum contact coordinate per time level (NaN when empty).
    std::vector<double> free_boundary() const;
    /// 1D only: supremum of the contact set per time level, the exercise edge
    /// for put-shaped gains (NaN when empty).
    std::vector<double> contact_upper_edge() const;
    /// Both curves as CSV rows (t, lower, upper).
    std::string boundary_csv() const;

    void save_binary(const std::string& path) const;

private:
    std::shared_ptr<const ValueField> field_;
    double delta_;
    std::vector<uint8_t> mask_;
};

StoppingRule contact_region(std::shared_ptr<const ValueField> field, const GainSpec& gain,
                            double delta);

/// Policy perturbations used to bracket the optimal rule from below.
struct RuleVariant {
    enum class Kind { Optimal, ForcedImmediate, ForcedTerminal, Shifted, Randomized, Lagged };
    Kind kind = Kind::Optimal;
    double shift_delta = 0.0;  // Shifted: stop once the gap falls below this larger threshold
    double stop_rate = 0.0;    // Randomized: per-unit-time hazard of stopping
    int lag_steps = 0;         // Lagged: wait this many grid steps after first contact
    uint64_t seed = 7;         // Randomized draws

    static RuleVariant optimal() { return {}; }
    static RuleVariant forced_immediate();
    static RuleVariant forced_terminal();
    static RuleVariant shifted(double delta);
    static RuleVariant randomized(double rate, uint64_t seed);
    static RuleVariant lagged(int steps);
};

struct StopStats {
    double value_mean = 0.0;
    double value_stderr = 0.0;
    std::vector<long> stop_histogram; // counts per time level
    double exit_fraction = 0.0;       // stopped by leaving the ball
    long paths = 0;
    double mean_stop_time = 0.0;
    std::string csv() const;
};

/// Evaluates a rule on a retained bundle. The bundle must come from the same
/// ladder rung as the field behind the rule.
StopStats stop_on_paths(const PathBundle& paths, const StoppingRule& rule, const GainSpec& gain,
                        const RuleVariant& variant = RuleVariant::optimal());

/// Streaming evaluation: simulates in blocks keyed by absolute path index, so
/// results match the bundle route while holding memory flat. Every variant is
/// scored on the same simulated noise.
std::vector<StopStats> evaluate_rules_mc(const FiniteModel& model, const Vec& x0, double t0,
                                         int steps, long n_paths, uint64_t seed,
                                         const StoppingRule& rule, const GainSpec& gain,
                                         const std::vector<RuleVariant>& variants,
                                         long block = 20000);

StopStats evaluate_rule_mc(const FiniteModel& model, const Vec& x0, double t0, int steps,
                           long n_paths, uint64_t seed, const StoppingRule& rule,
                           const GainSpec& gain,
                           const RuleVariant& variant = RuleVariant::optimal(),
                           long block = 20000);

struct MartingaleRow {
    double sigma;
    double capped_mean;    // E[ U(sigma ^ tau*, X) ]
    double capped_stderr;
    double replaced_mean;  // E[ U(sigma, X) ], supermartingale direction
    double replaced_stderr;
    double reference;      // U(t0, x0)
};

std::vector<MartingaleRow> martingale_check(const PathBundle& paths, const ValueField& field,
                                            const StoppingRule& rule,
                                            const std::vector<double>& sigma_times);

/// Backward dynamic programming on a dense 1D grid: exact convolution of the
/// piecewise-linear value interpolant against the one-step Gaussian kernel.
/// Arrested at the ball of radius R: states beyond it collect the gain.
struct LatticeResult {
    double value = 0.0;
    std::vector<double> grid;
    std::vector<double> v0;       // value at t0 on the grid
    std::vector<double> boundary; // infimum contact point per time level
};

LatticeResult lattice_oracle_1d(double drift_coef, const std::function<double(double)>& sigma_total,
                                const GainSpec& gain, double t0, double x0, double radius,
                                int space_nodes, int time_steps);

struct LsmcResult {
    double value = 0.0;
    double stderr_ = 0.0;
    int basis_size = 0;
};

/// Regression Monte Carlo on a retained bundle; the first half of the paths
/// fits the continuation surfaces, the second half prices the policy.
LsmcResult lsmc_oracle(const PathBundle& paths, const GainSpec& gain, int basis_degree,
                       double arrest_radius = std::numeric_limits<double>::infinity());

} // namespace stoplab
