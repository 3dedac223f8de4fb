#pragma once

#include <cstdint>
#include <vector>

#include "stoplab/operators.hpp"

namespace stoplab {

/// The problem data: drift operator, covariance, diffusion loading, gain, horizon.
struct ProblemSpec {
    OperatorSpec op;
    CovarianceSpec cov;
    DiffusionSpec diffusion;
    GainSpec gain;
    double horizon = 1.0;
};

enum class EpsilonRule { Inverse, InverseLog };

/// Regularization level for the n-th rung. The scale multiplies the base rule;
/// sqrt(n) * eps_n must still vanish, which both rules guarantee.
double epsilon_schedule(int n, EpsilonRule rule, double scale = 1.0);

/// Rejects user-supplied schedules whose sqrt(n) * eps_n fails to decrease.
void validate_schedule(const std::vector<double>& eps_by_level);

/// eps_n / lambda_n per level: the size of the regularization against the
/// inverse covariance. Reported, not enforced; no rate is prescribed.
std::vector<double> schedule_resolvent_norms(const std::vector<double>& eps_by_level,
                                             const CovarianceSpec& cov);

/// One rung of the approximation ladder.
struct FiniteModel {
    YosidaMatrix drift;
    DiffusionSpec diffusion;
    CovarianceSpec cov;
    Vec channel_weights; // auxiliary channel loadings, eps_n on every channel by default
    double epsilon_n = 0.0;
    int n = 1;
    double alpha = 0.0;
    double horizon = 1.0;
    bool implicit_drift = false;

    Vec sigma(const Vec& x) const { return diffusion.sigma(x, cov); }
};

FiniteModel make_model(const ProblemSpec& problem, double alpha, int n, double epsilon_n,
                       bool implicit_drift = false);

/// First n coordinates of a start point; rejects vectors that are too short.
Vec projected_start(const Vec& x0, int n);

/// Sample paths with retained increments so ladder rungs can be coupled on the
/// same noise. Layout is path-major: states[(p*(steps+1) + k)*n + i].
struct PathBundle {
    std::vector<double> times;
    int n = 0;
    long paths = 0;
    int steps = 0;
    double t0 = 0.0;
    Vec x0;
    uint64_t seed = 0;
    double alpha = 0.0; // provenance for rule evaluation
    std::vector<double> states;
    std::vector<double> dw0;  // paths x steps
    std::vector<double> dwch; // paths x steps x n
    bool has_increments = false;

    Eigen::Map<const Vec> state(long path, int step) const {
        return Eigen::Map<const Vec>(
            states.data() + (static_cast<size_t>(path) * (static_cast<size_t>(steps) + 1) +
                             static_cast<size_t>(step)) *
                                static_cast<size_t>(n),
            n);
    }
    double increment_w0(long path, int step) const {
        return dw0[static_cast<size_t>(path) * static_cast<size_t>(steps) +
                   static_cast<size_t>(step)];
    }
    double increment_channel(long path, int step, int channel) const {
        return dwch[(static_cast<size_t>(path) * static_cast<size_t>(steps) +
                     static_cast<size_t>(step)) *
                        static_cast<size_t>(n) +
                    static_cast<size_t>(channel)];
    }
};

PathBundle simulate_paths(const FiniteModel& model, const Vec& x0, double t0, int steps,
                          long n_paths, uint64_t seed, bool retain_increments = true);

/// Advance one explicit (or drift-implicit) Euler step. Noise channels are
/// addressed as channel 0 = W^0 and channels 1..n = the regularization noise.
Vec euler_step(const FiniteModel& model, const Vec& x, double dt, double dw0, const Vec& dwch);

/// Allocation-free variant for hot loops; scratch must not alias x or out.
void euler_step_into(const FiniteModel& model, const Vec& x, double dt, double dw0,
                     const Vec& dwch, Vec& out, Vec& scratch);

struct ConvergenceReport {
    std::string study;
    std::vector<double> parameter;
    std::vector<double> error_mean;   // E[sup_t ||difference||^2]
    std::vector<double> error_stderr;
    long paths = 0;
    int steps = 0;
    uint64_t seed = 0;
    std::string csv() const;
};

/// Coupled comparison against the exact-drift reference on identical noise.
/// Requires a diagonal operator so the limit rung is simulable.
ConvergenceReport yosida_convergence_study(const ProblemSpec& problem,
                                           const std::vector<double>& alphas, int n,
                                           double epsilon_n, const Vec& x0, long paths,
                                           int steps, uint64_t seed);

/// Coupled comparison of reduced rungs against the master-level rung driven by
/// the same W^0 and shared channels.
ConvergenceReport galerkin_convergence_study(const ProblemSpec& problem,
                                             const std::vector<int>& ns, double alpha,
                                             EpsilonRule rule, double eps_scale, const Vec& x0,
                                             long paths, int steps, uint64_t seed);

/// E[sup_t ||X^x - X^y||] / ||x - y|| over coupled paths.
double fit_lipschitz_constant(const FiniteModel& model, const Vec& x, const Vec& y,
                              long paths, int steps, uint64_t seed);

/// Strong-order probe: couples each step count against a step-halved reference
/// built from summed increments; returns observed orders between levels.
std::vector<double> strong_order_sequence(const FiniteModel& model, const Vec& x0,
                                          int coarse_steps, int levels, long paths,
                                          uint64_t seed);

/// E[sup_t ||X||^p] estimate.
double sup_moment(const FiniteModel& model, const Vec& x0, double p, long paths, int steps,
                  uint64_t seed);

void save_paths_binary(const PathBundle& bundle, const std::string& path);
PathBundle load_paths_binary(const std::string& path);

} // namespace stoplab
