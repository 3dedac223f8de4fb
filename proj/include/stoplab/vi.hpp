#pragma once

#include <memory>
#include <string>
#include <vector>

#include "stoplab/operators.hpp"

namespace stoplab {

/// Box grid over [-R, R]^n with the open ball of radius R as the active
/// domain. Nodes on or outside the sphere carry the zero Dirichlet value.
class DomainSpec {
public:
    DomainSpec(double radius, std::vector<int> nodes_per_axis);

    int dim() const { return static_cast<int>(nodes_.size()); }
    double radius() const { return radius_; }
    int axis_nodes(int axis) const { return nodes_[static_cast<size_t>(axis)]; }
    double spacing(int axis) const { return spacing_[static_cast<size_t>(axis)]; }
    long total_nodes() const { return total_; }

    double axis_coord(int axis, int index) const {
        return -radius_ + spacing_[static_cast<size_t>(axis)] * index;
    }
    Vec node_coords(long flat) const;
    bool in_ball(long flat) const;
    long flat_index(const std::vector<int>& multi) const;
    std::vector<int> multi_index(long flat) const;

private:
    double radius_;
    std::vector<int> nodes_;
    std::vector<double> spacing_;
    long total_;
};

struct PenaltyParams {
    double epsilon = 1e-4;
    double theta = 1.0; // time-implicitness weight
    int time_steps = 200;
    double newton_tol = 1e-10;
    int max_iter = 50;

    /// Range checks used by configuration ingestion (theta >= 1/2 recommended).
    void validate() const;
};

enum class ForcingMode {
    /// f assembled with the solver's own difference operators, so the gap
    /// variable and the value variable solve algebraically identical systems.
    DiscreteCompatible,
    /// f taken from the closed-form expression.
    Analytic,
};

struct SolverOptions {
    ForcingMode forcing = ForcingMode::DiscreteCompatible;
    double psor_omega = 1.5;
    int psor_max_iter = 40000;
    double psor_tol = 1e-10;
};

struct FieldMeta {
    int n = 1;
    double radius = 0.0;
    int time_steps = 0;
    double t0 = 0.0;
    double horizon = 1.0;
    double alpha = 0.0;
    double epsilon_n = 0.0;
    std::string method; // "penalized" or "psor"
    double penalty_epsilon = 0.0;
    double theta = 1.0;
    ForcingMode forcing = ForcingMode::DiscreteCompatible;
};

/// Space-time solution of the obstacle problem: the gap u >= 0 and the
/// reconstructed value U = u + Theta on the same grid.
class ValueField {
public:
    ValueField(DomainSpec dom, FieldMeta meta);

    const DomainSpec& domain() const { return dom_; }
    const FieldMeta& meta() const { return meta_; }
    int time_levels() const { return meta_.time_steps + 1; }
    double time_at(int k) const;
    double dt() const { return (meta_.horizon - meta_.t0) / meta_.time_steps; }

    double u(int k, long node) const { return u_[offset(k, node)]; }
    double value(int k, long node) const { return big_u_[offset(k, node)]; }
    double& u_ref(int k, long node) { return u_[offset(k, node)]; }
    double& value_ref(int k, long node) { return big_u_[offset(k, node)]; }

    /// Multilinear in space, linear in time. Outside the ball the gap is zero.
    double interp_u(double t, const Vec& x) const;
    double interp_value(double t, const Vec& x) const;

    void save_binary(const std::string& path) const;
    static ValueField load_binary(const std::string& path);
    std::string probe_csv(const std::vector<Vec>& probes, const GainSpec& gain) const;

private:
    size_t offset(int k, long node) const {
        return static_cast<size_t>(k) * static_cast<size_t>(dom_.total_nodes()) +
               static_cast<size_t>(node);
    }
    // allocation-free multilinear interpolation, hot in rule evaluation
    double interp_slice(const std::vector<double>& data, int k, const Vec& x) const;

    DomainSpec dom_;
    FieldMeta meta_;
    std::vector<double> u_, big_u_;
};

ValueField solve_penalized(const GeneratorCoefficients& coeffs, const ForcingField& f,
                           const DomainSpec& dom, const PenaltyParams& params,
                           const SolverOptions& opts = {});

ValueField solve_psor(const GeneratorCoefficients& coeffs, const ForcingField& f,
                      const DomainSpec& dom, int time_steps, const SolverOptions& opts = {});

struct ResidualStats {
    double sup = 0.0;    // sup over interior nodes and steps of |max{.,.}|
    double l2_mu = 0.0;  // L^2 in time of the L^2(mu_n) slice norms
    long worst_node = -1;
    int worst_step = -1;
};

/// Nodewise max{du/dt + Lu + f, -u} recomputed with the field's own scheme.
ResidualStats complementarity_residual(const ValueField& field,
                                       const GeneratorCoefficients& coeffs,
                                       const ForcingField& f, const DomainSpec& dom);

struct PenaltySweepRow {
    double epsilon;
    double negative_part_l2; // ||[-u_eps]^+|| in L^2(0,T;L^2(mu_n))
    double dist_to_psor_sup;
};

std::vector<PenaltySweepRow> penalty_sweep(const GeneratorCoefficients& coeffs,
                                           const ForcingField& f, const DomainSpec& dom,
                                           PenaltyParams base,
                                           const std::vector<double>& epsilons,
                                           const SolverOptions& opts = {});

struct DomainSweepResult {
    std::vector<double> radii;
    std::vector<std::vector<double>> probe_values; // [radius][probe]
    std::vector<std::vector<double>> diffs;        // successive |U_{R+} - U_R| per probe
    std::string csv() const;
};

/// Solves the same instance on growing balls with a shared target spacing and
/// reports value stabilization at the probes.
DomainSweepResult domain_sweep(const GeneratorCoefficients& coeffs, const ForcingField& f,
                               const std::vector<double>& radii, const std::vector<Vec>& probes,
                               double target_spacing, PenaltyParams params,
                               const SolverOptions& opts = {});

struct NormAudit {
    double p = 2.0;
    double u_norm = 0.0;     // L^p(0,T;L^p(mu_n))
    double u_bound = 0.0;    // 2 theta_bar T^{1/p}
    double grad_norm = 0.0;  // same exponent, finite differences
    double dudt_l2 = 0.0;    // L^2(0,T;L^2(mu_n))
    bool u_within_bound = false;
};

NormAudit norm_audit(const ValueField& field, const GainSpec& gain, const GaussianMeasure& mu,
                     double p);

/// Max over interior node pairs of |U(t,x+h e_i) - U(t,x)| / h_i at fixed t,
/// then the max over time. The spatial Lipschitz witness.
double max_spatial_slope(const ValueField& field);

/// Invariant summary used by tests and checks.
struct FieldInvariants {
    double min_u = 0.0;
    double max_value = 0.0;     // max of U
    double min_value = 0.0;
    double terminal_error = 0.0; // sup |u(T,.)|
    double boundary_error = 0.0; // sup |u| over non-ball nodes
    double obstacle_gap = 0.0;   // min of U - Theta
};
FieldInvariants field_invariants(const ValueField& field, const GainSpec& gain);

} // namespace stoplab
