#pragma once

#include "stoplab/sde.hpp"

namespace stoplab {

/// Stationary covariance of the dissipative diagonal dynamics: the i-th
/// eigenvalue is lambda_i / (2 |a_i|).
struct InvariantMeasure {
    std::vector<double> gamma_diag;
    double spectral_gap = 0.0;

    CovarianceSpec as_covariance() const;
    double trace() const;
};

InvariantMeasure invariant_covariance(const OperatorSpec& op, const CovarianceSpec& cov);

/// Additive-noise rung realizing dX = A X dt + Q^{1/2} dB: no W^0 loading and
/// per-channel weights sqrt(lambda_i) on the auxiliary channels.
FiniteModel ou_model(const OperatorSpec& op, const CovarianceSpec& cov, int n, double horizon);

struct StationarityRow {
    int coordinate;
    double gamma_theory;
    double gamma_empirical;
    double stderr_;
};

struct StationarityReport {
    std::vector<StationarityRow> rows;
    double max_offdiag = 0.0;        // largest |empirical cross-covariance|
    double offdiag_stderr = 0.0;
    double horizon = 0.0;
    long paths = 0;
    bool within_three_stderr = true;
    std::string csv() const;
};

/// Simulates past several relaxation times and compares the empirical
/// covariance of X_T with the invariant one. With start_stationary the initial
/// points are drawn from the invariant law and checkpoints are compared too.
StationarityReport empirical_invariant_check(const OperatorSpec& op, const CovarianceSpec& cov,
                                             int n, double horizon, long paths, int steps,
                                             uint64_t seed, const Vec& x0,
                                             bool start_stationary = false);

/// Symmetric form a(u,w) = 1/2 int <Q Du, Dw> d nu under the invariant law.
double symmetric_form(const DifferentiableField& u, const DifferentiableField& w,
                      const InvariantMeasure& inv, const CovarianceSpec& q,
                      const QuadratureSpec& quad);

struct DualPairingReport {
    double direct = 0.0;    // (f(t), w) under nu
    double via_form = 0.0;  // (dTheta/dt, w) - a(Theta(t), w)
    double difference = 0.0;
};

/// Green-formula identity between the forcing pairing and the symmetric form.
DualPairingReport dual_pairing_check(const GainSpec& gain, const OperatorSpec& op,
                                     const CovarianceSpec& cov, int n, double t,
                                     const DifferentiableField& w, const QuadratureSpec& quad);

} // namespace stoplab
