#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stoplab/common.hpp"

namespace stoplab {

using ScalarField = std::function<double(const Vec&)>;
using VectorField = std::function<Vec(const Vec&)>;

/// Eigenvalues of the trace-class covariance operator on the master truncation.
/// The sequence must be positive and non-increasing.
class CovarianceSpec {
public:
    explicit CovarianceSpec(std::vector<double> lambdas);

    int master_dim() const { return static_cast<int>(lambdas_.size()); }
    double lambda(int i) const { return lambdas_.at(static_cast<size_t>(i)); }
    const std::vector<double>& lambdas() const { return lambdas_; }

    /// Exact partial trace over the first n eigenvalues.
    double partial_trace(int n) const;

private:
    std::vector<double> lambdas_;
};

/// Gauss-Hermite rule normalized against the standard normal law:
/// sum_i w_i f(x_i) approximates E[f(Z)], Z ~ N(0,1), with sum w_i = 1.
struct GaussHermite {
    std::vector<double> nodes;
    std::vector<double> weights;
    static GaussHermite standard(int point_count);
};

struct QuadratureSpec {
    enum class Method { TensorHermite, MonteCarlo };
    Method method = Method::TensorHermite;
    int nodes_per_axis = 64;
    long samples = 200000;
    uint64_t seed = 2026;

    static QuadratureSpec tensor(int nodes = 64);
    static QuadratureSpec monte_carlo(long samples, uint64_t seed);
};

struct IntegralEstimate {
    double value = 0.0;
    double stderr_ = 0.0; // zero for deterministic quadrature
    long evaluations = 0;
};

/// Product Gaussian measure on the first n coordinates of the master basis.
class GaussianMeasure {
public:
    GaussianMeasure(CovarianceSpec cov, int n);

    int dim() const { return n_; }
    const CovarianceSpec& cov() const { return cov_; }
    double lambda(int i) const { return cov_.lambda(i); }

    double density(const Vec& x) const;

    /// Independent sample, addressable by index for reproducibility.
    Vec sample(uint64_t seed, uint64_t index) const;

    /// Integral of g against the measure. Tensor quadrature requires n <= 4.
    IntegralEstimate integrate(const ScalarField& g, const QuadratureSpec& quad) const;

private:
    CovarianceSpec cov_;
    int n_;
};

/// build_measure: validated constructor entry point.
GaussianMeasure build_measure(const CovarianceSpec& cov, int n);

/// Central finite differences along the basis directions.
Vec friedrichs_gradient(const ScalarField& f, const Vec& x, double h);
double friedrichs_default_step(const Vec& x);

struct NormReport {
    std::string name;
    double p = 2.0;
    std::string method;
    double value = 0.0;
    double stderr_ = 0.0;
    long evaluations = 0;
};

struct VpnReport {
    double p = 2.0;
    NormReport lp_part;   // L^{2p} norm of the field
    NormReport grad_part; // L^{2p'} norm of the gradient
    double total = 0.0;
};

/// L^p norm of f under the measure.
NormReport lp_norm(const ScalarField& f, double p, const GaussianMeasure& mu,
                   const QuadratureSpec& quad);

/// L^p norm of the euclidean length of a vector field.
NormReport lp_norm_vector(const VectorField& f, double p, const GaussianMeasure& mu,
                          const QuadratureSpec& quad);

/// Mixed-exponent norm |||f||| = ||f||_{L^{2p}} + ||Df||_{L^{2p'}} with 1/p + 1/p' = 1.
VpnReport vpn_norm(const ScalarField& f, const VectorField& grad_f, double p,
                   const GaussianMeasure& mu, const QuadratureSpec& quad);

std::string norm_csv_header();
std::string norm_csv_row(const NormReport& r);

} // namespace stoplab
