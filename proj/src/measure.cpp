#include "stoplab/measure.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>

#include "stoplab/csv.hpp"
#include "stoplab/rng.hpp"

namespace stoplab {

CovarianceSpec::CovarianceSpec(std::vector<double> lambdas) : lambdas_(std::move(lambdas)) {
    if (lambdas_.empty()) throw InputError("covariance: eigenvalue list is empty");
    double prev = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < lambdas_.size(); ++i) {
        if (!(lambdas_[i] > 0.0))
            throw InputError("covariance: eigenvalue " + std::to_string(i + 1) +
                             " is not positive");
        if (lambdas_[i] > prev)
            throw InputError("covariance: eigenvalues must be non-increasing");
        prev = lambdas_[i];
    }
}

double CovarianceSpec::partial_trace(int n) const {
    if (n < 1 || n > master_dim())
        throw DimensionError("covariance: truncation level out of range");
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += lambdas_[static_cast<size_t>(i)];
    return s;
}

GaussHermite GaussHermite::standard(int point_count) {
    if (point_count < 1) throw InputError("quadrature: need at least one node");
    // Golub-Welsch on the Hermite Jacobi matrix, then rescale from weight
    // exp(-x^2) to the standard normal law.
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(point_count);
    Eigen::VectorXd sub(point_count > 1 ? point_count - 1 : 0);
    for (int k = 1; k < point_count; ++k) sub[k - 1] = std::sqrt(k / 2.0);
    Eigen::SelfAdjointEigenSolver<Mat> solver;
    solver.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    GaussHermite rule;
    rule.nodes.resize(static_cast<size_t>(point_count));
    rule.weights.resize(static_cast<size_t>(point_count));
    for (int i = 0; i < point_count; ++i) {
        rule.nodes[static_cast<size_t>(i)] = std::numbers::sqrt2 * solver.eigenvalues()[i];
        const double v0 = solver.eigenvectors()(0, i);
        rule.weights[static_cast<size_t>(i)] = v0 * v0; // already sums to 1
    }
    return rule;
}

QuadratureSpec QuadratureSpec::tensor(int nodes) {
    QuadratureSpec q;
    q.method = Method::TensorHermite;
    q.nodes_per_axis = nodes;
    return q;
}

QuadratureSpec QuadratureSpec::monte_carlo(long samples, uint64_t seed) {
    QuadratureSpec q;
    q.method = Method::MonteCarlo;
    q.samples = samples;
    q.seed = seed;
    return q;
}

GaussianMeasure::GaussianMeasure(CovarianceSpec cov, int n) : cov_(std::move(cov)), n_(n) {
    if (n_ < 1 || n_ > cov_.master_dim())
        throw DimensionError("measure: dimension must lie in [1, master truncation]");
}

GaussianMeasure build_measure(const CovarianceSpec& cov, int n) {
    return GaussianMeasure(cov, n);
}

double GaussianMeasure::density(const Vec& x) const {
    if (x.size() != n_) throw DimensionError("measure: point dimension mismatch");
    double logd = 0.0;
    for (int i = 0; i < n_; ++i) {
        const double li = cov_.lambda(i);
        logd += -0.5 * std::log(2.0 * std::numbers::pi * li) - x[i] * x[i] / (2.0 * li);
    }
    return std::exp(logd);
}

Vec GaussianMeasure::sample(uint64_t seed, uint64_t index) const {
    Vec x(n_);
    for (int i = 0; i < n_; ++i)
        x[i] = std::sqrt(cov_.lambda(i)) * normal_draw(seed, index, 0, static_cast<uint32_t>(i));
    return x;
}

IntegralEstimate GaussianMeasure::integrate(const ScalarField& g,
                                            const QuadratureSpec& quad) const {
    IntegralEstimate out;
    if (quad.method == QuadratureSpec::Method::TensorHermite) {
        if (n_ > 4)
            throw DimensionError("measure: tensor quadrature limited to dimension <= 4");
        const GaussHermite rule = GaussHermite::standard(quad.nodes_per_axis);
        const int m = quad.nodes_per_axis;
        std::vector<int> idx(static_cast<size_t>(n_), 0);
        Vec x(n_);
        double acc = 0.0;
        long count = 0;
        while (true) {
            double w = 1.0;
            for (int i = 0; i < n_; ++i) {
                const auto k = static_cast<size_t>(idx[static_cast<size_t>(i)]);
                x[i] = std::sqrt(cov_.lambda(i)) * rule.nodes[k];
                w *= rule.weights[k];
            }
            const double v = g(x);
            if (!std::isfinite(v))
                throw NumericError("quadrature: integrand non-finite at tensor node");
            acc += w * v;
            ++count;
            int axis = 0;
            while (axis < n_ && ++idx[static_cast<size_t>(axis)] == m) {
                idx[static_cast<size_t>(axis)] = 0;
                ++axis;
            }
            if (axis == n_) break;
        }
        out.value = acc;
        out.evaluations = count;
        return out;
    }
    // Monte Carlo path with the addressable sampler.
    double mean = 0.0, m2 = 0.0;
    for (long k = 0; k < quad.samples; ++k) {
        const double v = g(sample(quad.seed, static_cast<uint64_t>(k)));
        if (!std::isfinite(v))
            throw NumericError("quadrature: integrand non-finite at sample " + std::to_string(k));
        const double d = v - mean;
        mean += d / static_cast<double>(k + 1);
        m2 += d * (v - mean);
    }
    out.value = mean;
    out.stderr_ = quad.samples > 1
                      ? std::sqrt(m2 / static_cast<double>(quad.samples - 1) /
                                  static_cast<double>(quad.samples))
                      : 0.0;
    out.evaluations = quad.samples;
    return out;
}

double friedrichs_default_step(const Vec& x) { return 1e-5 * (1.0 + x.norm()); }

Vec friedrichs_gradient(const ScalarField& f, const Vec& x, double h) {
    if (!(h > 0.0)) throw InputError("gradient: step must be positive");
    Vec g(x.size());
    Vec xp = x, xm = x;
    for (int k = 0; k < x.size(); ++k) {
        xp[k] = x[k] + h;
        xm[k] = x[k] - h;
        const double fp = f(xp), fm = f(xm);
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("gradient: non-finite value along coordinate " +
                                   std::to_string(k + 1),
                               k);
        g[k] = (fp - fm) / (2.0 * h);
        xp[k] = x[k];
        xm[k] = x[k];
    }
    return g;
}

namespace {

NormReport power_norm(const ScalarField& magnitude_p, double p, const GaussianMeasure& mu,
                      const QuadratureSpec& quad, const std::string& name) {
    if (!(p >= 1.0)) throw InputError("norm: exponent must satisfy p >= 1");
    const IntegralEstimate est = mu.integrate(magnitude_p, quad);
    NormReport r;
    r.name = name;
    r.p = p;
    r.method = quad.method == QuadratureSpec::Method::TensorHermite ? "tensor-hermite"
                                                                    : "monte-carlo";
    r.value = std::pow(std::max(est.value, 0.0), 1.0 / p);
    // delta method: d(v^{1/p})/dv at the estimate
    if (est.stderr_ > 0.0 && est.value > 0.0)
        r.stderr_ = est.stderr_ * std::pow(est.value, 1.0 / p - 1.0) / p;
    r.evaluations = est.evaluations;
    return r;
}

} // namespace

NormReport lp_norm(const ScalarField& f, double p, const GaussianMeasure& mu,
                   const QuadratureSpec& quad) {
    return power_norm([&](const Vec& x) { return std::pow(std::abs(f(x)), p); }, p, mu, quad,
                      "lp");
}

NormReport lp_norm_vector(const VectorField& f, double p, const GaussianMeasure& mu,
                          const QuadratureSpec& quad) {
    return power_norm([&](const Vec& x) { return std::pow(f(x).norm(), p); }, p, mu, quad,
                      "lp-vector");
}

VpnReport vpn_norm(const ScalarField& f, const VectorField& grad_f, double p,
                   const GaussianMeasure& mu, const QuadratureSpec& quad) {
    if (!(p > 1.0)) throw InputError("vpn norm: requires p > 1 (conjugate exponent)");
    const double pc = p / (p - 1.0);
    VpnReport r;
    r.p = p;
    r.lp_part = lp_norm(f, 2.0 * p, mu, quad);
    r.grad_part = lp_norm_vector(grad_f, 2.0 * pc, mu, quad);
    r.total = r.lp_part.value + r.grad_part.value;
    return r;
}

std::string norm_csv_header() { return "name,p,method,value,stderr"; }

std::string norm_csv_row(const NormReport& r) {
    CsvRow row;
    row.add(r.name).add(r.p).add(r.method).add(r.value).add(r.stderr_);
    return row.str();
}

} // namespace stoplab
