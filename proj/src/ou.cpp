#include "stoplab/ou.hpp"

#include <cmath>

#include "stoplab/csv.hpp"
#include "stoplab/rng.hpp"

namespace stoplab {

CovarianceSpec InvariantMeasure::as_covariance() const {
    // eigenvalues may not be ordered when a_i decay faster than lambda_i;
    // the measure machinery needs the non-increasing surrogate, so sort.
    std::vector<double> sorted = gamma_diag;
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    return CovarianceSpec(sorted);
}

double InvariantMeasure::trace() const {
    double s = 0.0;
    for (const double g : gamma_diag) s += g;
    return s;
}

InvariantMeasure invariant_covariance(const OperatorSpec& op, const CovarianceSpec& cov) {
    const auto gap = op.dissipative_gap();
    if (!gap)
        throw InputError(
            "invariant measure: operator must be diagonal with strictly negative entries");
    InvariantMeasure inv;
    inv.spectral_gap = *gap;
    const int n = std::min(op.master_dim(), cov.master_dim());
    for (int i = 0; i < n; ++i)
        inv.gamma_diag.push_back(cov.lambda(i) / (2.0 * std::abs(op.diag()[static_cast<size_t>(i)])));
    return inv;
}

FiniteModel ou_model(const OperatorSpec& op, const CovarianceSpec& cov, int n, double horizon) {
    if (!op.dissipative_gap())
        throw InputError("ou model: operator must be diagonal with strictly negative entries");
    if (n < 1 || n > std::min(op.master_dim(), cov.master_dim()))
        throw DimensionError("ou model: dimension outside the master truncation");
    Vec weights(n);
    for (int i = 0; i < n; ++i) weights[i] = std::sqrt(cov.lambda(i));
    return FiniteModel{exact_drift(op, n),
                       DiffusionSpec::constant_gamma(Vec::Zero(n)),
                       cov,
                       std::move(weights),
                       0.0,
                       n,
                       std::numeric_limits<double>::infinity(),
                       horizon,
                       false};
}

StationarityReport empirical_invariant_check(const OperatorSpec& op, const CovarianceSpec& cov,
                                             int n, double horizon, long paths, int steps,
                                             uint64_t seed, const Vec& x0,
                                             bool start_stationary) {
    const InvariantMeasure inv = invariant_covariance(op, cov);
    const FiniteModel model = ou_model(op, cov, n, horizon);
    const double dt = horizon / steps;
    const double sq = std::sqrt(dt);

    const Vec start = projected_start(x0, n);
    // accumulate terminal first and second moments
    Vec mean = Vec::Zero(n);
    Mat second = Mat::Zero(n, n);
    Mat fourth_diag = Mat::Zero(n, n); // for the variance-of-variance stderr
    Vec x(n), dw(n);
    for (long p = 0; p < paths; ++p) {
        if (start_stationary) {
            for (int i = 0; i < n; ++i)
                x[i] = std::sqrt(inv.gamma_diag[static_cast<size_t>(i)]) *
                       normal_draw(seed ^ 0x5A5A5A5Aull, static_cast<uint64_t>(p), 0,
                                   static_cast<uint32_t>(i));
        } else {
            x = start;
        }
        for (int k = 0; k < steps; ++k) {
            for (int i = 0; i < n; ++i)
                dw[i] = sq * normal_draw(seed, static_cast<uint64_t>(p),
                                         static_cast<uint32_t>(k), static_cast<uint32_t>(i) + 1);
            x = euler_step(model, x, dt, 0.0, dw);
        }
        mean += x;
        second += x * x.transpose();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                fourth_diag(i, j) += x[i] * x[i] * x[j] * x[j];
    }
    mean /= static_cast<double>(paths);
    second /= static_cast<double>(paths);
    fourth_diag /= static_cast<double>(paths);
    const Mat covar = second - mean * mean.transpose();

    StationarityReport rep;
    rep.horizon = horizon;
    rep.paths = paths;
    for (int i = 0; i < n; ++i) {
        StationarityRow row;
        row.coordinate = i + 1;
        row.gamma_theory = inv.gamma_diag[static_cast<size_t>(i)];
        row.gamma_empirical = covar(i, i);
        const double var_of_sq = fourth_diag(i, i) - second(i, i) * second(i, i);
        row.stderr_ = std::sqrt(std::max(var_of_sq, 0.0) / static_cast<double>(paths));
        rep.rows.push_back(row);
        if (std::abs(row.gamma_empirical - row.gamma_theory) > 3.0 * row.stderr_)
            rep.within_three_stderr = false;
    }
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            rep.max_offdiag = std::max(rep.max_offdiag, std::abs(covar(i, j)));
            const double var_prod = fourth_diag(i, j) - second(i, j) * second(i, j);
            rep.offdiag_stderr = std::max(
                rep.offdiag_stderr, std::sqrt(std::max(var_prod, 0.0) / static_cast<double>(paths)));
        }
    }
    if (n > 1 && rep.max_offdiag > 3.0 * rep.offdiag_stderr) rep.within_three_stderr = false;
    return rep;
}

std::string StationarityReport::csv() const {
    std::string out = "coordinate,gamma_theory,gamma_empirical,stderr,horizon,paths\n";
    for (const auto& r : rows) {
        CsvRow row;
        row.add(r.coordinate).add(r.gamma_theory).add(r.gamma_empirical).add(r.stderr_).add(
            horizon).add(paths);
        out += row.str();
        out += '\n';
    }
    return out;
}

double symmetric_form(const DifferentiableField& u, const DifferentiableField& w,
                      const InvariantMeasure& inv, const CovarianceSpec& q,
                      const QuadratureSpec& quad) {
    const int n = static_cast<int>(inv.gamma_diag.size());
    // the invariant law is the product Gaussian with the gamma eigenvalues;
    // build a measure over the same coordinates without reordering
    std::vector<double> lam = inv.gamma_diag;
    const bool ordered = std::is_sorted(lam.begin(), lam.end(), std::greater<double>());
    if (!ordered)
        throw InputError("symmetric form: require non-increasing invariant eigenvalues; "
                         "reorder the basis");
    GaussianMeasure nu{CovarianceSpec(lam), n};
    const auto integrand = [&](const Vec& x) {
        const Vec du = u.grad(x);
        const Vec dw = w.grad(x);
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += q.lambda(i) * du[i] * dw[i];
        return 0.5 * s;
    };
    return nu.integrate(integrand, quad).value;
}

DualPairingReport dual_pairing_check(const GainSpec& gain, const OperatorSpec& op,
                                     const CovarianceSpec& cov, int n, double t,
                                     const DifferentiableField& w, const QuadratureSpec& quad) {
    const InvariantMeasure inv = invariant_covariance(op, cov);
    std::vector<double> lam(inv.gamma_diag.begin(), inv.gamma_diag.begin() + n);
    if (!std::is_sorted(lam.begin(), lam.end(), std::greater<double>()))
        throw InputError("dual pairing: require non-increasing invariant eigenvalues");
    GaussianMeasure nu{CovarianceSpec(lam), n};

    const GainSpec gn = gain.project(n);
    const FiniteModel model = ou_model(op, cov, n, gain.horizon());
    const GeneratorCoefficients coeffs(model.drift, model.diffusion, cov, model.channel_weights);
    const ForcingField f(gn, coeffs);

    DualPairingReport rep;
    rep.direct = nu.integrate([&](const Vec& x) { return f(t, x) * w.value(x); }, quad).value;

    const double dtheta_part =
        nu.integrate([&](const Vec& x) { return gn.time_slope(t, x) * w.value(x); }, quad).value;
    DifferentiableField theta_t{
        [&](const Vec& x) { return gn.value(t, x); },
        [&](const Vec& x) { return gn.gradient(t, x); },
        {}};
    const double form = symmetric_form(theta_t, w, inv, cov, quad);
    rep.via_form = dtheta_part - form;
    rep.difference = std::abs(rep.direct - rep.via_form);
    return rep;
}

} // namespace stoplab
