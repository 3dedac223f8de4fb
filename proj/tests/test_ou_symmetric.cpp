#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stoplab/ou.hpp"
#include "stoplab/rng.hpp"
#include "stoplab/vi.hpp"

using namespace stoplab;

namespace {

DifferentiableField poly2(double a, double b, double c, double d, double e) {
    // a + b x1 + c x2 + d x1^2 + e x1 x2
    return DifferentiableField{
        [=](const Vec& x) {
            const double x2 = x.size() > 1 ? x[1] : 0.0;
            return a + b * x[0] + c * x2 + d * x[0] * x[0] + e * x[0] * x2;
        },
        [=](const Vec& x) {
            Vec g = Vec::Zero(x.size());
            const double x2 = x.size() > 1 ? x[1] : 0.0;
            g[0] = b + 2.0 * d * x[0] + e * x2;
            if (x.size() > 1) g[1] = c + e * x[0];
            return g;
        },
        [=](const Vec& x) {
            Mat h = Mat::Zero(x.size(), x.size());
            h(0, 0) = 2.0 * d;
            if (x.size() > 1) {
                h(0, 1) = e;
                h(1, 0) = e;
            }
            return h;
        }};
}

} // namespace

TEST_CASE("invariant covariance: closed form and the dissipativity guard") {
    CHECK(invariant_covariance(OperatorSpec::diagonal({-1.0}), CovarianceSpec({2.0}))
              .gamma_diag[0] == doctest::Approx(1.0));
    CHECK(invariant_covariance(OperatorSpec::diagonal({-2.0}), CovarianceSpec({1.0}))
              .gamma_diag[0] == doctest::Approx(0.25));
    CHECK_THROWS_AS(invariant_covariance(OperatorSpec::diagonal({1.0}), CovarianceSpec({1.0})),
                    InputError);
    CHECK_THROWS_AS(invariant_covariance(OperatorSpec::diagonal({-1.0, 0.0}),
                                         CovarianceSpec({1.0, 0.5})),
                    InputError);
    const auto inv =
        invariant_covariance(OperatorSpec::diagonal({-1.0, -2.0}), CovarianceSpec({2.0, 1.0}));
    CHECK(inv.spectral_gap == doctest::Approx(1.0));
    CHECK(inv.trace() == doctest::Approx(1.25));
}

TEST_CASE("stationarity: empirical covariance matches the closed form") {
    const OperatorSpec op = OperatorSpec::diagonal({-1.0, -2.0});
    const CovarianceSpec cov({2.0, 1.0});
    Vec x0(2);
    x0 << 0.0, 0.0;
    const auto rep = empirical_invariant_check(op, cov, 2, 8.0, 20000, 2048, 4711, x0);
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].gamma_theory == doctest::Approx(1.0));
    CHECK(rep.rows[1].gamma_theory == doctest::Approx(0.25));
    for (const auto& row : rep.rows)
        CHECK(std::abs(row.gamma_empirical - row.gamma_theory) <= 3.0 * row.stderr_);
    CHECK(rep.max_offdiag <= 3.0 * rep.offdiag_stderr);
    CHECK(rep.within_three_stderr);
}

TEST_CASE("stationarity: a stationary start stays stationary") {
    const OperatorSpec op = OperatorSpec::diagonal({-1.0, -2.0});
    const CovarianceSpec cov({2.0, 1.0});
    Vec x0(2);
    x0 << 0.0, 0.0;
    // short horizon from the invariant law still reproduces the covariance
    const auto rep = empirical_invariant_check(op, cov, 2, 1.0, 20000, 512, 555, x0, true);
    for (const auto& row : rep.rows)
        CHECK(std::abs(row.gamma_empirical - row.gamma_theory) <= 3.0 * row.stderr_);
}

TEST_CASE("symmetric form: closed-form value, symmetry, nonnegativity") {
    const OperatorSpec op = OperatorSpec::diagonal({-1.0, -2.0});
    const CovarianceSpec cov({2.0, 1.0});
    const auto inv = invariant_covariance(op, cov);
    const QuadratureSpec quad = QuadratureSpec::tensor(64);

    // identity field in one variable: a(x, x) = q/2
    const OperatorSpec op1 = OperatorSpec::diagonal({-1.0});
    const CovarianceSpec cov1({0.8});
    const auto inv1 = invariant_covariance(op1, cov1);
    const DifferentiableField id = poly2(0.0, 1.0, 0.0, 0.0, 0.0);
    CHECK(symmetric_form(id, id, inv1, cov1, quad) == doctest::Approx(0.4).epsilon(1e-12));

    double worst_asym = 0.0, worst_neg = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        auto rnd = [&](int k) { return normal_draw(2468, trial, 0, k); };
        const DifferentiableField u = poly2(rnd(0), rnd(1), rnd(2), 0.5 * rnd(3), 0.5 * rnd(4));
        const DifferentiableField w =
            poly2(rnd(5), rnd(6), rnd(7), 0.5 * rnd(8), 0.5 * rnd(9));
        const double auw = symmetric_form(u, w, inv, cov, quad);
        const double awu = symmetric_form(w, u, inv, cov, quad);
        const double auu = symmetric_form(u, u, inv, cov, quad);
        worst_asym = std::max(worst_asym, std::abs(auw - awu));
        worst_neg = std::max(worst_neg, -auu);
    }
    CHECK(worst_asym <= 1e-9);
    CHECK(worst_neg <= 1e-9);
}

TEST_CASE("dual pairing: forcing equals the time slope minus the symmetric form") {
    const OperatorSpec op = OperatorSpec::diagonal({-1.0, -2.0});
    const CovarianceSpec cov({2.0, 1.0});

    // constant gain: both sides reduce to the time slope pairing, exactly
    const GainSpec cgain = GainSpec::constant(0.8, TimeFactor{1.0, 0.5}, 1.0);
    const DifferentiableField w = poly2(0.3, -0.6, 0.4, 0.2, -0.1);
    const auto flat = dual_pairing_check(cgain, op, cov, 2, 0.4, w, QuadratureSpec::tensor(160));
    CHECK(flat.difference <= 1e-12);

    // capped put: the curvature has derivative kinks along ridge lines, so the
    // direct side converges first order in the node count; 512 nodes resolve
    // the identity to a few parts in ten thousand
    Vec wts(2);
    wts << 1.0, 0.5;
    const GainSpec put = GainSpec::capped_put(wts, 1.0, 1.0, 0.2, TimeFactor{0.9, 0.2}, 1.0);
    const auto curved = dual_pairing_check(put, op, cov, 2, 0.4, w, QuadratureSpec::tensor(512));
    CHECK(curved.difference <= 5e-4);
}

TEST_CASE("green formula: generator pairing equals minus the symmetric form exactly") {
    // polynomial fields make the quadrature exact, so the identity holds to
    // machine precision
    const OperatorSpec op = OperatorSpec::diagonal({-1.0, -2.0});
    const CovarianceSpec cov({2.0, 1.0});
    const auto inv = invariant_covariance(op, cov);
    const GaussianMeasure nu(inv.as_covariance(), 2);
    const QuadratureSpec quad = QuadratureSpec::tensor(48);
    const Mat a_diag = exact_drift(op, 2).matrix;

    for (int trial = 0; trial < 20; ++trial) {
        auto rnd = [&](int k) { return normal_draw(1122, trial, 0, k); };
        const DifferentiableField g = poly2(rnd(0), rnd(1), rnd(2), 0.5 * rnd(3), 0.5 * rnd(4));
        const DifferentiableField w2 =
            poly2(rnd(5), rnd(6), rnd(7), 0.5 * rnd(8), 0.5 * rnd(9));
        const double direct =
            nu.integrate(
                  [&](const Vec& x) {
                      const Mat h = g.hess(x);
                      double lg = 0.0;
                      for (int i = 0; i < 2; ++i) lg += 0.5 * cov.lambda(i) * h(i, i);
                      lg += (a_diag * x).dot(g.grad(x));
                      return lg * w2.value(x);
                  },
                  quad)
                .value;
        const double form = symmetric_form(g, w2, inv, cov, quad);
        CHECK(std::abs(direct + form) <= 1e-9);
    }
}

TEST_CASE("uniqueness surrogate: both solvers land on the same field in L2(nu)") {
    // additive-noise rung of the dissipative dynamics through the grid solvers
    const OperatorSpec op = OperatorSpec::diagonal({-1.0});
    const CovarianceSpec cov({1.0});
    const FiniteModel model = ou_model(op, cov, 1, 1.0);
    const GeneratorCoefficients coeffs(model.drift, model.diffusion, cov,
                                       model.channel_weights);
    Vec w(1);
    w << 1.0;
    const GainSpec gain = GainSpec::capped_put(w, 0.5, 0.5, 0.1, TimeFactor{1, 0}, 1.0);
    const ForcingField f(gain, coeffs);
    DomainSpec dom(4.0, {201});
    PenaltyParams pen;
    pen.epsilon = 1e-6;
    pen.time_steps = 100;
    const ValueField a = solve_penalized(coeffs, f, dom, pen);
    const ValueField b = solve_psor(coeffs, f, dom, 100);

    const auto inv = invariant_covariance(op, cov);
    const GaussianMeasure nu(inv.as_covariance(), 1);
    double acc = 0.0;
    double cell = dom.spacing(0);
    for (int k = 0; k <= 100; ++k) {
        double slice = 0.0;
        for (long fid = 0; fid < dom.total_nodes(); ++fid) {
            const double d = a.u(k, fid) - b.u(k, fid);
            slice += cell * nu.density(dom.node_coords(fid)) * d * d;
        }
        acc = std::max(acc, slice);
    }
    CHECK(std::sqrt(acc) <= 1e-3);
}

TEST_CASE("ou model guards") {
    CHECK_THROWS_AS(ou_model(OperatorSpec::diagonal({1.0}), CovarianceSpec({1.0}), 1, 1.0),
                    InputError);
    CHECK_THROWS_AS(ou_model(OperatorSpec::diagonal({-1.0}), CovarianceSpec({1.0}), 2, 1.0),
                    DimensionError);
    const FiniteModel m = ou_model(OperatorSpec::diagonal({-1.0, -2.0}),
                                   CovarianceSpec({2.0, 1.0}), 2, 4.0);
    CHECK(m.channel_weights[0] == doctest::Approx(std::sqrt(2.0)));
    CHECK(m.channel_weights[1] == doctest::Approx(1.0));
    CHECK(m.sigma((Vec(2) << 1.0, 1.0).finished()).norm() == 0.0);
}
