#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stoplab/stopping.hpp"
#include "stoplab/vi.hpp"

using namespace stoplab;

namespace {

Vec vec1(double x) {
    Vec v(1);
    v[0] = x;
    return v;
}

struct PutInstance {
    CovarianceSpec cov{std::vector<double>{1.0}};
    DiffusionSpec diff = DiffusionSpec::constant_gamma(vec1(0.3));
    YosidaMatrix drift = yosida(OperatorSpec::diagonal({-0.05}), 16.0, 1);
    double eps_n = 0.5;
    GeneratorCoefficients coeffs{drift, diff, cov, eps_n};
    GainSpec gain = GainSpec::capped_put(vec1(1.0), 1.0, 1.0, 0.1, TimeFactor{1, 0}, 1.0);
    ForcingField force{gain, coeffs};
};

} // namespace

TEST_CASE("domain: indexing, ball membership, spacing") {
    DomainSpec dom(2.0, {5, 9});
    CHECK(dom.total_nodes() == 45);
    CHECK(dom.spacing(0) == doctest::Approx(1.0));
    CHECK(dom.spacing(1) == doctest::Approx(0.5));
    CHECK(dom.node_coords(0)[0] == doctest::Approx(-2.0));
    const long center = dom.flat_index({2, 4});
    CHECK(dom.node_coords(center).norm() == doctest::Approx(0.0));
    CHECK(dom.in_ball(center));
    CHECK_FALSE(dom.in_ball(0)); // the corner lies outside the ball
    CHECK(dom.multi_index(center) == std::vector<int>{2, 4});
    CHECK_THROWS_AS(DomainSpec(0.0, {5}), InputError);
    CHECK_THROWS_AS(DomainSpec(1.0, {5, 5, 5, 5}), DimensionError);
}

TEST_CASE("penalty params: range validation") {
    PenaltyParams p;
    CHECK_NOTHROW(p.validate());
    p.theta = 0.25;
    CHECK_THROWS_AS(p.validate(), InputError);
    p.theta = 1.0;
    p.epsilon = 0.0;
    CHECK_THROWS_AS(p.validate(), InputError);
}

TEST_CASE("constant gain: zero gap, value equal to the constant everywhere") {
    PutInstance inst;
    const GainSpec gain = GainSpec::constant(1.0, TimeFactor{1, 0}, 1.0);
    const ForcingField f(gain, inst.coeffs);
    DomainSpec dom(3.0, {121});
    PenaltyParams pen;
    pen.time_steps = 40;
    for (const bool psor : {false, true}) {
        const ValueField field = psor ? solve_psor(inst.coeffs, f, dom, 40)
                                      : solve_penalized(inst.coeffs, f, dom, pen);
        const FieldInvariants inv = field_invariants(field, gain);
        CHECK(std::abs(inv.min_u) <= 1e-12);
        CHECK(inv.max_value == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(inv.min_value == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(inv.terminal_error == 0.0);
        CHECK(inv.boundary_error == 0.0);
    }
}

TEST_CASE("decreasing-in-time gain: gap identically zero") {
    PutInstance inst;
    const GainSpec gain = GainSpec::constant(1.0, TimeFactor{1.0, -1.0}, 1.0);
    const ForcingField f(gain, inst.coeffs);
    DomainSpec dom(3.0, {121});
    PenaltyParams pen;
    pen.time_steps = 40;

    // the relaxation solution is exactly zero; the penalized one dips below by
    // no more than epsilon times the forcing magnitude
    const ValueField lcp = solve_psor(inst.coeffs, f, dom, 40);
    double worst_lcp = 0.0, lo = 0.0, hi = 0.0;
    const ValueField pena = solve_penalized(inst.coeffs, f, dom, pen);
    for (int k = 0; k <= 40; ++k)
        for (long fid = 0; fid < dom.total_nodes(); ++fid) {
            worst_lcp = std::max(worst_lcp, std::abs(lcp.u(k, fid)));
            lo = std::min(lo, pena.u(k, fid));
            hi = std::max(hi, pena.u(k, fid));
        }
    CHECK(worst_lcp <= 1e-10);
    CHECK(hi <= 1e-10);
    CHECK(lo >= -1.1 * pen.epsilon);
}

TEST_CASE("capped put: solver pair agrees and matches the lattice oracle") {
    PutInstance inst;
    DomainSpec dom(5.0, {401});
    PenaltyParams pen;
    pen.epsilon = 1e-5;
    pen.time_steps = 200;
    const ValueField penalized = solve_penalized(inst.coeffs, inst.force, dom, pen);
    const ValueField psor = solve_psor(inst.coeffs, inst.force, dom, 200);

    double dist = 0.0;
    for (int k = 0; k <= 200; ++k)
        for (long fid = 0; fid < dom.total_nodes(); ++fid)
            dist = std::max(dist, std::abs(penalized.u(k, fid) - psor.u(k, fid)));
    CHECK(dist <= 1e-3);

    const double a = inst.drift.matrix(0, 0);
    const auto sig = [&](double x) {
        const double s = inst.coeffs.sigma(vec1(x))[0];
        return std::sqrt(s * s + inst.eps_n * inst.eps_n);
    };
    for (const double probe : {0.5, 1.0, 1.5}) {
        const LatticeResult lat =
            lattice_oracle_1d(a, sig, inst.gain, 0.0, probe, 5.0, 2001, 400);
        CHECK(std::abs(psor.interp_value(0.0, vec1(probe)) - lat.value) <= 5e-3);
        CHECK(std::abs(penalized.interp_value(0.0, vec1(probe)) - lat.value) <= 5e-3);
    }
}

TEST_CASE("complementarity residual: solver self-check and corruption detection") {
    PutInstance inst;
    DomainSpec dom(5.0, {201});
    SolverOptions opts;
    const ValueField psor = solve_psor(inst.coeffs, inst.force, dom, 100, opts);
    const ResidualStats clean = complementarity_residual(psor, inst.coeffs, inst.force, dom);
    CHECK(clean.sup <= 10.0 * opts.psor_tol);

    // u == 0 with nonpositive forcing has residual exactly zero
    const GainSpec tgain = GainSpec::constant(1.0, TimeFactor{1.0, -1.0}, 1.0);
    const ForcingField tf(tgain, inst.coeffs);
    const ValueField zero_field = solve_psor(inst.coeffs, tf, dom, 100, opts);
    const ResidualStats z = complementarity_residual(zero_field, inst.coeffs, tf, dom);
    CHECK(z.sup <= 1e-12);

    ValueField corrupted = psor;
    long inner = -1;
    for (long fid = 0; fid < dom.total_nodes(); ++fid)
        if (dom.in_ball(fid) && std::abs(dom.node_coords(fid)[0] - 1.0) < 1e-9) inner = fid;
    REQUIRE(inner >= 0);
    corrupted.u_ref(50, inner) += 0.1;
    const ResidualStats bad = complementarity_residual(corrupted, inst.coeffs, inst.force, dom);
    CHECK(bad.sup >= 0.05);
    // localized at the corrupted node, up to its stencil neighbors
    CHECK(std::abs(dom.node_coords(bad.worst_node)[0] - 1.0) <= 2.0 * dom.spacing(0));
    CHECK(std::abs(bad.worst_step - 50) <= 1);
}

TEST_CASE("penalized solver: iteration cap raises a solver error") {
    PutInstance inst;
    DomainSpec dom(5.0, {201});
    PenaltyParams pen;
    pen.epsilon = 1e-6;
    pen.time_steps = 20;
    pen.max_iter = 1;
    pen.newton_tol = 1e-14;
    CHECK_THROWS_AS(solve_penalized(inst.coeffs, inst.force, dom, pen), SolverError);
}

TEST_CASE("psor solver: iteration cap raises a solver error") {
    PutInstance inst;
    DomainSpec dom(5.0, {201});
    SolverOptions opts;
    opts.psor_max_iter = 1;
    opts.psor_tol = 1e-14;
    CHECK_THROWS_AS(solve_psor(inst.coeffs, inst.force, dom, 20, opts), SolverError);
}

TEST_CASE("explicit scheme guard: stability error when the step is too long") {
    PutInstance inst;
    DomainSpec dom(5.0, {201});
    PenaltyParams pen;
    pen.theta = 0.0;
    pen.time_steps = 20; // far beyond the diffusive limit at this spacing
    CHECK_THROWS_AS(solve_penalized(inst.coeffs, inst.force, dom, pen), SolverError);
}

TEST_CASE("value envelope and terminal data on the put instance") {
    PutInstance inst;
    DomainSpec dom(5.0, {401});
    const ValueField psor = solve_psor(inst.coeffs, inst.force, dom, 200);
    const FieldInvariants inv = field_invariants(psor, inst.gain);
    CHECK(inv.min_u >= 0.0);
    CHECK(inv.min_value >= -1e-12);
    CHECK(inv.max_value <= inst.gain.theta_bar() + 1e-12);
    CHECK(inv.obstacle_gap >= -1e-12);
    CHECK(inv.terminal_error == 0.0);
    CHECK(inv.boundary_error == 0.0);

    // the contact set is nonempty just below the horizon
    auto field = std::make_shared<ValueField>(psor);
    const StoppingRule rule = contact_region(field, inst.gain, 1e-7);
    CHECK(rule.contact_area(199) > 0.0);
}

TEST_CASE("penalty sweep: monotone convergence toward the relaxation solution") {
    PutInstance inst;
    DomainSpec dom(5.0, {201});
    PenaltyParams base;
    base.time_steps = 100;
    const std::vector<double> eps{1e-2, 1e-3, 1e-4};
    const auto rows = penalty_sweep(inst.coeffs, inst.force, dom, base, eps);
    REQUIRE(rows.size() == 3);
    for (size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].negative_part_l2 < rows[i - 1].negative_part_l2);
        CHECK(rows[i].dist_to_psor_sup < rows[i - 1].dist_to_psor_sup);
    }
    CHECK_THROWS_AS(penalty_sweep(inst.coeffs, inst.force, dom, base, {1e-4, 1e-3, 1e-2}),
                    InputError);

    // zero forcing: every level is identically zero
    const GainSpec cgain = GainSpec::constant(1.0, TimeFactor{1, 0}, 1.0);
    const ForcingField cf(cgain, inst.coeffs);
    const auto zrows = penalty_sweep(inst.coeffs, cf, dom, base, eps);
    for (const auto& r : zrows) {
        CHECK(r.negative_part_l2 <= 1e-12);
        CHECK(r.dist_to_psor_sup <= 1e-12);
    }
}

TEST_CASE("domain sweep: growth in the radius stabilizes the values") {
    PutInstance inst;
    PenaltyParams pen;
    pen.epsilon = 1e-5;
    pen.time_steps = 100;
    const std::vector<Vec> probes{vec1(0.5), vec1(1.0), vec1(1.5)};
    const auto sweep =
        domain_sweep(inst.coeffs, inst.force, {3.0, 5.0, 8.0}, probes, 0.025, pen);
    REQUIRE(sweep.probe_values.size() == 3);
    for (size_t p = 0; p < probes.size(); ++p) {
        CHECK(sweep.probe_values[1][p] >= sweep.probe_values[0][p] - 1e-9);
        CHECK(sweep.probe_values[2][p] >= sweep.probe_values[1][p] - 1e-9);
        CHECK(sweep.diffs[1][p] <= 0.25 * sweep.diffs[0][p] + 1e-6);
    }
    CHECK_THROWS_AS(
        domain_sweep(inst.coeffs, inst.force, {5.0, 3.0}, probes, 0.05, pen), InputError);
    CHECK_THROWS_AS(
        domain_sweep(inst.coeffs, inst.force, {3.0, 5.0}, {vec1(4.0)}, 0.05, pen), InputError);
}

TEST_CASE("motionless dynamics: value is the running maximum of the gain") {
    // zero drift, zero loading, zero regularization: nothing moves
    const CovarianceSpec cov({1.0});
    const DiffusionSpec diff = DiffusionSpec::constant_gamma(vec1(0.0));
    const YosidaMatrix drift = exact_drift(OperatorSpec::diagonal({0.0}), 1);
    const GeneratorCoefficients coeffs(drift, diff, cov, 0.0);
    const GainSpec gain = GainSpec::constant(1.0, TimeFactor{0.5, 1.0}, 1.0); // rising in time
    const ForcingField f(gain, coeffs);
    DomainSpec dom(2.0, {41});
    const ValueField field = solve_psor(coeffs, f, dom, 50);
    // sup over later times of the gain: the terminal factor dominates
    const double expected = gain.value(1.0, vec1(0.5));
    CHECK(field.interp_value(0.0, vec1(0.5)) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("norm audit: zero field, put bounds, exponent guard") {
    PutInstance inst;
    DomainSpec dom(5.0, {201});
    const GaussianMeasure mu(inst.cov, 1);
    const GainSpec cgain = GainSpec::constant(1.0, TimeFactor{1, 0}, 1.0);
    const ForcingField cf(cgain, inst.coeffs);
    const ValueField zero_field = solve_psor(inst.coeffs, cf, dom, 50);
    const NormAudit z = norm_audit(zero_field, cgain, mu, 2.0);
    CHECK(z.u_norm <= 1e-12);
    CHECK(z.grad_norm <= 1e-12);
    CHECK(z.dudt_l2 <= 1e-12);
    CHECK(z.u_within_bound);

    const ValueField put = solve_psor(inst.coeffs, inst.force, dom, 100);
    for (const double p : {2.0, 4.0}) {
        const NormAudit audit = norm_audit(put, inst.gain, mu, p);
        CHECK(audit.u_within_bound);
        CHECK(audit.u_norm <= 2.0 * inst.gain.theta_bar());
        CHECK(audit.grad_norm > 0.0);
    }
}

TEST_CASE("grid refinement: probe values converge at first order or better") {
    PutInstance inst;
    const Vec probe = vec1(1.0);
    double coarse = 0.0, mid = 0.0, fine = 0.0;
    for (const auto& [nodes, steps, out] :
         {std::tuple<int, int, double*>{101, 50, &coarse}, {201, 100, &mid},
          {401, 200, &fine}}) {
        DomainSpec dom(5.0, std::vector<int>{nodes});
        const ValueField f = solve_psor(inst.coeffs, inst.force, dom, steps);
        *out = f.interp_value(0.0, probe);
    }
    const double e1 = std::abs(coarse - fine);
    const double e2 = std::abs(mid - fine);
    CHECK(std::log2(e1 / e2) >= 0.9);
}

TEST_CASE("analytic forcing mode tracks the discrete-compatible solve") {
    PutInstance inst;
    DomainSpec dom(5.0, {201});
    PenaltyParams pen;
    pen.epsilon = 1e-5;
    pen.time_steps = 100;
    SolverOptions analytic;
    analytic.forcing = ForcingMode::Analytic;
    auto mode_distance = [&](int nodes, int steps) {
        DomainSpec grid(5.0, std::vector<int>{nodes});
        PenaltyParams p = pen;
        p.time_steps = steps;
        const ValueField a = solve_penalized(inst.coeffs, inst.force, grid, p, analytic);
        const ValueField d = solve_penalized(inst.coeffs, inst.force, grid, p);
        double dist = 0.0;
        for (int k = 0; k <= steps; ++k)
            for (long fid = 0; fid < grid.total_nodes(); ++fid)
                dist = std::max(dist, std::abs(a.u(k, fid) - d.u(k, fid)));
        return dist;
    };
    // the two assemblies differ by the truncation error of the gain under the
    // stencil, which shrinks under refinement
    const double coarse = mode_distance(201, 100);
    const double fine = mode_distance(401, 200);
    CHECK(coarse > 0.0);
    CHECK(coarse <= 5e-2);
    CHECK(fine <= coarse / 1.5);

    // the envelope still holds up to that truncation scale in analytic mode
    const ValueField a = solve_penalized(inst.coeffs, inst.force, dom, pen, analytic);
    const FieldInvariants inv = field_invariants(a, inst.gain);
    CHECK(inv.max_value <= inst.gain.theta_bar() + 2e-2);
    CHECK(inv.min_u >= -(1.1 * pen.epsilon + 2e-2));
}

TEST_CASE("half-implicit scheme weight agrees with the implicit march") {
    PutInstance inst;
    DomainSpec dom(5.0, {201});
    PenaltyParams implicit_params;
    implicit_params.epsilon = 1e-5;
    implicit_params.time_steps = 100;
    PenaltyParams cn = implicit_params;
    cn.theta = 0.5;
    CHECK_NOTHROW(cn.validate());
    const ValueField a = solve_penalized(inst.coeffs, inst.force, dom, implicit_params);
    const ValueField b = solve_penalized(inst.coeffs, inst.force, dom, cn);
    double dist = 0.0;
    for (long fid = 0; fid < dom.total_nodes(); ++fid)
        dist = std::max(dist, std::abs(a.u(0, fid) - b.u(0, fid)));
    CHECK(dist <= 5e-3); // first-order versus second-order time error
    const ResidualStats res = complementarity_residual(b, inst.coeffs, inst.force, dom);
    CHECK(res.sup <= 1e-3); // residual audited with the field's own theta
}

TEST_CASE("three-dimensional solve: envelope and method agreement on a coarse ball") {
    const CovarianceSpec cov({1.0, 0.5, 0.25});
    const DiffusionSpec diff =
        DiffusionSpec::constant_gamma((Vec(3) << 0.3, 0.2, 0.1).finished());
    const YosidaMatrix drift = yosida(OperatorSpec::diagonal({-0.05, -0.1, -0.2}), 16.0, 3);
    const GeneratorCoefficients coeffs(drift, diff, cov, 0.3);
    Vec w(3);
    w << 1.0, 0.5, 0.0;
    const GainSpec gain = GainSpec::capped_put(w, 1.0, 1.0, 0.2, TimeFactor{1, 0}, 1.0);
    const ForcingField f(gain, coeffs);
    DomainSpec dom(2.5, {17, 17, 17});
    PenaltyParams pen;
    pen.epsilon = 1e-5;
    pen.time_steps = 25;
    const ValueField penalized = solve_penalized(coeffs, f, dom, pen);
    const ValueField psor = solve_psor(coeffs, f, dom, 25);
    const FieldInvariants inv = field_invariants(psor, gain);
    CHECK(inv.min_value >= -1e-10);
    CHECK(inv.max_value <= gain.theta_bar() + 1e-10);
    CHECK(inv.terminal_error == 0.0);
    double dist = 0.0;
    for (int k = 0; k <= 25; ++k)
        for (long fid = 0; fid < dom.total_nodes(); ++fid)
            dist = std::max(dist, std::abs(penalized.u(k, fid) - psor.u(k, fid)));
    CHECK(dist <= 1e-3);
}

TEST_CASE("two-dimensional put: envelope, method agreement") {
    const CovarianceSpec cov({1.0, 0.5});
    const DiffusionSpec diff = DiffusionSpec::constant_gamma((Vec(2) << 0.5, 0.0).finished());
    const YosidaMatrix drift = yosida(OperatorSpec::diagonal({-0.05, -0.1}), 16.0, 2);
    const GeneratorCoefficients coeffs(drift, diff, cov, 0.25);
    Vec w = Vec::Zero(2);
    w[0] = 1.0;
    const GainSpec gain = GainSpec::capped_put(w, 1.0, 1.0, 0.1, TimeFactor{1, 0}, 1.0);
    const ForcingField f(gain, coeffs);
    DomainSpec dom(3.0, {41, 41});
    PenaltyParams pen;
    pen.epsilon = 1e-5;
    pen.time_steps = 50;
    const ValueField penalized = solve_penalized(coeffs, f, dom, pen);
    const ValueField psor = solve_psor(coeffs, f, dom, 50);
    const FieldInvariants inv = field_invariants(psor, gain);
    CHECK(inv.min_value >= -1e-12);
    CHECK(inv.max_value <= gain.theta_bar() + 1e-12);
    double dist = 0.0;
    for (int k = 0; k <= 50; ++k)
        for (long fid = 0; fid < dom.total_nodes(); ++fid)
            dist = std::max(dist, std::abs(penalized.u(k, fid) - psor.u(k, fid)));
    CHECK(dist <= 1e-3);
}

TEST_CASE("field persistence: binary round-trip and probe table") {
    PutInstance inst;
    DomainSpec dom(5.0, {101});
    const ValueField field = solve_psor(inst.coeffs, inst.force, dom, 20);
    field.save_binary("field_roundtrip.bin");
    const ValueField back = ValueField::load_binary("field_roundtrip.bin");
    CHECK(back.meta().method == "psor");
    CHECK(back.meta().radius == doctest::Approx(5.0));
    double dist = 0.0;
    for (int k = 0; k <= 20; ++k)
        for (long fid = 0; fid < dom.total_nodes(); ++fid)
            dist = std::max(dist, std::abs(field.u(k, fid) - back.u(k, fid)));
    CHECK(dist == 0.0);
    const std::string csv = field.probe_csv({vec1(1.0)}, inst.gain);
    CHECK(csv.find("t,x1,u,U,theta") == 0);
    std::remove("field_roundtrip.bin");
}
