#include "stoplab/vi.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <fstream>

#include "stoplab/csv.hpp"

namespace stoplab {

DomainSpec::DomainSpec(double radius, std::vector<int> nodes_per_axis)
    : radius_(radius), nodes_(std::move(nodes_per_axis)) {
    if (!(radius_ > 0.0)) throw InputError("domain: radius must be positive");
    if (nodes_.empty() || nodes_.size() > 3)
        throw DimensionError("domain: grid solves support dimensions 1 to 3");
    total_ = 1;
    for (const int m : nodes_) {
        if (m < 3) throw InputError("domain: need at least 3 nodes per axis");
        total_ *= m;
        spacing_.push_back(2.0 * radius_ / (m - 1));
    }
}

Vec DomainSpec::node_coords(long flat) const {
    const auto multi = multi_index(flat);
    Vec x(dim());
    for (int i = 0; i < dim(); ++i) x[i] = axis_coord(i, multi[static_cast<size_t>(i)]);
    return x;
}

bool DomainSpec::in_ball(long flat) const {
    return node_coords(flat).norm() < radius_ - 1e-12;
}

long DomainSpec::flat_index(const std::vector<int>& multi) const {
    long f = 0;
    for (size_t i = 0; i < nodes_.size(); ++i) f = f * nodes_[i] + multi[i];
    return f;
}

std::vector<int> DomainSpec::multi_index(long flat) const {
    std::vector<int> multi(nodes_.size());
    for (size_t i = nodes_.size(); i-- > 0;) {
        multi[i] = static_cast<int>(flat % nodes_[i]);
        flat /= nodes_[i];
    }
    return multi;
}

void PenaltyParams::validate() const {
    if (!(epsilon > 0.0)) throw InputError("penalty: epsilon must be positive");
    if (theta < 0.5 || theta > 1.0)
        throw InputError("penalty: scheme weight must lie in [1/2, 1]");
    if (time_steps < 1) throw InputError("penalty: need at least one time step");
}

ValueField::ValueField(DomainSpec dom, FieldMeta meta) : dom_(std::move(dom)), meta_(std::move(meta)) {
    const size_t sz = static_cast<size_t>(meta_.time_steps + 1) *
                      static_cast<size_t>(dom_.total_nodes());
    u_.assign(sz, 0.0);
    big_u_.assign(sz, 0.0);
}

double ValueField::time_at(int k) const { return meta_.t0 + dt() * k; }

double ValueField::interp_slice(const std::vector<double>& data, int k, const Vec& x) const {
    const int n = dom_.dim();
    double frac[3];
    long stride[3];
    long stride_acc = 1;
    for (int i = n - 1; i >= 0; --i) {
        stride[i] = stride_acc;
        stride_acc *= dom_.axis_nodes(i);
    }
    long origin = 0;
    for (int i = 0; i < n; ++i) {
        const double pos = (x[i] + dom_.radius()) / dom_.spacing(i);
        int c = static_cast<int>(pos);
        c = std::clamp(c, 0, dom_.axis_nodes(i) - 2);
        frac[i] = std::clamp(pos - c, 0.0, 1.0);
        origin += stride[i] * c;
    }
    const double* slice = data.data() + offset(k, 0);
    double acc = 0.0;
    const int corners = 1 << n;
    for (int c = 0; c < corners; ++c) {
        double w = 1.0;
        long node = origin;
        for (int i = 0; i < n; ++i) {
            const bool hi = (c >> i) & 1;
            w *= hi ? frac[i] : 1.0 - frac[i];
            if (hi) node += stride[i];
        }
        acc += w * slice[node];
    }
    return acc;
}

namespace {
double time_weights(double t, double t0, double dt, int steps, int& k) {
    const double pos = (t - t0) / dt;
    k = static_cast<int>(std::floor(pos));
    k = std::clamp(k, 0, steps - 1);
    return std::clamp(pos - k, 0.0, 1.0);
}
} // namespace

double ValueField::interp_u(double t, const Vec& x) const {
    if (x.norm() >= dom_.radius()) return 0.0;
    int k = 0;
    const double w = time_weights(t, meta_.t0, dt(), meta_.time_steps, k);
    return (1.0 - w) * interp_slice(u_, k, x) + w * interp_slice(u_, k + 1, x);
}

double ValueField::interp_value(double t, const Vec& x) const {
    int k = 0;
    const double w = time_weights(t, meta_.t0, dt(), meta_.time_steps, k);
    return (1.0 - w) * interp_slice(big_u_, k, x) + w * interp_slice(big_u_, k + 1, x);
}

// ---------------------------------------------------------------------------
// Discrete operator assembly shared by the two solvers and the residual audit.

namespace {

using SpRow = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using SpCol = Eigen::SparseMatrix<double>;

struct Stencil {
    std::vector<long> interior;    // flat ids
    std::vector<long> compact;     // flat -> compact index or -1
    SpRow l_full;                  // interior rows x all grid columns
    SpRow l_int;                   // interior rows x interior columns
    double max_diag_magnitude = 0.0;
};

Stencil build_stencil(const GeneratorCoefficients& coeffs, const DomainSpec& dom) {
    const int n = dom.dim();
    if (coeffs.dim() != n) throw DimensionError("solver: coefficient/domain dimension mismatch");
    Stencil st;
    st.compact.assign(static_cast<size_t>(dom.total_nodes()), -1);
    for (long f = 0; f < dom.total_nodes(); ++f) {
        if (dom.in_ball(f)) {
            st.compact[static_cast<size_t>(f)] = static_cast<long>(st.interior.size());
            st.interior.push_back(f);
        }
    }
    const long rows = static_cast<long>(st.interior.size());
    std::vector<Eigen::Triplet<double>> trip_full;
    trip_full.reserve(static_cast<size_t>(rows) * (2u * n + 1u + 2u * n * n));

    std::vector<int> multi;
    for (long r = 0; r < rows; ++r) {
        const long fid = st.interior[static_cast<size_t>(r)];
        multi = dom.multi_index(fid);
        const Vec x = dom.node_coords(fid);
        const Mat b = coeffs.B(x);
        const Vec drift = coeffs.has_closed_form() ? coeffs.drift().apply(x) : Vec::Zero(n);
        auto shifted = [&](int axis, int off) {
            auto m2 = multi;
            m2[static_cast<size_t>(axis)] += off;
            return dom.flat_index(m2);
        };
        auto add = [&](long col, double w) {
            trip_full.emplace_back(static_cast<int>(r), static_cast<int>(col), w);
        };
        double diag = 0.0;
        for (int i = 0; i < n; ++i) {
            const double h = dom.spacing(i);
            const double c2 = 0.5 * b(i, i) / (h * h);
            add(shifted(i, +1), c2);
            add(shifted(i, -1), c2);
            diag += -2.0 * c2;
            // drift, upwinded once the cell Peclet number passes 2
            const double d = drift[i];
            const double peclet = b(i, i) > 0.0
                                      ? std::abs(d) * h / (0.5 * b(i, i))
                                      : std::numeric_limits<double>::infinity();
            if (d == 0.0) continue;
            if (peclet <= 2.0) {
                add(shifted(i, +1), d / (2.0 * h));
                add(shifted(i, -1), -d / (2.0 * h));
            } else if (d > 0.0) {
                add(shifted(i, +1), d / h);
                diag += -d / h;
            } else {
                add(shifted(i, -1), -d / h);
                diag += d / h;
            }
        }
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                const double w = b(i, j) / (4.0 * dom.spacing(i) * dom.spacing(j));
                if (w == 0.0) continue;
                auto m2 = multi;
                auto cross = [&](int oi, int oj, double sign) {
                    m2 = multi;
                    m2[static_cast<size_t>(i)] += oi;
                    m2[static_cast<size_t>(j)] += oj;
                    add(dom.flat_index(m2), sign * w);
                };
                cross(+1, +1, +1.0);
                cross(+1, -1, -1.0);
                cross(-1, +1, -1.0);
                cross(-1, -1, +1.0);
            }
        }
        add(fid, diag);
        st.max_diag_magnitude = std::max(st.max_diag_magnitude, std::abs(diag));
    }
    st.l_full.resize(rows, dom.total_nodes());
    st.l_full.setFromTriplets(trip_full.begin(), trip_full.end());

    std::vector<Eigen::Triplet<double>> trip_int;
    for (int r = 0; r < st.l_full.outerSize(); ++r) {
        for (SpRow::InnerIterator it(st.l_full, r); it; ++it) {
            const long c = st.compact[static_cast<size_t>(it.col())];
            if (c >= 0) trip_int.emplace_back(r, static_cast<int>(c), it.value());
        }
    }
    st.l_int.resize(rows, rows);
    st.l_int.setFromTriplets(trip_int.begin(), trip_int.end());
    return st;
}

struct StepContext {
    const Stencil& st;
    const DomainSpec& dom;
    const ForcingField& f;
    const SolverOptions& opts;
    double theta;
    double dt;
    double t0;
    Vec spatial;     // gain spatial profile at every grid node
    Vec l_spatial;   // L_h applied to the profile, interior rows
    // forcing vector for the step from t_{k+1} down to t_k
    Vec forcing_vec(int k) const {
        const auto& tf = f.gain().time_factor();
        const double tk = t0 + dt * k;
        if (opts.forcing == ForcingMode::DiscreteCompatible) {
            const double phi_mix = theta * tf.value(tk) + (1.0 - theta) * tf.value(tk + dt);
            Vec out = tf.slope() * spatial_interior() + phi_mix * l_spatial;
            return out;
        }
        const double tmid = theta * tk + (1.0 - theta) * (tk + dt);
        const long rows = static_cast<long>(st.interior.size());
        Vec out(rows);
        for (long r = 0; r < rows; ++r)
            out[r] = f(tmid, dom.node_coords(st.interior[static_cast<size_t>(r)]));
        return out;
    }
    Vec spatial_interior() const {
        const long rows = static_cast<long>(st.interior.size());
        Vec out(rows);
        for (long r = 0; r < rows; ++r)
            out[r] = spatial[st.interior[static_cast<size_t>(r)]];
        return out;
    }
};

StepContext make_context(const Stencil& st, const DomainSpec& dom, const ForcingField& f,
                         const SolverOptions& opts, double theta, double dt, double t0) {
    StepContext ctx{st, dom, f, opts, theta, dt, t0, {}, {}};
    ctx.spatial.resize(dom.total_nodes());
    for (long fid = 0; fid < dom.total_nodes(); ++fid)
        ctx.spatial[fid] = f.gain().spatial_value(dom.node_coords(fid));
    ctx.l_spatial = st.l_full * ctx.spatial;
    return ctx;
}

void write_slice(ValueField& field, const Stencil& st, const GainSpec& gain, int k,
                 const Vec& interior_u) {
    const auto& dom = field.domain();
    const double phi = gain.time_factor().value(field.time_at(k));
    for (long fid = 0; fid < dom.total_nodes(); ++fid) {
        const long c = st.compact[static_cast<size_t>(fid)];
        const double uval = c >= 0 ? interior_u[c] : 0.0;
        field.u_ref(k, fid) = uval;
        field.value_ref(k, fid) = uval + phi * gain.spatial_value(dom.node_coords(fid));
    }
}

void check_explicit_stability(double theta, double dt, const Stencil& st) {
    if (theta >= 0.5) return;
    if ((1.0 - theta) * dt * st.max_diag_magnitude > 1.0)
        throw SolverError("solver: CFL stability bound violated in explicit mode", 0,
                          (1.0 - theta) * dt * st.max_diag_magnitude);
}

} // namespace

ValueField solve_penalized(const GeneratorCoefficients& coeffs, const ForcingField& f,
                           const DomainSpec& dom, const PenaltyParams& params,
                           const SolverOptions& opts) {
    if (!(params.epsilon > 0.0)) throw InputError("penalized: epsilon must be positive");
    if (params.theta < 0.0 || params.theta > 1.0)
        throw InputError("penalized: scheme weight must lie in [0, 1]");
    const Stencil st = build_stencil(coeffs, dom);
    const GainSpec& gain = f.gain();
    FieldMeta meta;
    meta.n = dom.dim();
    meta.radius = dom.radius();
    meta.time_steps = params.time_steps;
    meta.horizon = gain.horizon();
    meta.alpha = coeffs.has_closed_form() ? coeffs.drift().alpha : 0.0;
    meta.epsilon_n = coeffs.epsilon();
    meta.method = "penalized";
    meta.penalty_epsilon = params.epsilon;
    meta.theta = params.theta;
    meta.forcing = opts.forcing;
    ValueField field(dom, meta);

    const int steps = params.time_steps;
    const double dt = field.dt();
    check_explicit_stability(params.theta, dt, st);
    const long rows = static_cast<long>(st.interior.size());
    StepContext ctx = make_context(st, dom, f, opts, params.theta, dt, meta.t0);

    SpCol m_base(rows, rows);
    {
        SpCol identity(rows, rows);
        identity.setIdentity();
        m_base = identity - params.theta * dt * SpCol(st.l_int);
    }
    Eigen::SparseLU<SpCol> lu;
    lu.analyzePattern(m_base);

    Vec u_next = Vec::Zero(rows);
    write_slice(field, st, gain, steps, u_next);
    const double penalty_rate = dt / params.epsilon;

    for (int k = steps - 1; k >= 0; --k) {
        Vec rhs = u_next + dt * ctx.forcing_vec(k);
        if (params.theta < 1.0) rhs += (1.0 - params.theta) * dt * (st.l_int * u_next);
        Vec v = u_next.cwiseMax(0.0);
        double residual = std::numeric_limits<double>::infinity();
        bool done = false;
        for (int iter = 0; iter < std::max(params.max_iter, 1); ++iter) {
            Vec g = m_base * v - rhs;
            for (long i = 0; i < rows; ++i)
                if (v[i] < 0.0) g[i] += penalty_rate * v[i]; // -dt/eps * [-v]^+
            residual = g.lpNorm<Eigen::Infinity>() / dt;
            if (residual <= params.newton_tol) {
                done = true;
                break;
            }
            SpCol j = m_base;
            for (long i = 0; i < rows; ++i)
                if (v[i] < 0.0) j.coeffRef(static_cast<int>(i), static_cast<int>(i)) += penalty_rate;
            lu.factorize(j);
            if (lu.info() != Eigen::Success)
                throw SolverError("penalized: step matrix factorization failed", k, residual);
            v -= lu.solve(g);
        }
        if (!done)
            throw SolverError("penalized: newton iteration did not converge at step " +
                                  std::to_string(k),
                              k, residual);
        u_next = v;
        write_slice(field, st, gain, k, u_next);
    }
    return field;
}

ValueField solve_psor(const GeneratorCoefficients& coeffs, const ForcingField& f,
                      const DomainSpec& dom, int time_steps, const SolverOptions& opts) {
    if (time_steps < 1) throw InputError("psor: need at least one time step");
    const Stencil st = build_stencil(coeffs, dom);
    const GainSpec& gain = f.gain();
    const double theta = 1.0; // fully implicit complementarity march
    FieldMeta meta;
    meta.n = dom.dim();
    meta.radius = dom.radius();
    meta.time_steps = time_steps;
    meta.horizon = gain.horizon();
    meta.alpha = coeffs.has_closed_form() ? coeffs.drift().alpha : 0.0;
    meta.epsilon_n = coeffs.epsilon();
    meta.method = "psor";
    meta.theta = theta;
    meta.forcing = opts.forcing;
    ValueField field(dom, meta);

    const double dt = field.dt();
    const long rows = static_cast<long>(st.interior.size());
    StepContext ctx = make_context(st, dom, f, opts, theta, dt, meta.t0);

    SpRow m_row(rows, rows);
    {
        SpRow identity(rows, rows);
        identity.setIdentity();
        m_row = identity - theta * dt * st.l_int;
    }
    Vec diag(rows);
    for (long r = 0; r < rows; ++r) diag[r] = m_row.coeff(r, r);

    Vec u_next = Vec::Zero(rows);
    write_slice(field, st, gain, time_steps, u_next);

    for (int k = time_steps - 1; k >= 0; --k) {
        const Vec rhs = u_next + dt * ctx.forcing_vec(k);
        Vec v = u_next.cwiseMax(0.0);
        double residual = std::numeric_limits<double>::infinity();
        bool done = false;
        for (int sweep = 0; sweep < opts.psor_max_iter; ++sweep) {
            for (long r = 0; r < rows; ++r) {
                double mv = 0.0;
                for (SpRow::InnerIterator it(m_row, r); it; ++it)
                    mv += it.value() * v[it.col()];
                const double cand = v[r] + opts.psor_omega * (rhs[r] - mv) / diag[r];
                v[r] = std::max(0.0, cand);
            }
            if (sweep % 4 == 3 || sweep + 1 == opts.psor_max_iter) {
                const Vec slack = m_row * v - rhs;
                residual = 0.0;
                for (long r = 0; r < rows; ++r)
                    residual = std::max(residual,
                                        std::abs(std::max(-slack[r] / dt, -v[r])));
                if (residual <= opts.psor_tol) {
                    done = true;
                    break;
                }
            }
        }
        if (!done)
            throw SolverError("psor: relaxation did not converge at step " + std::to_string(k),
                              k, residual);
        u_next = v;
        write_slice(field, st, gain, k, u_next);
    }
    return field;
}

ResidualStats complementarity_residual(const ValueField& field,
                                       const GeneratorCoefficients& coeffs,
                                       const ForcingField& f, const DomainSpec& dom) {
    const Stencil st = build_stencil(coeffs, dom);
    const double theta = field.meta().theta;
    const double dt = field.dt();
    SolverOptions opts;
    opts.forcing = field.meta().forcing;
    StepContext ctx = make_context(st, dom, f, opts, theta, dt, field.meta().t0);
    const long rows = static_cast<long>(st.interior.size());

    SpRow m_row(rows, rows);
    {
        SpRow identity(rows, rows);
        identity.setIdentity();
        m_row = identity - theta * dt * st.l_int;
    }

    // mu_n cell weights for the slice norms
    Vec mu_weight = Vec::Zero(rows);
    if (coeffs.has_closed_form()) {
        const GaussianMeasure mu(coeffs.cov(), dom.dim());
        double cell = 1.0;
        for (int i = 0; i < dom.dim(); ++i) cell *= dom.spacing(i);
        for (long r = 0; r < rows; ++r)
            mu_weight[r] = cell * mu.density(dom.node_coords(st.interior[static_cast<size_t>(r)]));
    } else {
        mu_weight.setConstant(1.0 / static_cast<double>(rows));
    }

    ResidualStats stats;
    double l2_acc = 0.0;
    Vec uk(rows), un(rows);
    for (int k = 0; k < field.meta().time_steps; ++k) {
        for (long r = 0; r < rows; ++r) {
            const long fid = st.interior[static_cast<size_t>(r)];
            uk[r] = field.u(k, fid);
            un[r] = field.u(k + 1, fid);
        }
        Vec rhs = un + dt * ctx.forcing_vec(k);
        if (theta < 1.0) rhs += (1.0 - theta) * dt * (st.l_int * un);
        const Vec rate = (rhs - m_row * uk) / dt;
        double slice2 = 0.0;
        for (long r = 0; r < rows; ++r) {
            const double res = std::max(rate[r], -uk[r]);
            const double mag = std::abs(res);
            if (mag > stats.sup) {
                stats.sup = mag;
                stats.worst_node = st.interior[static_cast<size_t>(r)];
                stats.worst_step = k;
            }
            slice2 += mu_weight[r] * res * res;
        }
        l2_acc += dt * slice2;
    }
    stats.l2_mu = std::sqrt(l2_acc);
    return stats;
}

std::vector<PenaltySweepRow> penalty_sweep(const GeneratorCoefficients& coeffs,
                                           const ForcingField& f, const DomainSpec& dom,
                                           PenaltyParams base,
                                           const std::vector<double>& epsilons,
                                           const SolverOptions& opts) {
    if (epsilons.size() < 3) throw InputError("penalty sweep: need at least three levels");
    for (size_t i = 1; i < epsilons.size(); ++i)
        if (!(epsilons[i] < epsilons[i - 1]))
            throw InputError("penalty sweep: epsilon levels must decrease strictly");
    const ValueField reference = solve_psor(coeffs, f, dom, base.time_steps, opts);
    const GaussianMeasure* mu = nullptr;
    std::unique_ptr<GaussianMeasure> mu_store;
    if (coeffs.has_closed_form()) {
        mu_store = std::make_unique<GaussianMeasure>(coeffs.cov(), dom.dim());
        mu = mu_store.get();
    }
    double cell = 1.0;
    for (int i = 0; i < dom.dim(); ++i) cell *= dom.spacing(i);

    std::vector<PenaltySweepRow> rows;
    for (const double eps : epsilons) {
        PenaltyParams p = base;
        p.epsilon = eps;
        const ValueField field = solve_penalized(coeffs, f, dom, p, opts);
        PenaltySweepRow row{eps, 0.0, 0.0};
        double l2_acc = 0.0;
        for (int k = 0; k <= field.meta().time_steps; ++k) {
            double slice = 0.0;
            for (long fid = 0; fid < dom.total_nodes(); ++fid) {
                const double neg = std::max(-field.u(k, fid), 0.0);
                const double w = mu ? cell * mu->density(dom.node_coords(fid)) : 1.0;
                slice += w * neg * neg;
                row.dist_to_psor_sup =
                    std::max(row.dist_to_psor_sup, std::abs(field.u(k, fid) - reference.u(k, fid)));
            }
            const double tw = (k == 0 || k == field.meta().time_steps) ? 0.5 : 1.0;
            l2_acc += tw * field.dt() * slice;
        }
        row.negative_part_l2 = std::sqrt(l2_acc);
        rows.push_back(row);
    }
    return rows;
}

DomainSweepResult domain_sweep(const GeneratorCoefficients& coeffs, const ForcingField& f,
                               const std::vector<double>& radii, const std::vector<Vec>& probes,
                               double target_spacing, PenaltyParams params,
                               const SolverOptions& opts) {
    if (radii.size() < 2) throw InputError("domain sweep: need at least two radii");
    for (size_t i = 1; i < radii.size(); ++i)
        if (!(radii[i] > radii[i - 1]))
            throw InputError("domain sweep: radii must increase strictly");
    for (const auto& p : probes)
        if (p.norm() >= radii.front())
            throw InputError("domain sweep: probes must lie inside the smallest ball");

    DomainSweepResult out;
    out.radii = radii;
    for (const double r : radii) {
        const int per_axis = 2 * std::max<long>(1, std::lround(r / target_spacing)) + 1;
        DomainSpec dom(r, std::vector<int>(static_cast<size_t>(coeffs.dim()), per_axis));
        const ValueField field = solve_penalized(coeffs, f, dom, params, opts);
        std::vector<double> vals;
        for (const auto& p : probes) vals.push_back(field.interp_value(field.meta().t0, p));
        out.probe_values.push_back(std::move(vals));
    }
    for (size_t r = 0; r + 1 < out.probe_values.size(); ++r) {
        std::vector<double> d;
        for (size_t p = 0; p < probes.size(); ++p)
            d.push_back(std::abs(out.probe_values[r + 1][p] - out.probe_values[r][p]));
        out.diffs.push_back(std::move(d));
    }
    return out;
}

std::string DomainSweepResult::csv() const {
    std::string out = "radius,probe,value\n";
    for (size_t r = 0; r < radii.size(); ++r)
        for (size_t p = 0; p < probe_values[r].size(); ++p) {
            CsvRow row;
            row.add(radii[r]).add(static_cast<long>(p)).add(probe_values[r][p]);
            out += row.str();
            out += '\n';
        }
    return out;
}

NormAudit norm_audit(const ValueField& field, const GainSpec& gain, const GaussianMeasure& mu,
                     double p) {
    if (!(p >= 1.0)) throw InputError("norm audit: exponent must satisfy p >= 1");
    const auto& dom = field.domain();
    if (mu.dim() != dom.dim()) throw DimensionError("norm audit: measure dimension mismatch");
    double cell = 1.0;
    for (int i = 0; i < dom.dim(); ++i) cell *= dom.spacing(i);
    const int steps = field.meta().time_steps;
    const double dt = field.dt();

    std::vector<double> dens(static_cast<size_t>(dom.total_nodes()));
    for (long fid = 0; fid < dom.total_nodes(); ++fid)
        dens[static_cast<size_t>(fid)] = cell * mu.density(dom.node_coords(fid));

    double u_acc = 0.0, g_acc = 0.0, t_acc = 0.0;
    for (int k = 0; k <= steps; ++k) {
        const double tw = (k == 0 || k == steps) ? 0.5 : 1.0;
        double up = 0.0, gp = 0.0;
        for (long fid = 0; fid < dom.total_nodes(); ++fid) {
            const double w = dens[static_cast<size_t>(fid)];
            up += w * std::pow(std::abs(field.u(k, fid)), p);
            if (dom.in_ball(fid)) {
                const auto multi = dom.multi_index(fid);
                double g2 = 0.0;
                for (int i = 0; i < dom.dim(); ++i) {
                    auto m2 = multi;
                    m2[static_cast<size_t>(i)] += 1;
                    const double upv = field.u(k, dom.flat_index(m2));
                    m2[static_cast<size_t>(i)] -= 2;
                    const double umv = field.u(k, dom.flat_index(m2));
                    const double d = (upv - umv) / (2.0 * dom.spacing(i));
                    g2 += d * d;
                }
                gp += w * std::pow(std::sqrt(g2), p);
            }
        }
        u_acc += tw * dt * up;
        g_acc += tw * dt * gp;
        if (k < steps) {
            double sl = 0.0;
            for (long fid = 0; fid < dom.total_nodes(); ++fid) {
                const double d = (field.u(k + 1, fid) - field.u(k, fid)) / dt;
                sl += dens[static_cast<size_t>(fid)] * d * d;
            }
            t_acc += dt * sl;
        }
    }
    NormAudit audit;
    audit.p = p;
    audit.u_norm = std::pow(u_acc, 1.0 / p);
    audit.grad_norm = std::pow(g_acc, 1.0 / p);
    audit.dudt_l2 = std::sqrt(t_acc);
    audit.u_bound = 2.0 * gain.theta_bar() * std::pow(gain.horizon(), 1.0 / p);
    audit.u_within_bound = audit.u_norm <= audit.u_bound + 1e-12;
    return audit;
}

double max_spatial_slope(const ValueField& field) {
    const auto& dom = field.domain();
    double slope = 0.0;
    for (int k = 0; k <= field.meta().time_steps; ++k) {
        for (long fid = 0; fid < dom.total_nodes(); ++fid) {
            const auto multi = dom.multi_index(fid);
            for (int i = 0; i < dom.dim(); ++i) {
                if (multi[static_cast<size_t>(i)] + 1 >= dom.axis_nodes(i)) continue;
                auto m2 = multi;
                m2[static_cast<size_t>(i)] += 1;
                const double d =
                    std::abs(field.value(k, dom.flat_index(m2)) - field.value(k, fid)) /
                    dom.spacing(i);
                slope = std::max(slope, d);
            }
        }
    }
    return slope;
}

FieldInvariants field_invariants(const ValueField& field, const GainSpec& gain) {
    const auto& dom = field.domain();
    FieldInvariants inv;
    inv.min_u = std::numeric_limits<double>::infinity();
    inv.min_value = std::numeric_limits<double>::infinity();
    inv.max_value = -std::numeric_limits<double>::infinity();
    inv.obstacle_gap = std::numeric_limits<double>::infinity();
    const int steps = field.meta().time_steps;
    for (int k = 0; k <= steps; ++k) {
        const double t = field.time_at(k);
        for (long fid = 0; fid < dom.total_nodes(); ++fid) {
            const double uv = field.u(k, fid);
            const double val = field.value(k, fid);
            inv.min_u = std::min(inv.min_u, uv);
            inv.min_value = std::min(inv.min_value, val);
            inv.max_value = std::max(inv.max_value, val);
            const double theta = gain.value(t, dom.node_coords(fid));
            inv.obstacle_gap = std::min(inv.obstacle_gap, val - theta);
            if (k == steps) inv.terminal_error = std::max(inv.terminal_error, std::abs(uv));
            if (!dom.in_ball(fid)) inv.boundary_error = std::max(inv.boundary_error, std::abs(uv));
        }
    }
    return inv;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {
constexpr uint32_t kFieldMagic = 0x46564C53u; // "SLVF"
}

void ValueField::save_binary(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("field: cannot open " + path + " for writing");
    auto w32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto wd = [&](double v) { f.write(reinterpret_cast<const char*>(&v), 8); };
    w32(kFieldMagic);
    w32(1u);
    w32(static_cast<uint32_t>(meta_.n));
    wd(meta_.radius);
    w32(static_cast<uint32_t>(meta_.time_steps));
    wd(meta_.t0);
    wd(meta_.horizon);
    wd(meta_.alpha);
    wd(meta_.epsilon_n);
    wd(meta_.penalty_epsilon);
    wd(meta_.theta);
    w32(meta_.method == "psor" ? 1u : 0u);
    w32(meta_.forcing == ForcingMode::Analytic ? 1u : 0u);
    for (int i = 0; i < dom_.dim(); ++i) w32(static_cast<uint32_t>(dom_.axis_nodes(i)));
    f.write(reinterpret_cast<const char*>(u_.data()),
            static_cast<std::streamsize>(u_.size() * sizeof(double)));
    f.write(reinterpret_cast<const char*>(big_u_.data()),
            static_cast<std::streamsize>(big_u_.size() * sizeof(double)));
}

ValueField ValueField::load_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("field: cannot open " + path);
    auto r32 = [&]() { uint32_t v; f.read(reinterpret_cast<char*>(&v), 4); return v; };
    auto rd = [&]() { double v; f.read(reinterpret_cast<char*>(&v), 8); return v; };
    if (r32() != kFieldMagic) throw InputError("field: bad magic in " + path);
    if (r32() != 1u) throw InputError("field: unsupported version in " + path);
    FieldMeta meta;
    meta.n = static_cast<int>(r32());
    meta.radius = rd();
    meta.time_steps = static_cast<int>(r32());
    meta.t0 = rd();
    meta.horizon = rd();
    meta.alpha = rd();
    meta.epsilon_n = rd();
    meta.penalty_epsilon = rd();
    meta.theta = rd();
    meta.method = r32() == 1u ? "psor" : "penalized";
    meta.forcing = r32() == 1u ? ForcingMode::Analytic : ForcingMode::DiscreteCompatible;
    std::vector<int> nodes(static_cast<size_t>(meta.n));
    for (int i = 0; i < meta.n; ++i) nodes[static_cast<size_t>(i)] = static_cast<int>(r32());
    ValueField field(DomainSpec(meta.radius, nodes), meta);
    f.read(reinterpret_cast<char*>(field.u_.data()),
           static_cast<std::streamsize>(field.u_.size() * sizeof(double)));
    f.read(reinterpret_cast<char*>(field.big_u_.data()),
           static_cast<std::streamsize>(field.big_u_.size() * sizeof(double)));
    if (!f) throw InputError("field: truncated file " + path);
    return field;
}

std::string ValueField::probe_csv(const std::vector<Vec>& probes, const GainSpec& gain) const {
    std::string out = "t";
    for (int i = 0; i < dom_.dim(); ++i) out += ",x" + std::to_string(i + 1);
    out += ",u,U,theta\n";
    for (int k = 0; k <= meta_.time_steps; ++k) {
        const double t = time_at(k);
        for (const auto& p : probes) {
            CsvRow row;
            row.add(t);
            for (int i = 0; i < dom_.dim(); ++i) row.add(p[i]);
            row.add(interp_u(t, p)).add(interp_value(t, p)).add(gain.value(t, p));
            out += row.str();
            out += '\n';
        }
    }
    return out;
}

} // namespace stoplab
