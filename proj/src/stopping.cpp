#include "stoplab/stopping.hpp"

#include <Eigen/QR>
#include <cmath>
#include <fstream>
#include <numbers>

#include "stoplab/csv.hpp"
#include "stoplab/rng.hpp"

namespace stoplab {

StoppingRule::StoppingRule(std::shared_ptr<const ValueField> field, double delta)
    : field_(std::move(field)), delta_(delta) {
    const auto& dom = field_->domain();
    const int levels = field_->time_levels();
    mask_.assign(static_cast<size_t>(levels) * static_cast<size_t>(dom.total_nodes()), 0);
    for (int k = 0; k < levels; ++k)
        for (long fid = 0; fid < dom.total_nodes(); ++fid)
            mask_[static_cast<size_t>(k) * static_cast<size_t>(dom.total_nodes()) +
                  static_cast<size_t>(fid)] = field_->u(k, fid) <= delta_ ? 1 : 0;
    // terminal slice is all-contact by construction; anything else means the
    // upstream solve violated its terminal condition
    const int last = levels - 1;
    for (long fid = 0; fid < dom.total_nodes(); ++fid)
        if (!mask(last, fid))
            throw SolverError("rule: terminal contact set incomplete", last, field_->u(last, fid));
}

bool StoppingRule::mask(int k, long node) const {
    return mask_[static_cast<size_t>(k) *
                     static_cast<size_t>(field_->domain().total_nodes()) +
                 static_cast<size_t>(node)] != 0;
}

double StoppingRule::contact_area(int k) const {
    const auto& dom = field_->domain();
    long inball = 0, hit = 0;
    for (long fid = 0; fid < dom.total_nodes(); ++fid) {
        if (!dom.in_ball(fid)) continue;
        ++inball;
        if (mask(k, fid)) ++hit;
    }
    return inball > 0 ? static_cast<double>(hit) / static_cast<double>(inball) : 0.0;
}

std::vector<double> StoppingRule::free_boundary() const {
    const auto& dom = field_->domain();
    if (dom.dim() != 1)
        throw DimensionError("rule: free boundary extraction is one-dimensional");
    std::vector<double> b;
    for (int k = 0; k < field_->time_levels(); ++k) {
        double inf = std::numeric_limits<double>::quiet_NaN();
        for (long fid = 0; fid < dom.total_nodes(); ++fid) {
            if (!dom.in_ball(fid)) continue;
            if (mask(k, fid)) {
                const double x = dom.node_coords(fid)[0];
                if (std::isnan(inf) || x < inf) inf = x;
            }
        }
        b.push_back(inf);
    }
    return b;
}

std::vector<double> StoppingRule::contact_upper_edge() const {
    const auto& dom = field_->domain();
    if (dom.dim() != 1)
        throw DimensionError("rule: free boundary extraction is one-dimensional");
    // edge of the contact component attached to the lower ball edge; a shell
    // of worthless states near the upper edge is a separate component
    std::vector<double> b;
    for (int k = 0; k < field_->time_levels(); ++k) {
        double sup = std::numeric_limits<double>::quiet_NaN();
        bool run_alive = true;
        for (long fid = 0; fid < dom.total_nodes() && run_alive; ++fid) {
            if (!dom.in_ball(fid)) continue;
            if (mask(k, fid))
                sup = dom.node_coords(fid)[0];
            else
                run_alive = false;
        }
        b.push_back(sup);
    }
    return b;
}

std::string StoppingRule::boundary_csv() const {
    const auto lower = free_boundary();
    const auto upper = contact_upper_edge();
    std::string out = "t,lower,upper\n";
    for (int k = 0; k < field_->time_levels(); ++k) {
        CsvRow row;
        row.add(field_->time_at(k)).add(lower[static_cast<size_t>(k)]).add(
            upper[static_cast<size_t>(k)]);
        out += row.str();
        out += '\n';
    }
    return out;
}

StoppingRule contact_region(std::shared_ptr<const ValueField> field, const GainSpec& gain,
                            double delta) {
    (void)gain; // the stored gap field already encodes U - Theta
    if (!(delta > 0.0)) throw InputError("rule: contact tolerance must be positive");
    return StoppingRule(std::move(field), delta);
}

RuleVariant RuleVariant::forced_immediate() {
    RuleVariant v;
    v.kind = Kind::ForcedImmediate;
    return v;
}
RuleVariant RuleVariant::forced_terminal() {
    RuleVariant v;
    v.kind = Kind::ForcedTerminal;
    return v;
}
RuleVariant RuleVariant::shifted(double delta) {
    RuleVariant v;
    v.kind = Kind::Shifted;
    v.shift_delta = delta;
    return v;
}
RuleVariant RuleVariant::randomized(double rate, uint64_t seed) {
    RuleVariant v;
    v.kind = Kind::Randomized;
    v.stop_rate = rate;
    v.seed = seed;
    return v;
}
RuleVariant RuleVariant::lagged(int steps) {
    RuleVariant v;
    v.kind = Kind::Lagged;
    v.lag_steps = steps;
    return v;
}

namespace {

struct StatsAccumulator {
    double mean = 0.0, m2 = 0.0, time_mean = 0.0;
    long count = 0, exits = 0;
    std::vector<long> hist;
    void add(double value, int stop_level, bool exited) {
        ++count;
        const double d = value - mean;
        mean += d / static_cast<double>(count);
        m2 += d * (value - mean);
        if (exited) ++exits;
        if (static_cast<size_t>(stop_level) >= hist.size())
            hist.resize(static_cast<size_t>(stop_level) + 1, 0);
        ++hist[static_cast<size_t>(stop_level)];
    }
    StopStats finish(const std::vector<double>& times) const {
        StopStats s;
        s.paths = count;
        s.value_mean = mean;
        s.value_stderr = count > 1 ? std::sqrt(m2 / static_cast<double>(count - 1) /
                                               static_cast<double>(count))
                                   : 0.0;
        s.stop_histogram = hist;
        s.exit_fraction = count > 0 ? static_cast<double>(exits) / static_cast<double>(count) : 0.0;
        double tm = 0.0;
        for (size_t k = 0; k < hist.size(); ++k) tm += times[k] * static_cast<double>(hist[k]);
        s.mean_stop_time = count > 0 ? tm / static_cast<double>(count) : 0.0;
        return s;
    }
};

// Shared per-path first-hitting walk over a state sequence. state_at copies
// level k into the caller-owned buffer without allocating.
template <typename StateAt>
void walk_path(const StateAt& state_at, const std::vector<double>& times, int steps,
               const StoppingRule& rule, const GainSpec& gain, const RuleVariant& variant,
               long path_index, double radius, Vec& x, StatsAccumulator& acc) {
    const double tiebreak_threshold =
        variant.kind == RuleVariant::Kind::Shifted ? variant.shift_delta : rule.delta();
    int pending_lag = -1;
    for (int k = 0; k <= steps; ++k) {
        const double t = times[static_cast<size_t>(k)];
        state_at(k, x);
        const bool exited = x.norm() >= radius;
        bool stop = k == steps || exited;
        if (!stop) {
            switch (variant.kind) {
                case RuleVariant::Kind::Optimal:
                case RuleVariant::Kind::Shifted:
                    stop = rule.field().interp_u(t, x) <= tiebreak_threshold;
                    break;
                case RuleVariant::Kind::ForcedImmediate:
                    stop = true;
                    break;
                case RuleVariant::Kind::ForcedTerminal:
                    stop = false;
                    break;
                case RuleVariant::Kind::Randomized: {
                    const double dt = times[1] - times[0];
                    const double u = uniform_draw(variant.seed,
                                                  static_cast<uint64_t>(path_index),
                                                  static_cast<uint32_t>(k), 0xFFFFu);
                    stop = u < variant.stop_rate * dt;
                    break;
                }
                case RuleVariant::Kind::Lagged: {
                    if (pending_lag < 0 &&
                        rule.field().interp_u(t, x) <= rule.delta())
                        pending_lag = variant.lag_steps;
                    else if (pending_lag > 0)
                        --pending_lag;
                    stop = pending_lag == 0;
                    break;
                }
            }
        }
        if (stop) {
            acc.add(gain.value(t, x), k, exited && k < steps);
            return;
        }
    }
}

} // namespace

StopStats stop_on_paths(const PathBundle& paths, const StoppingRule& rule, const GainSpec& gain,
                        const RuleVariant& variant) {
    const auto& meta = rule.field().meta();
    if (paths.n != meta.n)
        throw InputError("rule: path bundle dimension differs from the field rung");
    if (std::isfinite(paths.alpha) != std::isfinite(meta.alpha) ||
        (std::isfinite(paths.alpha) && std::abs(paths.alpha - meta.alpha) > 1e-12))
        throw InputError("rule: path bundle alpha differs from the field rung");
    StatsAccumulator acc;
    Vec xbuf(paths.n);
    for (long p = 0; p < paths.paths; ++p) {
        auto state_at = [&](int k, Vec& out) { out = paths.state(p, k); };
        walk_path(state_at, paths.times, paths.steps, rule, gain, variant, p, meta.radius, xbuf,
                  acc);
    }
    return acc.finish(paths.times);
}

std::vector<StopStats> evaluate_rules_mc(const FiniteModel& model, const Vec& x0, double t0,
                                         int steps, long n_paths, uint64_t seed,
                                         const StoppingRule& rule, const GainSpec& gain,
                                         const std::vector<RuleVariant>& variants,
                                         long block) {
    const auto& meta = rule.field().meta();
    if (model.n != meta.n)
        throw InputError("rule: model dimension differs from the field rung");
    if (variants.empty()) throw InputError("rule: need at least one variant");
    std::vector<StatsAccumulator> accs(variants.size());
    std::vector<double> times;
    const double dt = (model.horizon - t0) / steps;
    const double sq = std::sqrt(dt);
    times.resize(static_cast<size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) times[static_cast<size_t>(k)] = t0 + k * dt;

    std::vector<double> states;
    const Vec start = projected_start(x0, model.n);
    Vec x(model.n), dwch(model.n), xnext(model.n), scratch(model.n), xbuf(model.n);
    for (long block_start = 0; block_start < n_paths; block_start += block) {
        const long count = std::min(block, n_paths - block_start);
        // simulate the block with absolute path indexing so the draw for path
        // p is independent of the block decomposition
        states.assign(static_cast<size_t>(count) * (static_cast<size_t>(steps) + 1) *
                          static_cast<size_t>(model.n),
                      0.0);
        for (long b = 0; b < count; ++b) {
            const long p = block_start + b;
            x = start;
            for (int k = 0; k <= steps; ++k) {
                if (k > 0) {
                    const double dw0 =
                        sq * normal_draw(seed, static_cast<uint64_t>(p),
                                         static_cast<uint32_t>(k - 1), 0);
                    for (int i = 0; i < model.n; ++i)
                        dwch[i] = sq * normal_draw(seed, static_cast<uint64_t>(p),
                                                   static_cast<uint32_t>(k - 1),
                                                   static_cast<uint32_t>(i) + 1);
                    euler_step_into(model, x, dt, dw0, dwch, xnext, scratch);
                    x.swap(xnext);
                    if (!x.allFinite())
                        throw SimulationError("rule: state non-finite", p, k);
                }
                double* dst = states.data() +
                              (static_cast<size_t>(b) * (static_cast<size_t>(steps) + 1) +
                               static_cast<size_t>(k)) *
                                  static_cast<size_t>(model.n);
                for (int i = 0; i < model.n; ++i) dst[i] = x[i];
            }
        }
        for (long b = 0; b < count; ++b) {
            auto state_at = [&](int k, Vec& out) {
                out = Eigen::Map<const Vec>(
                    states.data() + (static_cast<size_t>(b) * (static_cast<size_t>(steps) + 1) +
                                     static_cast<size_t>(k)) *
                                        static_cast<size_t>(model.n),
                    model.n);
            };
            for (size_t v = 0; v < variants.size(); ++v)
                walk_path(state_at, times, steps, rule, gain, variants[v], block_start + b,
                          meta.radius, xbuf, accs[v]);
        }
    }
    std::vector<StopStats> out;
    out.reserve(variants.size());
    for (const auto& acc : accs) out.push_back(acc.finish(times));
    return out;
}

StopStats evaluate_rule_mc(const FiniteModel& model, const Vec& x0, double t0, int steps,
                           long n_paths, uint64_t seed, const StoppingRule& rule,
                           const GainSpec& gain, const RuleVariant& variant, long block) {
    return evaluate_rules_mc(model, x0, t0, steps, n_paths, seed, rule, gain, {variant},
                             block)[0];
}

std::vector<MartingaleRow> martingale_check(const PathBundle& paths, const ValueField& field,
                                            const StoppingRule& rule,
                                            const std::vector<double>& sigma_times) {
    const double t0 = paths.t0;
    const double horizon = field.meta().horizon;
    for (const double s : sigma_times)
        if (s < t0 || s > horizon)
            throw InputError("martingale: cut time outside the problem window");
    Vec xbuf(paths.n);
    xbuf = paths.state(0, 0);
    const double reference = field.interp_value(t0, xbuf);
    std::vector<MartingaleRow> rows;
    for (const double sigma : sigma_times) {
        double cm = 0.0, c2 = 0.0, rm = 0.0, r2 = 0.0;
        long count = 0;
        for (long p = 0; p < paths.paths; ++p) {
            // first-hitting time of the contact set, arrested at the ball
            int tau_level = paths.steps;
            for (int k = 0; k <= paths.steps; ++k) {
                xbuf = paths.state(p, k);
                if (xbuf.norm() >= field.meta().radius ||
                    rule.field().interp_u(paths.times[static_cast<size_t>(k)], xbuf) <=
                        rule.delta()) {
                    tau_level = k;
                    break;
                }
            }
            auto level_of = [&](double t) {
                const double dt = paths.times[1] - paths.times[0];
                int k = static_cast<int>(std::lround((t - t0) / dt));
                return std::clamp(k, 0, paths.steps);
            };
            const int sigma_level = level_of(sigma);
            const int capped_level = std::min(sigma_level, tau_level);
            xbuf = paths.state(p, capped_level);
            const double vc =
                field.interp_value(paths.times[static_cast<size_t>(capped_level)], xbuf);
            xbuf = paths.state(p, sigma_level);
            const double vr =
                field.interp_value(paths.times[static_cast<size_t>(sigma_level)], xbuf);
            ++count;
            double d = vc - cm;
            cm += d / static_cast<double>(count);
            c2 += d * (vc - cm);
            d = vr - rm;
            rm += d / static_cast<double>(count);
            r2 += d * (vr - rm);
        }
        MartingaleRow row;
        row.sigma = sigma;
        row.capped_mean = cm;
        row.capped_stderr =
            count > 1 ? std::sqrt(c2 / static_cast<double>(count - 1) / static_cast<double>(count))
                      : 0.0;
        row.replaced_mean = rm;
        row.replaced_stderr =
            count > 1 ? std::sqrt(r2 / static_cast<double>(count - 1) / static_cast<double>(count))
                      : 0.0;
        row.reference = reference;
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Lattice oracle

namespace {

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
inline double norm_pdf(double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

// Exact integral of the piecewise-linear interpolant of v against N(m, s^2).
double convolve_linear(const std::vector<double>& grid, const std::vector<double>& v, double m,
                       double s) {
    const double h = grid[1] - grid[0];
    const double lo = m - 8.0 * s;
    const double hi = m + 8.0 * s;
    long first = static_cast<long>(std::floor((lo - grid.front()) / h));
    long last = static_cast<long>(std::ceil((hi - grid.front()) / h));
    first = std::max<long>(first, 0);
    last = std::min<long>(last, static_cast<long>(grid.size()) - 2);
    if (first > last)
        throw NumericError("lattice: transition window left the grid; refine the grid");
    double acc = 0.0;
    // clamp the kernel tails to the window edges so mass is conserved
    acc += v[static_cast<size_t>(first)] * norm_cdf((grid[static_cast<size_t>(first)] - m) / s);
    acc += v[static_cast<size_t>(last) + 1] *
           (1.0 - norm_cdf((grid[static_cast<size_t>(last) + 1] - m) / s));
    for (long c = first; c <= last; ++c) {
        const double xl = grid[static_cast<size_t>(c)];
        const double xr = grid[static_cast<size_t>(c) + 1];
        const double vl = v[static_cast<size_t>(c)];
        const double vr = v[static_cast<size_t>(c) + 1];
        const double zl = (xl - m) / s;
        const double zr = (xr - m) / s;
        const double dphi = norm_cdf(zr) - norm_cdf(zl);
        const double dpdf = norm_pdf(zl) - norm_pdf(zr);
        // linear segment v = vl + (y - xl) (vr - vl) / h
        const double slope = (vr - vl) / h;
        const double mean_part = m * dphi + s * dpdf; // integral of y dN
        acc += vl * dphi + slope * (mean_part - xl * dphi);
    }
    return acc;
}

} // namespace

LatticeResult lattice_oracle_1d(double drift_coef,
                                const std::function<double(double)>& sigma_total,
                                const GainSpec& gain, double t0, double x0, double radius,
                                int space_nodes, int time_steps) {
    if (space_nodes < 16) throw InputError("lattice: grid too coarse");
    const double dt = (gain.horizon() - t0) / time_steps;
    // pad so one-step transitions from the ball edge stay on the grid
    double smax = 0.0;
    for (int i = 0; i <= 32; ++i)
        smax = std::max(smax, sigma_total(-radius + i * (2.0 * radius / 32.0)));
    const double pad = 10.0 * smax * std::sqrt(dt) + std::abs(drift_coef) * radius * dt + 1e-8;
    const double lo = -radius - pad;
    const double hi = radius + pad;
    LatticeResult out;
    out.grid.resize(static_cast<size_t>(space_nodes));
    const double h = (hi - lo) / (space_nodes - 1);
    for (int i = 0; i < space_nodes; ++i) out.grid[static_cast<size_t>(i)] = lo + i * h;
    const double step_scale = h / std::max(smax * std::sqrt(dt), 1e-12);
    if (step_scale > 2.0)
        throw NumericError("lattice: spacing exceeds the one-step deviation; refine the grid");

    auto arrested = [&](double t, const std::vector<double>& cont, std::vector<double>& dst,
                        bool record_boundary) {
        double bsup = std::numeric_limits<double>::quiet_NaN();
        bool run_alive = true;
        for (int i = 0; i < space_nodes; ++i) {
            const double x = out.grid[static_cast<size_t>(i)];
            Vec xv(1);
            xv[0] = x;
            const double theta = gain.value(t, xv);
            if (std::abs(x) >= radius) {
                dst[static_cast<size_t>(i)] = theta;
                continue;
            }
            const double m = x + drift_coef * x * dt;
            const double s = std::max(sigma_total(x), 1e-14) * std::sqrt(dt);
            const double cont_val = convolve_linear(out.grid, cont, m, s);
            dst[static_cast<size_t>(i)] = std::max(theta, cont_val);
            // edge of the contact component attached to the lower ball edge
            if (record_boundary && run_alive) {
                if (dst[static_cast<size_t>(i)] <= theta + 1e-12)
                    bsup = x;
                else
                    run_alive = false;
            }
        }
        out.boundary.push_back(bsup);
    };

    std::vector<double> v(static_cast<size_t>(space_nodes));
    for (int i = 0; i < space_nodes; ++i) {
        Vec xv(1);
        xv[0] = out.grid[static_cast<size_t>(i)];
        v[static_cast<size_t>(i)] = gain.value(gain.horizon(), xv);
    }
    std::vector<double> next(v);
    for (int k = time_steps - 1; k >= 0; --k) {
        const double t = t0 + dt * k;
        arrested(t, v, next, true);
        std::swap(v, next);
    }
    std::reverse(out.boundary.begin(), out.boundary.end());
    out.v0 = v;
    // linear interpolation at the query point
    const double pos = (x0 - lo) / h;
    const int c = std::clamp(static_cast<int>(std::floor(pos)), 0, space_nodes - 2);
    const double w = std::clamp(pos - c, 0.0, 1.0);
    out.value = (1.0 - w) * v[static_cast<size_t>(c)] + w * v[static_cast<size_t>(c) + 1];
    return out;
}

// ---------------------------------------------------------------------------
// Regression Monte Carlo oracle

namespace {

int basis_count(int n, int degree) {
    // monomials of total degree <= degree in n variables
    long num = 1, den = 1;
    for (int i = 1; i <= n; ++i) {
        num *= degree + i;
        den *= i;
    }
    return static_cast<int>(num / den);
}

void fill_features(const Vec& x, int degree, Eigen::RowVectorXd& row) {
    // graded lexicographic enumeration via recursion over coordinates
    int col = 0;
    std::function<void(int, int, double)> rec = [&](int coord, int remaining, double acc) {
        if (coord == x.size()) {
            row[col++] = acc;
            return;
        }
        double power = 1.0;
        for (int d = 0; d <= remaining; ++d) {
            rec(static_cast<int>(coord) + 1, remaining - d, acc * power);
            power *= x[coord];
        }
    };
    rec(0, degree, 1.0);
}

} // namespace

LsmcResult lsmc_oracle(const PathBundle& paths, const GainSpec& gain, int basis_degree,
                       double arrest_radius) {
    if (paths.paths < 64) throw InputError("lsmc: need more paths");
    if (basis_degree < 0) throw InputError("lsmc: degree must be non-negative");
    const long train = paths.paths / 2;
    const long eval = paths.paths - train;
    const int nb = basis_count(paths.n, basis_degree);
    if (train < 4 * nb)
        throw InputError("lsmc: regression underdetermined, reduce the basis degree");

    // stop level per path, initialized to the arrest/terminal time
    std::vector<int> stop_level(static_cast<size_t>(paths.paths));
    std::vector<int> exit_level(static_cast<size_t>(paths.paths));
    for (long p = 0; p < paths.paths; ++p) {
        int e = paths.steps;
        for (int k = 0; k <= paths.steps; ++k) {
            if (Vec(paths.state(p, k)).norm() >= arrest_radius) {
                e = k;
                break;
            }
        }
        exit_level[static_cast<size_t>(p)] = e;
        stop_level[static_cast<size_t>(p)] = e;
    }
    auto payoff = [&](long p, int k) {
        return gain.value(paths.times[static_cast<size_t>(k)], Vec(paths.state(p, k)));
    };

    // regression levels start at 1: the start point is deterministic, so the
    // level-0 continuation is a plain average
    std::vector<Eigen::MatrixXd> betas(static_cast<size_t>(paths.steps));
    Eigen::RowVectorXd feat(nb);
    for (int k = paths.steps - 1; k >= 1; --k) {
        std::vector<long> alive;
        for (long p = 0; p < train; ++p)
            if (exit_level[static_cast<size_t>(p)] > k) alive.push_back(p);
        if (alive.size() < static_cast<size_t>(4 * nb)) continue; // keep their current policy
        Eigen::MatrixXd a(static_cast<long>(alive.size()), nb);
        Vec y(static_cast<long>(alive.size()));
        for (size_t r = 0; r < alive.size(); ++r) {
            const long p = alive[r];
            fill_features(Vec(paths.state(p, k)), basis_degree, feat);
            a.row(static_cast<long>(r)) = feat;
            y[static_cast<long>(r)] = payoff(p, stop_level[static_cast<size_t>(p)]);
        }
        // scale the columns so the rank test sees shape, not magnitude
        Vec colscale(nb);
        for (int j = 0; j < nb; ++j) {
            colscale[j] = a.col(j).norm();
            if (colscale[j] > 0.0) a.col(j) /= colscale[j];
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
        qr.setThreshold(1e-10);
        if (qr.rank() < nb)
            throw SolverError("lsmc: regression rank-deficient, reduce the basis degree", k,
                              static_cast<double>(qr.rank()));
        Vec beta = qr.solve(y);
        for (int j = 0; j < nb; ++j) beta[j] /= colscale[j];
        betas[static_cast<size_t>(k)] = beta;
        for (size_t r = 0; r < alive.size(); ++r) {
            const long p = alive[r];
            fill_features(Vec(paths.state(p, k)), basis_degree, feat);
            const double continuation = (feat * beta).value();
            if (payoff(p, k) >= continuation) stop_level[static_cast<size_t>(p)] = k;
        }
    }
    double level0_continuation = 0.0;
    long level0_count = 0;
    for (long p = 0; p < train; ++p) {
        if (exit_level[static_cast<size_t>(p)] == 0) continue;
        level0_continuation += payoff(p, stop_level[static_cast<size_t>(p)]);
        ++level0_count;
    }
    if (level0_count > 0) level0_continuation /= static_cast<double>(level0_count);

    // price the policy on the held-out half
    double mean = 0.0, m2 = 0.0;
    long count = 0;
    for (long p = train; p < paths.paths; ++p) {
        int stop = exit_level[static_cast<size_t>(p)];
        for (int k = 0; k < exit_level[static_cast<size_t>(p)]; ++k) {
            if (k == 0) {
                if (level0_count > 0 && payoff(p, 0) >= level0_continuation) {
                    stop = 0;
                    break;
                }
                continue;
            }
            if (betas[static_cast<size_t>(k)].size() == 0) continue;
            fill_features(Vec(paths.state(p, k)), basis_degree, feat);
            const double continuation = (feat * betas[static_cast<size_t>(k)]).value();
            if (payoff(p, k) >= continuation) {
                stop = k;
                break;
            }
        }
        const double v = payoff(p, stop);
        ++count;
        const double d = v - mean;
        mean += d / static_cast<double>(count);
        m2 += d * (v - mean);
    }
    LsmcResult res;
    res.value = mean;
    res.stderr_ = eval > 1 ? std::sqrt(m2 / static_cast<double>(eval - 1) /
                                       static_cast<double>(eval))
                           : 0.0;
    res.basis_size = nb;
    return res;
}

std::string StopStats::csv() const {
    std::string out = "value_mean,value_stderr,paths,exit_fraction,mean_stop_time\n";
    CsvRow row;
    row.add(value_mean).add(value_stderr).add(paths).add(exit_fraction).add(mean_stop_time);
    out += row.str();
    out += '\n';
    return out;
}

void StoppingRule::save_binary(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("rule: cannot open " + path + " for writing");
    const uint32_t magic = 0x52534C53u; // "SLSR"
    auto w32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto wd = [&](double v) { f.write(reinterpret_cast<const char*>(&v), 8); };
    w32(magic);
    w32(1u);
    w32(static_cast<uint32_t>(field_->meta().n));
    wd(field_->meta().radius);
    wd(field_->meta().alpha);
    w32(static_cast<uint32_t>(field_->meta().time_steps));
    wd(delta_);
    w32(static_cast<uint32_t>(mask_.size()));
    f.write(reinterpret_cast<const char*>(mask_.data()),
            static_cast<std::streamsize>(mask_.size()));
}

} // namespace stoplab
