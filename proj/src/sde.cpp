#include "stoplab/sde.hpp"

#include <Eigen/LU>
#include <cmath>
#include <fstream>

#include "stoplab/csv.hpp"
#include "stoplab/rng.hpp"

namespace stoplab {

double epsilon_schedule(int n, EpsilonRule rule, double scale) {
    if (n < 1) throw InputError("schedule: level must be >= 1");
    if (!(scale > 0.0)) throw InputError("schedule: scale must be positive");
    switch (rule) {
        case EpsilonRule::Inverse: return scale / static_cast<double>(n);
        case EpsilonRule::InverseLog:
            return scale / (std::sqrt(static_cast<double>(n)) * std::log(n + 1.0));
    }
    return 0.0;
}

void validate_schedule(const std::vector<double>& eps_by_level) {
    double prev = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < eps_by_level.size(); ++i) {
        const double v = std::sqrt(static_cast<double>(i + 1)) * eps_by_level[i];
        if (v >= prev)
            throw InputError(
                "schedule: sqrt(n)*eps_n must decrease strictly, violated at level " +
                std::to_string(i + 1));
        prev = v;
    }
}

Vec projected_start(const Vec& x0, int n) {
    if (x0.size() < n)
        throw DimensionError("start point has fewer coordinates than the rung dimension");
    return x0.head(n);
}

std::vector<double> schedule_resolvent_norms(const std::vector<double>& eps_by_level,
                                             const CovarianceSpec& cov) {
    std::vector<double> out;
    const size_t n = std::min(eps_by_level.size(), static_cast<size_t>(cov.master_dim()));
    for (size_t i = 0; i < n; ++i)
        out.push_back(eps_by_level[i] / cov.lambda(static_cast<int>(i)));
    return out;
}

FiniteModel make_model(const ProblemSpec& problem, double alpha, int n, double epsilon_n,
                       bool implicit_drift) {
    return FiniteModel{
        std::isinf(alpha) ? exact_drift(problem.op, n) : yosida(problem.op, alpha, n),
        problem.diffusion,
        problem.cov,
        Vec::Constant(n, epsilon_n),
        epsilon_n,
        n,
        alpha,
        problem.horizon,
        implicit_drift};
}

Vec euler_step(const FiniteModel& model, const Vec& x, double dt, double dw0,
               const Vec& dwch) {
    Vec out(model.n), scratch(model.n);
    euler_step_into(model, x, dt, dw0, dwch, out, scratch);
    return out;
}

void euler_step_into(const FiniteModel& model, const Vec& x, double dt, double dw0,
                     const Vec& dwch, Vec& out, Vec& scratch) {
    model.diffusion.sigma_into(x, model.cov, scratch);
    out.resize(model.n);
    for (int i = 0; i < model.n; ++i)
        out[i] = x[i] + scratch[i] * dw0 + model.channel_weights[i] * dwch[i];
    if (model.implicit_drift) {
        const Mat m = Mat::Identity(model.n, model.n) - dt * model.drift.matrix;
        scratch = m.partialPivLu().solve(out);
        out = scratch;
        return;
    }
    scratch.noalias() = model.drift.matrix * x;
    out += dt * scratch;
}

namespace {

// Channel addressing inside the counter-based stream: 0 is W^0, 1..n the
// auxiliary channels. Shared across rungs so coupling is automatic.
inline double dw0_draw(uint64_t seed, long path, int step) {
    return normal_draw(seed, static_cast<uint64_t>(path), static_cast<uint32_t>(step), 0);
}
inline double dch_draw(uint64_t seed, long path, int step, int channel) {
    return normal_draw(seed, static_cast<uint64_t>(path), static_cast<uint32_t>(step),
                       static_cast<uint32_t>(channel) + 1);
}

} // namespace

PathBundle simulate_paths(const FiniteModel& model, const Vec& x0, double t0, int steps,
                          long n_paths, uint64_t seed, bool retain_increments) {
    if (steps < 1 || n_paths < 1)
        throw InputError("simulate: need at least one step and one path");
    PathBundle b;
    b.n = model.n;
    b.paths = n_paths;
    b.steps = steps;
    b.t0 = t0;
    b.seed = seed;
    b.alpha = model.alpha;
    b.x0 = projected_start(x0, model.n);
    b.has_increments = retain_increments;
    const double dt = (model.horizon - t0) / steps;
    if (!(dt > 0.0)) throw InputError("simulate: start time beyond the horizon");
    const double sq = std::sqrt(dt);
    b.times.resize(static_cast<size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) b.times[static_cast<size_t>(k)] = t0 + k * dt;
    b.states.assign(static_cast<size_t>(n_paths) * (static_cast<size_t>(steps) + 1) *
                        static_cast<size_t>(model.n),
                    0.0);
    if (retain_increments) {
        b.dw0.assign(static_cast<size_t>(n_paths) * static_cast<size_t>(steps), 0.0);
        b.dwch.assign(static_cast<size_t>(n_paths) * static_cast<size_t>(steps) *
                          static_cast<size_t>(model.n),
                      0.0);
    }
    Vec x(model.n), dwch(model.n), xnext(model.n), scratch(model.n);
    for (long p = 0; p < n_paths; ++p) {
        x = b.x0;
        auto write_state = [&](int k) {
            double* dst = b.states.data() +
                          (static_cast<size_t>(p) * (static_cast<size_t>(steps) + 1) +
                           static_cast<size_t>(k)) *
                              static_cast<size_t>(model.n);
            for (int i = 0; i < model.n; ++i) dst[i] = x[i];
        };
        write_state(0);
        for (int k = 0; k < steps; ++k) {
            const double dw0 = sq * dw0_draw(seed, p, k);
            for (int i = 0; i < model.n; ++i) dwch[i] = sq * dch_draw(seed, p, k, i);
            euler_step_into(model, x, dt, dw0, dwch, xnext, scratch);
            x.swap(xnext);
            if (!x.allFinite())
                throw SimulationError("simulate: state non-finite (blow-up)", p, k + 1);
            write_state(k + 1);
            if (retain_increments) {
                b.dw0[static_cast<size_t>(p) * static_cast<size_t>(steps) +
                      static_cast<size_t>(k)] = dw0;
                double* dst = b.dwch.data() + (static_cast<size_t>(p) * static_cast<size_t>(steps) +
                                               static_cast<size_t>(k)) *
                                                  static_cast<size_t>(model.n);
                for (int i = 0; i < model.n; ++i) dst[i] = dwch[i];
            }
        }
    }
    return b;
}

namespace {

struct SupDiffAccumulator {
    double mean = 0.0, m2 = 0.0;
    long count = 0;
    void add(double v) {
        ++count;
        const double d = v - mean;
        mean += d / static_cast<double>(count);
        m2 += d * (v - mean);
    }
    double stderr_() const {
        return count > 1 ? std::sqrt(m2 / static_cast<double>(count - 1) /
                                     static_cast<double>(count))
                         : 0.0;
    }
};

// Simulates two rungs on shared noise and accumulates sup-norm differences.
// The wide rung may have more coordinates; missing ones compare against zero.
void coupled_sup_error(const FiniteModel& a, const FiniteModel& b, const Vec& x0, long paths,
                       int steps, uint64_t seed, SupDiffAccumulator& acc) {
    const int nw = std::max(a.n, b.n);
    const Vec x0_a = projected_start(x0, a.n);
    const Vec x0_b = projected_start(x0, b.n);
    const double dt = a.horizon / steps;
    const double sq = std::sqrt(dt);
    Vec xa(a.n), xb(b.n), da(a.n), db(b.n), tmp(std::max(a.n, b.n)), scratch(std::max(a.n, b.n));
    for (long p = 0; p < paths; ++p) {
        xa = x0_a;
        xb = x0_b;
        double sup = 0.0;
        for (int k = 0; k < steps; ++k) {
            const double dw0 = sq * dw0_draw(seed, p, k);
            for (int i = 0; i < a.n; ++i) da[i] = sq * dch_draw(seed, p, k, i);
            for (int i = 0; i < b.n; ++i) db[i] = sq * dch_draw(seed, p, k, i);
            euler_step_into(a, xa, dt, dw0, da, tmp, scratch);
            xa.swap(tmp);
            euler_step_into(b, xb, dt, dw0, db, tmp, scratch);
            xb.swap(tmp);
            if (!xa.allFinite() || !xb.allFinite())
                throw SimulationError("study: coupled state non-finite", p, k + 1);
            double d2 = 0.0;
            for (int i = 0; i < nw; ++i) {
                const double va = i < a.n ? xa[i] : 0.0;
                const double vb = i < b.n ? xb[i] : 0.0;
                d2 += (va - vb) * (va - vb);
            }
            sup = std::max(sup, d2);
        }
        acc.add(sup);
    }
}

} // namespace

ConvergenceReport yosida_convergence_study(const ProblemSpec& problem,
                                           const std::vector<double>& alphas, int n,
                                           double epsilon_n, const Vec& x0, long paths,
                                           int steps, uint64_t seed) {
    if (problem.op.kind() != OperatorKind::Diagonal)
        throw InputError("study: exact-drift reference requires a diagonal operator");
    ConvergenceReport r;
    r.study = "yosida";
    r.paths = paths;
    r.steps = steps;
    r.seed = seed;
    const FiniteModel ref =
        make_model(problem, std::numeric_limits<double>::infinity(), n, epsilon_n);
    for (const double alpha : alphas) {
        const FiniteModel rung = make_model(problem, alpha, n, epsilon_n);
        SupDiffAccumulator acc;
        coupled_sup_error(rung, ref, x0, paths, steps, seed, acc);
        r.parameter.push_back(alpha);
        r.error_mean.push_back(acc.mean);
        r.error_stderr.push_back(acc.stderr_());
    }
    return r;
}

ConvergenceReport galerkin_convergence_study(const ProblemSpec& problem,
                                             const std::vector<int>& ns, double alpha,
                                             EpsilonRule rule, double eps_scale, const Vec& x0,
                                             long paths, int steps, uint64_t seed) {
    const int n_master = problem.cov.master_dim();
    for (const int n : ns)
        if (n > n_master) throw DimensionError("study: rung above the master truncation");
    ConvergenceReport r;
    r.study = "galerkin";
    r.paths = paths;
    r.steps = steps;
    r.seed = seed;
    const FiniteModel ref =
        make_model(problem, alpha, n_master, epsilon_schedule(n_master, rule, eps_scale));
    for (const int n : ns) {
        const FiniteModel rung = make_model(problem, alpha, n, epsilon_schedule(n, rule, eps_scale));
        SupDiffAccumulator acc;
        coupled_sup_error(rung, ref, x0, paths, steps, seed, acc);
        r.parameter.push_back(n);
        r.error_mean.push_back(acc.mean);
        r.error_stderr.push_back(acc.stderr_());
    }
    return r;
}

double fit_lipschitz_constant(const FiniteModel& model, const Vec& x, const Vec& y,
                              long paths, int steps, uint64_t seed) {
    const Vec xs = projected_start(x, model.n);
    const Vec ys = projected_start(y, model.n);
    const double dist = (xs - ys).norm();
    if (!(dist > 0.0)) throw InputError("lipschitz fit: start points coincide");
    const double dt = model.horizon / steps;
    const double sq = std::sqrt(dt);
    Vec xa(model.n), xb(model.n), dw(model.n), tmp(model.n), scratch(model.n);
    double mean = 0.0;
    for (long p = 0; p < paths; ++p) {
        xa = xs;
        xb = ys;
        double sup = (xa - xb).norm();
        for (int k = 0; k < steps; ++k) {
            const double dw0 = sq * dw0_draw(seed, p, k);
            for (int i = 0; i < model.n; ++i) dw[i] = sq * dch_draw(seed, p, k, i);
            euler_step_into(model, xa, dt, dw0, dw, tmp, scratch);
            xa.swap(tmp);
            euler_step_into(model, xb, dt, dw0, dw, tmp, scratch);
            xb.swap(tmp);
            sup = std::max(sup, (xa - xb).norm());
        }
        mean += sup;
    }
    return mean / static_cast<double>(paths) / dist;
}

std::vector<double> strong_order_sequence(const FiniteModel& model, const Vec& x0,
                                          int coarse_steps, int levels, long paths,
                                          uint64_t seed) {
    if (levels < 2) throw InputError("strong order: need at least two levels");
    std::vector<double> errs;
    for (int lvl = 0; lvl < levels; ++lvl) {
        const int nc = coarse_steps << lvl;
        const int nf = nc * 2;
        const double dtc = model.horizon / nc;
        const double dtf = model.horizon / nf;
        const double sqf = std::sqrt(dtf);
        Vec xc(model.n), xf(model.n), dwf(model.n), dwc(model.n);
        double mean = 0.0;
        for (long p = 0; p < paths; ++p) {
            xc = projected_start(x0, model.n);
            xf = xc;
            for (int k = 0; k < nc; ++k) {
                double dw0c = 0.0;
                dwc.setZero();
                for (int half = 0; half < 2; ++half) {
                    const int kf = 2 * k + half;
                    const double dw0f = sqf * dw0_draw(seed + static_cast<uint64_t>(lvl), p, kf);
                    for (int i = 0; i < model.n; ++i)
                        dwf[i] = sqf * dch_draw(seed + static_cast<uint64_t>(lvl), p, kf, i);
                    xf = euler_step(model, xf, dtf, dw0f, dwf);
                    dw0c += dw0f;
                    dwc += dwf;
                }
                xc = euler_step(model, xc, dtc, dw0c, dwc);
            }
            mean += (xc - xf).norm();
        }
        errs.push_back(mean / static_cast<double>(paths));
    }
    std::vector<double> orders;
    for (size_t i = 0; i + 1 < errs.size(); ++i)
        orders.push_back(std::log2(errs[i] / errs[i + 1]));
    return orders;
}

double sup_moment(const FiniteModel& model, const Vec& x0, double p, long paths, int steps,
                  uint64_t seed) {
    const double dt = model.horizon / steps;
    const double sq = std::sqrt(dt);
    Vec x(model.n), dw(model.n), tmp(model.n), scratch(model.n);
    double mean = 0.0;
    for (long q = 0; q < paths; ++q) {
        x = projected_start(x0, model.n);
        double sup = x.norm();
        for (int k = 0; k < steps; ++k) {
            const double dw0 = sq * dw0_draw(seed, q, k);
            for (int i = 0; i < model.n; ++i) dw[i] = sq * dch_draw(seed, q, k, i);
            euler_step_into(model, x, dt, dw0, dw, tmp, scratch);
            x.swap(tmp);
            sup = std::max(sup, x.norm());
        }
        mean += std::pow(sup, p);
    }
    return mean / static_cast<double>(paths);
}

std::string ConvergenceReport::csv() const {
    std::string out = "rung,param,error_mean,error_stderr,paths,steps,seed\n";
    for (size_t i = 0; i < parameter.size(); ++i) {
        CsvRow row;
        row.add(study).add(parameter[i]).add(error_mean[i]).add(error_stderr[i]).add(paths).add(
            steps).add(seed);
        out += row.str();
        out += '\n';
    }
    return out;
}

namespace {
constexpr uint32_t kPathMagic = 0x42504C53u; // "SLPB"
}

void save_paths_binary(const PathBundle& b, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("paths: cannot open " + path + " for writing");
    auto w32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto w64 = [&](uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); };
    auto wd = [&](double v) { f.write(reinterpret_cast<const char*>(&v), 8); };
    w32(kPathMagic);
    w32(1u);
    w64(b.seed);
    w32(static_cast<uint32_t>(b.n));
    w32(static_cast<uint32_t>(b.paths));
    w32(static_cast<uint32_t>(b.steps));
    w32(b.has_increments ? 1u : 0u);
    wd(b.t0);
    wd(b.times.back());
    wd(b.alpha);
    for (int i = 0; i < b.n; ++i) wd(b.x0[i]);
    f.write(reinterpret_cast<const char*>(b.states.data()),
            static_cast<std::streamsize>(b.states.size() * sizeof(double)));
    if (b.has_increments) {
        f.write(reinterpret_cast<const char*>(b.dw0.data()),
                static_cast<std::streamsize>(b.dw0.size() * sizeof(double)));
        f.write(reinterpret_cast<const char*>(b.dwch.data()),
                static_cast<std::streamsize>(b.dwch.size() * sizeof(double)));
    }
}

PathBundle load_paths_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("paths: cannot open " + path);
    auto r32 = [&]() { uint32_t v; f.read(reinterpret_cast<char*>(&v), 4); return v; };
    auto r64 = [&]() { uint64_t v; f.read(reinterpret_cast<char*>(&v), 8); return v; };
    auto rd = [&]() { double v; f.read(reinterpret_cast<char*>(&v), 8); return v; };
    if (r32() != kPathMagic) throw InputError("paths: bad magic in " + path);
    if (r32() != 1u) throw InputError("paths: unsupported version in " + path);
    PathBundle b;
    b.seed = r64();
    b.n = static_cast<int>(r32());
    b.paths = static_cast<long>(r32());
    b.steps = static_cast<int>(r32());
    b.has_increments = r32() != 0;
    b.t0 = rd();
    const double tend = rd();
    b.alpha = rd();
    b.x0.resize(b.n);
    for (int i = 0; i < b.n; ++i) b.x0[i] = rd();
    b.times.resize(static_cast<size_t>(b.steps) + 1);
    const double dt = (tend - b.t0) / b.steps;
    for (int k = 0; k <= b.steps; ++k) b.times[static_cast<size_t>(k)] = b.t0 + k * dt;
    b.states.resize(static_cast<size_t>(b.paths) * (static_cast<size_t>(b.steps) + 1) *
                    static_cast<size_t>(b.n));
    f.read(reinterpret_cast<char*>(b.states.data()),
           static_cast<std::streamsize>(b.states.size() * sizeof(double)));
    if (b.has_increments) {
        b.dw0.resize(static_cast<size_t>(b.paths) * static_cast<size_t>(b.steps));
        b.dwch.resize(b.dw0.size() * static_cast<size_t>(b.n));
        f.read(reinterpret_cast<char*>(b.dw0.data()),
               static_cast<std::streamsize>(b.dw0.size() * sizeof(double)));
        f.read(reinterpret_cast<char*>(b.dwch.data()),
               static_cast<std::streamsize>(b.dwch.size() * sizeof(double)));
    }
    if (!f) throw InputError("paths: truncated file " + path);
    return b;
}

} // namespace stoplab
