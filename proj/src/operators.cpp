#include "stoplab/operators.hpp"

#include <Eigen/LU>
#include <cmath>

#include "stoplab/csv.hpp"

namespace stoplab {

OperatorSpec OperatorSpec::diagonal(std::vector<double> entries) {
    if (entries.empty()) throw InputError("operator: diagonal entry list is empty");
    OperatorSpec op;
    op.kind_ = OperatorKind::Diagonal;
    op.diag_ = std::move(entries);
    return op;
}

OperatorSpec OperatorSpec::dense(Mat entries) {
    if (entries.rows() == 0 || entries.rows() != entries.cols())
        throw InputError("operator: dense matrix must be square and non-empty");
    OperatorSpec op;
    op.kind_ = OperatorKind::Dense;
    op.dense_ = std::move(entries);
    return op;
}

int OperatorSpec::master_dim() const {
    return kind_ == OperatorKind::Diagonal ? static_cast<int>(diag_.size())
                                           : static_cast<int>(dense_.rows());
}

const std::vector<double>& OperatorSpec::diag() const {
    if (kind_ != OperatorKind::Diagonal)
        throw InputError("operator: diagonal entries requested from dense operator");
    return diag_;
}

const Mat& OperatorSpec::matrix() const {
    if (kind_ != OperatorKind::Dense)
        throw InputError("operator: dense matrix requested from diagonal operator");
    return dense_;
}

std::optional<double> OperatorSpec::dissipative_gap() const {
    if (kind_ != OperatorKind::Diagonal) return std::nullopt;
    double m = std::numeric_limits<double>::infinity();
    for (const double a : diag_) {
        if (!(a < 0.0)) return std::nullopt;
        m = std::min(m, -a);
    }
    return m;
}

DiffusionSpec DiffusionSpec::constant_gamma(Vec gamma) {
    if (gamma.size() < 1) throw InputError("diffusion: gamma vector is empty");
    DiffusionSpec d;
    d.family_ = DiffusionFamily::ConstantGamma;
    d.base_ = std::move(gamma);
    d.amp_ = Vec::Zero(d.base_.size());
    d.slope_ = Vec::Zero(d.base_.size());
    d.gamma_bound_ = d.base_.lpNorm<Eigen::Infinity>();
    d.dgamma_bound_ = 0.0;
    return d;
}

DiffusionSpec DiffusionSpec::saturated_affine(Vec base, Vec amp, Vec slope) {
    if (base.size() < 1 || base.size() != amp.size() || base.size() != slope.size())
        throw InputError("diffusion: base/amp/slope sizes disagree");
    DiffusionSpec d;
    d.family_ = DiffusionFamily::SaturatedAffine;
    d.base_ = std::move(base);
    d.amp_ = std::move(amp);
    d.slope_ = std::move(slope);
    d.gamma_bound_ = (d.base_.cwiseAbs() + d.amp_.cwiseAbs()).maxCoeff();
    d.dgamma_bound_ = (d.amp_.cwiseAbs().cwiseProduct(d.slope_.cwiseAbs())).maxCoeff();
    return d;
}

Vec DiffusionSpec::gamma(const Vec& x) const {
    const int n = static_cast<int>(x.size());
    Vec g(n);
    for (int i = 0; i < n; ++i) {
        if (i >= master_dim()) {
            g[i] = 0.0;
            continue;
        }
        g[i] = family_ == DiffusionFamily::ConstantGamma
                   ? base_[i]
                   : base_[i] + amp_[i] * std::tanh(slope_[i] * x[i]);
    }
    return g;
}

Vec DiffusionSpec::dgamma_diag(const Vec& x) const {
    const int n = static_cast<int>(x.size());
    Vec g = Vec::Zero(n);
    if (family_ == DiffusionFamily::ConstantGamma) return g;
    for (int i = 0; i < n && i < master_dim(); ++i) {
        const double th = std::tanh(slope_[i] * x[i]);
        g[i] = amp_[i] * slope_[i] * (1.0 - th * th);
    }
    return g;
}

Vec DiffusionSpec::sigma(const Vec& x, const CovarianceSpec& cov) const {
    Vec s = gamma(x);
    for (int i = 0; i < s.size(); ++i) s[i] *= cov.lambda(i);
    return s;
}

void DiffusionSpec::sigma_into(const Vec& x, const CovarianceSpec& cov, Vec& out) const {
    const int n = static_cast<int>(x.size());
    out.resize(n);
    for (int i = 0; i < n; ++i) {
        if (i >= master_dim()) {
            out[i] = 0.0;
            continue;
        }
        const double g = family_ == DiffusionFamily::ConstantGamma
                             ? base_[i]
                             : base_[i] + amp_[i] * std::tanh(slope_[i] * x[i]);
        out[i] = cov.lambda(i) * g;
    }
}

Vec DiffusionSpec::dsigma_diag(const Vec& x, const CovarianceSpec& cov) const {
    Vec s = dgamma_diag(x);
    for (int i = 0; i < s.size(); ++i) s[i] *= cov.lambda(i);
    return s;
}

YosidaMatrix yosida(const OperatorSpec& op, double alpha, int n, double condition_threshold) {
    if (!(alpha > 0.0)) throw InputError("yosida: alpha must be positive");
    if (n < 1 || n > op.master_dim())
        throw DimensionError("yosida: dimension outside master truncation");
    YosidaMatrix y;
    y.alpha = alpha;
    y.source_kind = op.kind();
    if (op.kind() == OperatorKind::Diagonal) {
        y.matrix = Mat::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            const double a = op.diag()[static_cast<size_t>(i)];
            y.matrix(i, i) = alpha * a / (alpha - a);
        }
        return y;
    }
    const int m = op.master_dim();
    const Mat resolvent_arg = alpha * Mat::Identity(m, m) - op.matrix();
    Eigen::FullPivLU<Mat> lu(resolvent_arg);
    const double rcond = lu.rcond();
    if (!lu.isInvertible() || rcond < 1.0 / condition_threshold)
        throw SolverError("yosida: resolvent near-singular at alpha = " + std::to_string(alpha),
                          0, rcond);
    const Mat full = alpha * op.matrix() * lu.inverse();
    y.matrix = full.topLeftCorner(n, n);
    return y;
}

YosidaMatrix exact_drift(const OperatorSpec& op, int n) {
    if (n < 1 || n > op.master_dim())
        throw DimensionError("drift: dimension outside master truncation");
    YosidaMatrix y;
    y.alpha = std::numeric_limits<double>::infinity();
    y.exact = true;
    y.source_kind = op.kind();
    if (op.kind() == OperatorKind::Diagonal) {
        y.matrix = Mat::Zero(n, n);
        for (int i = 0; i < n; ++i) y.matrix(i, i) = op.diag()[static_cast<size_t>(i)];
    } else {
        y.matrix = op.matrix().topLeftCorner(n, n);
    }
    return y;
}

GainSpec project_gain(const GainSpec& gain, int n) { return gain.project(n); }

GeneratorCoefficients::GeneratorCoefficients(YosidaMatrix drift, DiffusionSpec diffusion,
                                             CovarianceSpec cov, double epsilon_n)
    : GeneratorCoefficients(drift, std::move(diffusion), std::move(cov),
                            Vec::Constant(drift.dim(), epsilon_n)) {}

GeneratorCoefficients::GeneratorCoefficients(YosidaMatrix drift, DiffusionSpec diffusion,
                                             CovarianceSpec cov, Vec channel_weights)
    : dim_(drift.dim()),
      weights_(std::move(channel_weights)),
      closed_form_(true),
      drift_(std::move(drift)),
      diffusion_(std::move(diffusion)),
      cov_(std::move(cov)) {
    if (weights_.size() != dim_)
        throw DimensionError("generator: channel weight count must equal the dimension");
    for (int i = 0; i < dim_; ++i)
        if (weights_[i] < 0.0) throw InputError("generator: channel weights must be >= 0");
    epsilon_ = dim_ > 0 ? weights_.maxCoeff() : 0.0;
    if (dim_ > cov_->master_dim())
        throw DimensionError("generator: dimension exceeds covariance truncation");
}

GeneratorCoefficients::GeneratorCoefficients(int dim, std::function<Mat(const Vec&)> b,
                                             std::function<Vec(const Vec&)> cbar)
    : dim_(dim),
      weights_(Vec::Zero(dim)),
      b_fn_(std::move(b)),
      cbar_fn_(std::move(cbar)) {}

const YosidaMatrix& GeneratorCoefficients::drift() const {
    if (!drift_) throw InputError("generator: free-form coefficients carry no drift");
    return *drift_;
}

const CovarianceSpec& GeneratorCoefficients::cov() const {
    if (!cov_) throw InputError("generator: free-form coefficients carry no covariance");
    return *cov_;
}

const DiffusionSpec& GeneratorCoefficients::diffusion() const {
    if (!diffusion_) throw InputError("generator: free-form coefficients carry no diffusion");
    return *diffusion_;
}

Vec GeneratorCoefficients::sigma(const Vec& x) const {
    if (!closed_form_) return Vec::Zero(dim_);
    return diffusion_->sigma(x, *cov_);
}

Mat GeneratorCoefficients::B(const Vec& x) const {
    if (!closed_form_) return b_fn_(x);
    const Vec s = sigma(x);
    Mat b = s * s.transpose();
    for (int i = 0; i < dim_; ++i) b(i, i) += weights_[i] * weights_[i];
    return b;
}

Vec GeneratorCoefficients::Cbar(const Vec& x) const {
    if (!closed_form_) return cbar_fn_(x);
    const Vec s = sigma(x);
    const Vec ds = diffusion_->dsigma_diag(x, *cov_);
    // Dsigma is diagonal for the built-in families, so Tr[Dsigma] sigma and
    // Dsigma . sigma collapse to coordinatewise products.
    const double trds = ds.sum();
    double sqx = 0.0; // <sigma, Q_n^{-1} x>
    for (int j = 0; j < dim_; ++j) sqx += s[j] * x[j] / cov_->lambda(j);
    Vec c(dim_);
    for (int i = 0; i < dim_; ++i) {
        c[i] = trds * s[i] + ds[i] * s[i] - s[i] * sqx -
               weights_[i] * weights_[i] * x[i] / cov_->lambda(i);
    }
    c -= 2.0 * drift_->apply(x);
    return 0.5 * c;
}

GeneratorCoefficients generator_coeffs(const YosidaMatrix& drift, const DiffusionSpec& diff,
                                       const CovarianceSpec& cov, double epsilon_n) {
    if (epsilon_n < 0.0) throw InputError("generator: epsilon_n must be >= 0");
    return GeneratorCoefficients(drift, diff, cov, epsilon_n);
}

ForcingField::ForcingField(GainSpec projected_gain, GeneratorCoefficients coeffs)
    : gain_(std::move(projected_gain)), coeffs_(std::move(coeffs)) {
    if (!coeffs_.has_closed_form())
        throw InputError("forcing: requires closed-form generator coefficients");
}

double ForcingField::operator()(double t, const Vec& x) const {
    const double dt_part = gain_.time_slope(t, x);
    const Vec grad = gain_.gradient(t, x);
    const double drift_part = coeffs_.drift().apply(x).dot(grad);
    // D^2 Theta = curv * l l^T, so tr[B D^2 Theta] = curv * <B l, l>.
    const double curv = gain_.curvature(t, x);
    double second = 0.0;
    if (curv != 0.0) {
        const Vec s = coeffs_.sigma(x);
        const Vec& w = gain_.weights();
        const int m = static_cast<int>(std::min<Eigen::Index>(w.size(), x.size()));
        double sl = 0.0, ww = 0.0;
        for (int i = 0; i < m; ++i) {
            sl += s[i] * w[i];
            ww += coeffs_.channel_weights()[i] * coeffs_.channel_weights()[i] * w[i] * w[i];
        }
        second = 0.5 * curv * (sl * sl + ww);
    }
    return dt_part + second + drift_part;
}

double ForcingField::bound_at(const Vec& x) const {
    const Mat b = coeffs_.B(x);
    return gain_.lip_t() + 0.5 * b.trace() * gain_.hess_bound() +
           coeffs_.drift().apply(x).norm() * gain_.lip_x();
}

ForcingField forcing(const GainSpec& gain, const GeneratorCoefficients& coeffs) {
    return ForcingField(gain.project(coeffs.dim()), coeffs);
}

double generator_apply(const GeneratorCoefficients& coeffs, const YosidaMatrix& drift,
                       const DifferentiableField& u, const Vec& x) {
    const Mat b = coeffs.B(x);
    const Mat h = u.hess(x);
    return 0.5 * (b * h).trace() + drift.apply(x).dot(u.grad(x));
}

double bilinear_form(const GeneratorCoefficients& coeffs, const DifferentiableField& u,
                     const DifferentiableField& w, const GaussianMeasure& mu,
                     const QuadratureSpec& quad) {
    const auto integrand = [&](const Vec& x) {
        const Vec du = u.grad(x);
        const Vec dw = w.grad(x);
        return 0.5 * (coeffs.B(x) * du).dot(dw) + coeffs.Cbar(x).dot(du) * w.value(x);
    };
    return mu.integrate(integrand, quad).value;
}

TraceDiagnostics trace_diagnostics(const OperatorSpec& op, const CovarianceSpec& cov) {
    TraceDiagnostics d;
    const int n = std::min(op.master_dim(), cov.master_dim());
    double sq = 0.0, sa = 0.0;
    for (int level = 1; level <= n; ++level) {
        const int i = level - 1;
        sq += cov.lambda(i);
        double inc = 0.0;
        if (op.kind() == OperatorKind::Diagonal) {
            const double a = op.diag()[static_cast<size_t>(i)];
            inc = a * a * cov.lambda(i);
        } else {
            // Tr[A Q A^*] = sum_{i,j} lambda_j A_{ij}^2, accumulated by level.
            const Mat& a = op.matrix();
            for (int j = 0; j < level; ++j) {
                inc += cov.lambda(j) * a(i, j) * a(i, j);
                if (j < i) inc += cov.lambda(i) * a(j, i) * a(j, i);
            }
        }
        sa += inc;
        d.levels.push_back(level);
        d.tr_q.push_back(sq);
        d.tr_aqa.push_back(sa);
        d.tail_ratio.push_back(sa > 0.0 ? inc / sa : 0.0);
    }
    // Flag when the last increments stopped shrinking: partial sums trending
    // linearly instead of converging.
    const size_t m = d.levels.size();
    if (m >= 8) {
        const double head = d.tr_aqa[m / 2] - d.tr_aqa[m / 2 - 1];
        const double tail = d.tr_aqa[m - 1] - d.tr_aqa[m - 2];
        d.divergence_flag = tail > 0.5 * head && tail > 1e-12;
    }
    return d;
}

std::string TraceDiagnostics::csv() const {
    std::string out = "level,trQ_partial,trAQA_partial,tail_ratio,assumption_flag\n";
    for (size_t i = 0; i < levels.size(); ++i) {
        CsvRow row;
        row.add(levels[i]).add(tr_q[i]).add(tr_aqa[i]).add(tail_ratio[i]).add(
            divergence_flag ? "divergent" : "ok");
        out += row.str();
        out += '\n';
    }
    return out;
}

} // namespace stoplab
