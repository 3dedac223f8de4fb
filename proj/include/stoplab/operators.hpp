#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "stoplab/gains.hpp"
#include "stoplab/measure.hpp"

namespace stoplab {

enum class OperatorKind { Diagonal, Dense };

/// Drift operator on the master truncation, either diagonal entries a_i or a
/// full matrix of basis coefficients.
class OperatorSpec {
public:
    static OperatorSpec diagonal(std::vector<double> entries);
    static OperatorSpec dense(Mat entries);

    OperatorKind kind() const { return kind_; }
    int master_dim() const;
    const std::vector<double>& diag() const;
    const Mat& matrix() const;

    /// Dissipativity check used by the symmetric special case: diagonal with
    /// all entries <= -m < 0. Returns the spectral gap m when it holds.
    std::optional<double> dissipative_gap() const;

private:
    OperatorKind kind_ = OperatorKind::Diagonal;
    std::vector<double> diag_;
    Mat dense_;
};

enum class DiffusionFamily { ConstantGamma, SaturatedAffine };

/// Bounded diffusion loading gamma with bounded derivative; sigma(x) = Q gamma(x).
class DiffusionSpec {
public:
    static DiffusionSpec constant_gamma(Vec gamma);
    /// gamma_i(x) = base_i + amp_i * tanh(slope_i * x_i), coordinatewise.
    static DiffusionSpec saturated_affine(Vec base, Vec amp, Vec slope);

    DiffusionFamily family() const { return family_; }
    int master_dim() const { return static_cast<int>(base_.size()); }

    Vec gamma(const Vec& x) const;
    /// Jacobian of gamma; diagonal for both built-in families.
    Vec dgamma_diag(const Vec& x) const;

    Vec sigma(const Vec& x, const CovarianceSpec& cov) const;
    void sigma_into(const Vec& x, const CovarianceSpec& cov, Vec& out) const;
    Vec dsigma_diag(const Vec& x, const CovarianceSpec& cov) const;

    double gamma_bound() const { return gamma_bound_; }
    double dgamma_bound() const { return dgamma_bound_; }

private:
    DiffusionFamily family_ = DiffusionFamily::ConstantGamma;
    Vec base_, amp_, slope_;
    double gamma_bound_ = 0.0, dgamma_bound_ = 0.0;
};

/// Bounded drift A_{alpha,n} = P_n [alpha A (alpha I - A)^{-1}] P_n. The exact
/// flag marks the alpha -> infinity member used as a reference rung.
struct YosidaMatrix {
    double alpha = 0.0;
    Mat matrix;
    OperatorKind source_kind = OperatorKind::Diagonal;
    bool exact = false;
    int dim() const { return static_cast<int>(matrix.rows()); }
    Vec apply(const Vec& x) const { return matrix * x; }
};

YosidaMatrix yosida(const OperatorSpec& op, double alpha, int n,
                    double condition_threshold = 1e12);
YosidaMatrix exact_drift(const OperatorSpec& op, int n);

GainSpec project_gain(const GainSpec& gain, int n);

/// Coefficients of the reduced generator: B(x) = sigma sigma^T + diag(w^2) and
/// the measure-weighted first-order vector Cbar(x). Channel weights default to
/// epsilon_n on every auxiliary channel.
class GeneratorCoefficients {
public:
    GeneratorCoefficients(YosidaMatrix drift, DiffusionSpec diffusion, CovarianceSpec cov,
                          double epsilon_n);
    GeneratorCoefficients(YosidaMatrix drift, DiffusionSpec diffusion, CovarianceSpec cov,
                          Vec channel_weights);
    /// Free-form coefficients for diagnostics and tests.
    GeneratorCoefficients(int dim, std::function<Mat(const Vec&)> b,
                          std::function<Vec(const Vec&)> cbar);

    int dim() const { return dim_; }
    double epsilon() const { return epsilon_; }
    const Vec& channel_weights() const { return weights_; }
    const YosidaMatrix& drift() const;
    const CovarianceSpec& cov() const;
    const DiffusionSpec& diffusion() const;

    Vec sigma(const Vec& x) const;
    Mat B(const Vec& x) const;
    Vec Cbar(const Vec& x) const;
    bool has_closed_form() const { return closed_form_; }

private:
    int dim_ = 0;
    double epsilon_ = 0.0;
    Vec weights_;
    bool closed_form_ = false;
    std::optional<YosidaMatrix> drift_;
    std::optional<DiffusionSpec> diffusion_;
    std::optional<CovarianceSpec> cov_;
    std::function<Mat(const Vec&)> b_fn_;
    std::function<Vec(const Vec&)> cbar_fn_;
};

GeneratorCoefficients generator_coeffs(const YosidaMatrix& drift, const DiffusionSpec& diff,
                                       const CovarianceSpec& cov, double epsilon_n);

/// Forcing f(t,x) = dTheta/dt + L Theta assembled from the gain's closed-form
/// derivatives and the generator coefficients.
class ForcingField {
public:
    ForcingField(GainSpec projected_gain, GeneratorCoefficients coeffs);

    double operator()(double t, const Vec& x) const;
    /// Triangle-inequality envelope for |f(t,x)|.
    double bound_at(const Vec& x) const;

    const GainSpec& gain() const { return gain_; }
    const GeneratorCoefficients& coeffs() const { return coeffs_; }

private:
    GainSpec gain_;
    GeneratorCoefficients coeffs_;
};

ForcingField forcing(const GainSpec& gain, const GeneratorCoefficients& coeffs);

/// Scalar field with closed-form derivatives, the test currency for
/// quadrature-level identities.
struct DifferentiableField {
    ScalarField value;
    VectorField grad;
    std::function<Mat(const Vec&)> hess;
};

/// Generator applied pointwise: L u = 1/2 tr[B D^2 u] + <A_{alpha,n} x, D u>.
double generator_apply(const GeneratorCoefficients& coeffs, const YosidaMatrix& drift,
                       const DifferentiableField& u, const Vec& x);

/// Measure-weighted bilinear form
///   a(u,w) = int 1/2 <B Du, Dw> dmu + int <Cbar, Du> w dmu.
double bilinear_form(const GeneratorCoefficients& coeffs, const DifferentiableField& u,
                     const DifferentiableField& w, const GaussianMeasure& mu,
                     const QuadratureSpec& quad);

struct TraceDiagnostics {
    std::vector<int> levels;
    std::vector<double> tr_q;      // partial sums of Tr Q
    std::vector<double> tr_aqa;    // partial sums of Tr[A Q A^*]
    std::vector<double> tail_ratio; // last increment over current sum
    bool divergence_flag = false;
    std::string csv() const;
};

TraceDiagnostics trace_diagnostics(const OperatorSpec& op, const CovarianceSpec& cov);

} // namespace stoplab
