#pragma once

#include "stoplab/common.hpp"

namespace stoplab {

enum class GainFamily { Constant, CappedPut, CappedCall };

/// Separable time factor phi(t) = a0 + a1*t, required non-negative on [0,T].
struct TimeFactor {
    double a0 = 1.0;
    double a1 = 0.0;
    double value(double t) const { return a0 + a1 * t; }
    double slope() const { return a1; }
};

/// Parametric gain Theta(t,x) = phi(t) * S(<l,x>). The spatial profile S is a
/// capped hinge with C^2 smoothing so closed-form first and second derivatives
/// exist everywhere; the declared bounds are computed from the parameters and
/// enforced at construction.
class GainSpec {
public:
    static GainSpec constant(double level, TimeFactor tf, double horizon);
    static GainSpec capped_put(Vec weights, double strike, double cap, double smoothing,
                               TimeFactor tf, double horizon);
    static GainSpec capped_call(Vec weights, double strike, double cap, double smoothing,
                                TimeFactor tf, double horizon);

    GainFamily family() const { return family_; }
    double horizon() const { return horizon_; }
    const Vec& weights() const { return weights_; }
    double strike() const { return strike_; }
    double cap() const { return cap_; }
    double smoothing() const { return smoothing_; }
    const TimeFactor& time_factor() const { return tf_; }

    /// Declared bounds: 0 <= Theta <= theta_bar, |D Theta| <= lip_x,
    /// |d Theta/dt| <= lip_t, |D^2 Theta| <= hess_bound.
    double theta_bar() const { return theta_bar_; }
    double lip_x() const { return lip_x_; }
    double lip_t() const { return lip_t_; }
    double hess_bound() const { return hess_bound_; }

    /// Evaluation accepts any point dimension; coordinates beyond the stored
    /// weight length contribute nothing.
    double value(double t, const Vec& x) const;
    /// Spatial part S(<l,x>) so Theta(t,x) = phi(t) * spatial_value(x).
    double spatial_value(const Vec& x) const { return profile(inner(x)); }
    Vec gradient(double t, const Vec& x) const;
    double time_slope(double t, const Vec& x) const;

    /// Scalar curvature c(t,x) with D^2 Theta = c * l l^T (rank one).
    double curvature(double t, const Vec& x) const;

    /// Gain restricted to the span of the first n basis vectors.
    GainSpec project(int n) const;

private:
    GainSpec() = default;
    static GainSpec make_capped(GainFamily family, Vec weights, double strike, double cap,
                                double smoothing, TimeFactor tf, double horizon);
    double profile(double y) const;
    double profile_d1(double y) const;
    double profile_d2(double y) const;
    double inner(const Vec& x) const;

    GainFamily family_ = GainFamily::Constant;
    Vec weights_;
    double strike_ = 0.0, cap_ = 0.0, smoothing_ = 0.0, level_ = 0.0;
    TimeFactor tf_;
    double horizon_ = 1.0;
    double theta_bar_ = 0.0, lip_x_ = 0.0, lip_t_ = 0.0, hess_bound_ = 0.0;
};

/// C^2 hinge: 0 below -delta, identity above delta, quintic blend between.
double smooth_hinge(double z, double delta);
double smooth_hinge_d1(double z, double delta);
double smooth_hinge_d2(double z, double delta);

} // namespace stoplab
