#include "stoplab/gains.hpp"

#include <algorithm>
#include <cmath>

namespace stoplab {

double smooth_hinge(double z, double delta) {
    if (z <= -delta) return 0.0;
    if (z >= delta) return z;
    const double s = z / delta;
    const double sp1 = s + 1.0;
    return delta * sp1 * sp1 * sp1 * (3.0 - s) / 16.0;
}

double smooth_hinge_d1(double z, double delta) {
    if (z <= -delta) return 0.0;
    if (z >= delta) return 1.0;
    const double s = z / delta;
    const double sp1 = s + 1.0;
    return sp1 * sp1 * (2.0 - s) / 4.0;
}

double smooth_hinge_d2(double z, double delta) {
    if (z <= -delta || z >= delta) return 0.0;
    const double s = z / delta;
    return 3.0 * (1.0 - s * s) / (4.0 * delta);
}

namespace {

void check_time_factor(const TimeFactor& tf, double horizon) {
    if (!(horizon > 0.0)) throw InputError("gain: horizon must be positive");
    if (tf.value(0.0) < 0.0 || tf.value(horizon) < 0.0)
        throw InputError("gain: time factor must be non-negative on [0, T]");
}

double tf_max(const TimeFactor& tf, double horizon) {
    return std::max(tf.value(0.0), tf.value(horizon));
}

} // namespace

GainSpec GainSpec::constant(double level, TimeFactor tf, double horizon) {
    check_time_factor(tf, horizon);
    if (level < 0.0) throw InputError("gain: constant level must be non-negative");
    GainSpec g;
    g.family_ = GainFamily::Constant;
    g.level_ = level;
    g.tf_ = tf;
    g.horizon_ = horizon;
    g.theta_bar_ = tf_max(tf, horizon) * level;
    g.lip_x_ = 0.0;
    g.lip_t_ = std::abs(tf.slope()) * level;
    g.hess_bound_ = 0.0;
    return g;
}

GainSpec GainSpec::make_capped(GainFamily family, Vec weights, double strike, double cap,
                               double smoothing, TimeFactor tf, double horizon) {
    check_time_factor(tf, horizon);
    if (weights.size() < 1) throw InputError("gain: weight vector is empty");
    if (!(cap > 0.0)) throw InputError("gain: cap must be positive");
    if (!(smoothing > 0.0) || smoothing > cap / 2.0)
        throw InputError("gain: smoothing width must lie in (0, cap/2]");
    GainSpec g;
    g.family_ = family;
    g.weights_ = std::move(weights);
    g.strike_ = strike;
    g.cap_ = cap;
    g.smoothing_ = smoothing;
    g.tf_ = tf;
    g.horizon_ = horizon;
    const double phimax = tf_max(tf, horizon);
    const double wnorm = g.weights_.norm();
    g.theta_bar_ = phimax * cap;
    g.lip_x_ = phimax * wnorm;
    g.lip_t_ = std::abs(tf.slope()) * cap;
    g.hess_bound_ = phimax * wnorm * wnorm * 3.0 / (4.0 * smoothing);
    return g;
}

GainSpec GainSpec::capped_put(Vec weights, double strike, double cap, double smoothing,
                              TimeFactor tf, double horizon) {
    return make_capped(GainFamily::CappedPut, std::move(weights), strike, cap, smoothing, tf,
                       horizon);
}

GainSpec GainSpec::capped_call(Vec weights, double strike, double cap, double smoothing,
                               TimeFactor tf, double horizon) {
    return make_capped(GainFamily::CappedCall, std::move(weights), strike, cap, smoothing, tf,
                       horizon);
}

double GainSpec::inner(const Vec& x) const {
    const int m = static_cast<int>(std::min<Eigen::Index>(x.size(), weights_.size()));
    double y = 0.0;
    for (int i = 0; i < m; ++i) y += weights_[i] * x[i];
    return y;
}

double GainSpec::profile(double y) const {
    switch (family_) {
        case GainFamily::Constant: return level_;
        case GainFamily::CappedPut:
            return smooth_hinge(strike_ - y, smoothing_) -
                   smooth_hinge(strike_ - y - cap_, smoothing_);
        case GainFamily::CappedCall:
            return smooth_hinge(y - strike_, smoothing_) -
                   smooth_hinge(y - strike_ - cap_, smoothing_);
    }
    return 0.0;
}

double GainSpec::profile_d1(double y) const {
    switch (family_) {
        case GainFamily::Constant: return 0.0;
        case GainFamily::CappedPut:
            return -smooth_hinge_d1(strike_ - y, smoothing_) +
                   smooth_hinge_d1(strike_ - y - cap_, smoothing_);
        case GainFamily::CappedCall:
            return smooth_hinge_d1(y - strike_, smoothing_) -
                   smooth_hinge_d1(y - strike_ - cap_, smoothing_);
    }
    return 0.0;
}

double GainSpec::profile_d2(double y) const {
    switch (family_) {
        case GainFamily::Constant: return 0.0;
        case GainFamily::CappedPut:
            return smooth_hinge_d2(strike_ - y, smoothing_) -
                   smooth_hinge_d2(strike_ - y - cap_, smoothing_);
        case GainFamily::CappedCall:
            return smooth_hinge_d2(y - strike_, smoothing_) -
                   smooth_hinge_d2(y - strike_ - cap_, smoothing_);
    }
    return 0.0;
}

double GainSpec::value(double t, const Vec& x) const {
    return tf_.value(t) * profile(inner(x));
}

Vec GainSpec::gradient(double t, const Vec& x) const {
    Vec g = Vec::Zero(x.size());
    if (family_ == GainFamily::Constant) return g;
    const double c = tf_.value(t) * profile_d1(inner(x));
    const int m = static_cast<int>(std::min<Eigen::Index>(x.size(), weights_.size()));
    for (int i = 0; i < m; ++i) g[i] = c * weights_[i];
    return g;
}

double GainSpec::time_slope(double /*t*/, const Vec& x) const {
    return tf_.slope() * profile(inner(x));
}

double GainSpec::curvature(double t, const Vec& x) const {
    if (family_ == GainFamily::Constant) return 0.0;
    return tf_.value(t) * profile_d2(inner(x));
}

GainSpec GainSpec::project(int n) const {
    if (n < 1) throw DimensionError("gain: projection level must be positive");
    if (family_ == GainFamily::Constant) return *this;
    GainSpec g = *this;
    if (n < weights_.size()) g.weights_ = weights_.head(n).eval();
    // declared bounds shrink with the truncated weights
    const double phimax = tf_max(tf_, horizon_);
    const double wnorm = g.weights_.norm();
    g.lip_x_ = phimax * wnorm;
    g.hess_bound_ = phimax * wnorm * wnorm * 3.0 / (4.0 * smoothing_);
    return g;
}

} // namespace stoplab
