#include "cma/single_level.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cma {

namespace {

constexpr double kSingularDesignTol = 1e-12;
constexpr double kNegativeVarianceTol = 1e-10;

void require_treatment_spread(double zz) {
    if (!(zz > 0.0)) {
        throw Error(ErrorKind::DegenerateTreatment, "centered treatment has zero sum of squares");
    }
}

}  // namespace

CrossProducts CrossProducts::of(const TrialSeries& s) {
    CrossProducts xp;
    xp.zz = s.z.squaredNorm();
    xp.zm = s.z.dot(s.m);
    xp.zr = s.z.dot(s.r);
    xp.mm = s.m.squaredNorm();
    xp.mr = s.m.dot(s.r);
    xp.rr = s.r.squaredNorm();
    xp.n = s.n();
    return xp;
}

double fit_a(const CrossProducts& xp) {
    require_treatment_spread(xp.zz);
    return xp.zm / xp.zz;
}

double fit_a(const TrialSeries& centered) { return fit_a(CrossProducts::of(centered)); }

double fit_c_total(const CrossProducts& xp) {
    require_treatment_spread(xp.zz);
    return xp.zr / xp.zz;
}

double fit_c_total(const TrialSeries& centered) { return fit_c_total(CrossProducts::of(centered)); }

ResidualCov residual_cov(const CrossProducts& xp) {
    const double a = fit_a(xp);
    const double ct = fit_c_total(xp);
    const double n = static_cast<double>(xp.n);
    ResidualCov rc;
    rc.s11 = std::max(0.0, xp.mm - a * xp.zm) / n;
    rc.s12 = (xp.mr - a * xp.zr) / n;
    rc.s22 = std::max(0.0, xp.rr - ct * xp.zr) / n;
    return rc;
}

ResidualCov residual_cov(const TrialSeries& centered) {
    const double a = fit_a(centered);
    const double ct = fit_c_total(centered);
    const Eigen::VectorXd e1 = centered.m - a * centered.z;
    const Eigen::VectorXd e2 = centered.r - ct * centered.z;
    const double n = static_cast<double>(centered.n());
    return ResidualCov{e1.squaredNorm() / n, e1.dot(e2) / n, e2.squaredNorm() / n};
}

VarianceEstimates estimate_sigmas(const ResidualCov& rc, double delta) {
    check_delta(delta);
    if (!(rc.s11 > 0.0)) {
        throw Error(ErrorKind::SingularResiduals, "mediator residual variance is zero");
    }
    double det = rc.det();
    if (det < 0.0) {
        if (det < -kNegativeVarianceTol * std::max(1.0, rc.s11 * rc.s22)) {
            throw Error(ErrorKind::NegativeVariance,
                        "residual covariance is not positive semidefinite");
        }
        det = 0.0;
    }
    return VarianceEstimates{rc.s11, det / (rc.s11 * (1.0 - delta * delta))};
}

PathCoefficients fit_theta(const CrossProducts& xp, const NoiseCov& noise) {
    require_treatment_spread(xp.zz);
    const double gram = xp.zz * xp.mm - xp.zm * xp.zm;
    if (!(gram > kSingularDesignTol * xp.zz * xp.mm)) {
        throw Error(ErrorKind::SingularDesign, "mediator is collinear with treatment");
    }
    const double ratio = noise.delta * noise.sigma2 / noise.sigma1;
    PathCoefficients th;
    th.a = xp.zm / xp.zz;
    th.c = (xp.mm * xp.zr - xp.zm * xp.mr) / gram + ratio * xp.zm / xp.zz;
    th.b = (xp.zz * xp.mr - xp.zm * xp.zr) / gram - ratio;
    th.c_total = xp.zr / xp.zz;
    return th;
}

PathCoefficients fit_theta(const TrialSeries& centered, const NoiseCov& noise) {
    return fit_theta(CrossProducts::of(centered), noise);
}

double fit_b_plugin(const ResidualCov& rc, double delta) {
    const VarianceEstimates v = estimate_sigmas(rc, delta);
    const double spread = std::sqrt(std::max(0.0, v.sigma1_sq * rc.s22 - rc.s12 * rc.s12));
    return rc.s12 / v.sigma1_sq - delta * spread / (v.sigma1_sq * std::sqrt(1.0 - delta * delta));
}

double loglik(const TrialSeries& s, const PathCoefficients& th, const NoiseCov& noise) {
    const Eigen::VectorXd e1 = s.m - th.a * s.z;
    const Eigen::VectorXd e2 = s.r - th.c * s.z - th.b * s.m;
    const Eigen::Matrix2d prec = noise.matrix().inverse();
    const double quad = prec(0, 0) * e1.squaredNorm() + 2.0 * prec(0, 1) * e1.dot(e2) +
                        prec(1, 1) * e2.squaredNorm();
    return -static_cast<double>(s.n()) * noise.log_det() - quad;
}

Eigen::Matrix3d asym_cov_theta(const PathCoefficients& th, const NoiseCov& nz, double q,
                               std::size_t n) {
    const double s1 = nz.sigma1, s2 = nz.sigma2, d = nz.delta;
    const double s1sq = s1 * s1, s2sq = s2 * s2;
    const double qa2 = q * th.a * th.a;
    Eigen::Matrix3d v;
    v(0, 0) = s1sq / q;
    v(0, 1) = d * s1 * s2 / q;
    v(0, 2) = 0.0;
    v(1, 1) = s2sq * (qa2 + s1sq - qa2 * d * d) / (q * s1sq);
    v(1, 2) = -th.a * s2sq * (1.0 - d * d) / s1sq;
    v(2, 2) = s2sq * (1.0 - d * d) / s1sq;
    v(1, 0) = v(0, 1);
    v(2, 0) = v(0, 2);
    v(2, 1) = v(1, 2);
    return v / static_cast<double>(n);
}

Eigen::Matrix2d asym_cov_total(const PathCoefficients& th, const NoiseCov& nz, double q,
                               std::size_t n) {
    const double s1 = nz.sigma1, s2 = nz.sigma2, d = nz.delta, b = th.b;
    const double s1sq = s1 * s1, s2sq = s2 * s2;
    const double qa2 = q * th.a * th.a;
    Eigen::Matrix2d v;
    v(0, 0) = (b * b * s1sq + 2.0 * b * d * s1 * s2 + s2sq) / q;
    v(0, 1) = (s2sq + b * d * s1 * s2) / q;
    v(1, 0) = v(0, 1);
    v(1, 1) = s2sq * (qa2 + s1sq - qa2 * d * d) / (q * s1sq);
    return v / static_cast<double>(n);
}

IndirectEffect indirect_effect(const PathCoefficients& th, const NoiseCov& nz, double q,
                               std::size_t n) {
    const double s1sq = nz.sigma1 * nz.sigma1;
    const double s2sq = nz.sigma2 * nz.sigma2;
    IndirectEffect ie;
    ie.prod = th.a * th.b;
    ie.diff = th.c_total - th.c;
    ie.var = (s1sq * th.b * th.b / q + s2sq * (1.0 - nz.delta * nz.delta) * th.a * th.a / s1sq) /
             static_cast<double>(n);
    return ie;
}

IndirectEffect indirect_effect(const SingleLevelFit& fit) {
    return indirect_effect(fit.theta, fit.noise, fit.q_hat, fit.n);
}

namespace {

SingleLevelFit assemble_without_loglik(const TrialSeries& c, const CrossProducts& xp, const NoiseCov& noise) {
    SingleLevelFit fit;
    fit.n = xp.n;
    fit.q_hat = xp.zz / static_cast<double>(xp.n);
    fit.noise = noise;
    fit.residual_cov = residual_cov(c);
    fit.theta = fit_theta(xp, noise);
    fit.asym_cov_theta = asym_cov_theta(fit.theta, noise, fit.q_hat, fit.n);
    fit.asym_cov_total = asym_cov_total(fit.theta, noise, fit.q_hat, fit.n);
    const IndirectEffect ie = indirect_effect(fit.theta, noise, fit.q_hat, fit.n);
    fit.indirect_prod = ie.prod;
    fit.indirect_diff = ie.diff;
    fit.indirect_var = ie.var;
    return fit;
}

SingleLevelFit assemble(const TrialSeries& c, const CrossProducts& xp, const NoiseCov& noise) {
    SingleLevelFit fit = assemble_without_loglik(c, xp, noise);
    fit.loglik = loglik(c, fit.theta, noise);
    return fit;
}

}  // namespace

SingleLevelFit fit_single(const TrialSeries& series, double delta) {
    check_delta(delta);
    const TrialSeries c = center(series);
    const CrossProducts xp = CrossProducts::of(c);
    const VarianceEstimates v = estimate_sigmas(residual_cov(c), delta);
    NoiseCov noise{std::sqrt(v.sigma1_sq), std::sqrt(v.sigma2_sq), delta};
    if (!(v.sigma2_sq > 0.0)) {
        // The outcome is an exact linear function of treatment and mediator.
        // The coefficients and their (zero) outcome-noise terms stay
        // well defined; the likelihood itself is unbounded.
        noise.sigma2 = 0.0;
        SingleLevelFit fit = assemble_without_loglik(c, xp, noise);
        fit.loglik = std::numeric_limits<double>::infinity();
        return fit;
    }
    return assemble(c, xp, noise);
}

SingleLevelFit fit_single_known(const TrialSeries& series, const NoiseCov& noise) {
    const NoiseCov checked = NoiseCov::make(noise.sigma1, noise.sigma2, noise.delta);
    const TrialSeries c = center(series);
    return assemble(c, CrossProducts::of(c), checked);
}

std::vector<ProfilePoint> profile_loglik_curve(const TrialSeries& series,
                                               std::span<const double> delta_grid) {
    std::vector<ProfilePoint> curve;
    curve.reserve(delta_grid.size());
    for (const double d : delta_grid) {
        curve.push_back(ProfilePoint{d, fit_single(series, d).loglik});
    }
    return curve;
}

}  // namespace cma
