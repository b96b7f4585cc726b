#pragma once

#include "cma/core.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace cma {

/// Sufficient statistics of one centered session. Every closed-form
/// estimator below is a function of these six inner products and n.
struct CrossProducts {
    double zz = 0.0;
    double zm = 0.0;
    double zr = 0.0;
    double mm = 0.0;
    double mr = 0.0;
    double rr = 0.0;
    std::size_t n = 0;

    static CrossProducts of(const TrialSeries& centered);
};

struct VarianceEstimates {
    double sigma1_sq = 0.0;
    double sigma2_sq = 0.0;
};

struct SingleLevelFit {
    PathCoefficients theta;
    NoiseCov noise;
    ResidualCov residual_cov;
    double q_hat = 0.0;
    std::size_t n = 0;
    Eigen::Matrix3d asym_cov_theta = Eigen::Matrix3d::Zero();  // (A, C, B), divided by n
    Eigen::Matrix2d asym_cov_total = Eigen::Matrix2d::Zero();  // (C', C), divided by n
    double indirect_prod = 0.0;
    double indirect_diff = 0.0;
    double indirect_var = 0.0;
    double loglik = 0.0;
};

// Closed-form pieces. Inputs are centered series (or their cross products).

double fit_a(const CrossProducts& xp);
double fit_a(const TrialSeries& centered);
double fit_c_total(const CrossProducts& xp);
double fit_c_total(const TrialSeries& centered);

ResidualCov residual_cov(const CrossProducts& xp);
ResidualCov residual_cov(const TrialSeries& centered);

/// sigma1^2 = s11; sigma2^2 = det(S_B) / (s11 (1 - delta^2)).
VarianceEstimates estimate_sigmas(const ResidualCov& rc, double delta);

/// Constrained maximizer of the bivariate Gaussian likelihood for known
/// noise covariance: the OLS slopes of R on (Z, M) with a delta-dependent
/// shift of C and B. c_total is the regression of R on Z alone.
PathCoefficients fit_theta(const CrossProducts& xp, const NoiseCov& noise);
PathCoefficients fit_theta(const TrialSeries& centered, const NoiseCov& noise);

/// B from the residual covariance alone, for a given delta.
double fit_b_plugin(const ResidualCov& rc, double delta);

/// -n log det(Sigma) - tr(E Sigma^-1 E^T), E the residual matrix. No 1/2
/// factors and no 2*pi constant.
double loglik(const TrialSeries& centered, const PathCoefficients& theta, const NoiseCov& noise);

/// Asymptotic covariance of (A, C, B), already divided by n.
Eigen::Matrix3d asym_cov_theta(const PathCoefficients& theta, const NoiseCov& noise, double q,
                               std::size_t n);

/// Asymptotic covariance of (C', C), already divided by n.
Eigen::Matrix2d asym_cov_total(const PathCoefficients& theta, const NoiseCov& noise, double q,
                               std::size_t n);

struct IndirectEffect {
    double prod = 0.0;
    double diff = 0.0;
    double var = 0.0;
};

IndirectEffect indirect_effect(const PathCoefficients& theta, const NoiseCov& noise, double q,
                               std::size_t n);
IndirectEffect indirect_effect(const SingleLevelFit& fit);

/// Full single-session pipeline at a given delta: center, estimate both
/// error variances, fit, attach asymptotic covariances. An exact outcome fit
/// (sigma2 estimate 0) is returned with sigma2 = 0 and loglik = +inf.
SingleLevelFit fit_single(const TrialSeries& series, double delta);

/// As fit_single but with the error standard deviations supplied.
SingleLevelFit fit_single_known(const TrialSeries& series, const NoiseCov& noise);

/// delta = 0 special case: the two-regression estimator.
inline SingleLevelFit fit_baron_kenny(const TrialSeries& series) { return fit_single(series, 0.0); }

struct ProfilePoint {
    double delta = 0.0;
    double loglik = 0.0;
};

/// Maximized likelihood at each delta, other parameters profiled out via
/// the closed forms.
std::vector<ProfilePoint> profile_loglik_curve(const TrialSeries& series,
                                               std::span<const double> delta_grid);

}  // namespace cma
