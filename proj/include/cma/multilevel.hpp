#pragma once

#include "cma/core.hpp"
#include "cma/lmm.hpp"
#include "cma/optimize.hpp"
#include "cma/single_level.hpp"

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cma {

// Coordinate order for session and fixed-effect coefficient vectors.
inline constexpr int kA = 0;
inline constexpr int kB = 1;
inline constexpr int kC = 2;

/// Centered sufficient statistics for every session, in key order. Built
/// once per dataset and shared by all estimators.
struct SessionTable {
    std::vector<SessionKey> keys;
    std::vector<int> subject;  // 0-based subject index per session
    std::vector<CrossProducts> xp;
    std::vector<ResidualCov> rc;
    std::vector<int> sessions_per_subject;

    int n_subjects() const { return static_cast<int>(sessions_per_subject.size()); }
    std::size_t n_sessions() const { return keys.size(); }

    static SessionTable build(const MultilevelDataset& data);
};

struct SessionFit {
    PathCoefficients theta;
    double sigma1_sq = 0.0;
    double sigma2_sq = 0.0;
};

struct SessionwiseFits {
    double delta = 0.0;
    std::map<SessionKey, SessionFit> fits;
};

/// Closed-form single-level fit of every session at a shared delta.
SessionwiseFits fit_sessionwise(const SessionTable& table, double delta);
SessionwiseFits fit_sessionwise(const MultilevelDataset& data, double delta);

enum class Method { ml, h, ts, h_ts };

const char* to_string(Method m);
Method method_from_string(const std::string& s);

struct MixedEffectsFit {
    Method method = Method::ts;
    double delta_hat = 0.0;
    Eigen::Vector3d fixed = Eigen::Vector3d::Zero();     // (A, B, C)
    Eigen::Vector3d fixed_se = Eigen::Vector3d::Zero();  // two-step REML standard errors
    double c_total = 0.0;
    double c_total_se = 0.0;
    Eigen::Vector3d psi = Eigen::Vector3d::Zero();     // between-subject variances
    Eigen::Vector3d lambda = Eigen::Vector3d::Zero();  // within-subject variances
    double indirect_prod = 0.0;
    double indirect_diff = 0.0;
    SessionwiseFits per_session;
    double objective_value = 0.0;
    bool converged = true;
    bool flat_objective = false;
    int iterations = 0;
};

// ---------------------------------------------------------------------------
// Hierarchical likelihood
// ---------------------------------------------------------------------------

struct HState {
    double delta = 0.0;
    Eigen::Vector3d b = Eigen::Vector3d::Zero();
    std::vector<Eigen::Vector3d> u;     // per subject
    std::vector<Eigen::Vector3d> b_ik;  // per session, SessionTable order
    Eigen::Vector3d lambda = Eigen::Vector3d::Ones();
    Eigen::Vector3d psi = Eigen::Vector3d::Ones();
    std::vector<double> sigma1_sq;
    std::vector<double> sigma2_sq;
    double h_value = 0.0;
    double h1 = 0.0;
    double h2 = 0.0;
    double h3 = 0.0;
    int iterations = 0;
    bool converged = false;
    int boundary = 0;  // entries of lambda and psi held at the variance floor
    std::vector<double> trace;  // h before the first sweep and after each one
};

struct HTerms {
    double h = 0.0;
    double h1 = 0.0;
    double h2 = 0.0;
    double h3 = 0.0;
};

/// Joint log-density of the data given session coefficients, of the
/// session coefficients given the subject effects, and of the subject
/// effects; all normalizing constants included.
HTerms h_likelihood(const SessionTable& table, const HState& state);
HTerms h_likelihood(const MultilevelDataset& data, const HState& state);

struct HOptions {
    double rel_tol = 1e-8;
    /// Convergence also needs the session and subject effect gradients of h
    /// below this; the relative change alone stops well short of stationarity.
    double grad_tol = 1e-6;
    int max_iter = 500;
    double variance_floor = 1e-10;
    bool record_trace = false;
    /// One within-subject variance shared by A, B and C. With a separate
    /// variance per coordinate, a coordinate whose session estimates are
    /// noisier than about a third of its variance has no interior maximum
    /// and its variance collapses onto the floor.
    bool common_lambda = true;
};

/// Profile h at a fixed delta: error variances from the closed forms, then
/// block coordinate ascent over session coefficients, subject effects,
/// fixed effects and both variance diagonals. A run that hits max_iter is
/// returned with converged = false.
HState cma_h_inner(const SessionTable& table, double delta, const HOptions& opt = {});
HState cma_h_inner(const MultilevelDataset& data, double delta, const HOptions& opt = {});

/// Gradient of h with respect to each block at the given state: session
/// coefficients (stacked), subject effects (stacked), fixed effects, and
/// the two variance diagonals.
struct HGradient {
    double b_ik = 0.0;
    double u = 0.0;
    double b = 0.0;
    double lambda = 0.0;
    double psi = 0.0;
};
HGradient h_gradient_norms(const SessionTable& table, const HState& state, bool common_lambda = true);

// ---------------------------------------------------------------------------
// Outer delta search and the four estimators
// ---------------------------------------------------------------------------

struct DeltaOptimum {
    double delta_hat = 0.0;
    double value = 0.0;
    bool flat = false;
};

struct DeltaSearchOptions {
    double lower = -0.95;
    double upper = 0.95;
    int grid_points = 21;
    double tol = 1e-4;
};

/// Grid scan then bracketed Brent refinement. Throws OptimFailed if every
/// grid value is non-finite. A constant objective returns the grid midpoint
/// with flat = true.
DeltaOptimum optimize_delta(const std::function<double(double)>& objective,
                            const DeltaSearchOptions& opt = {});

struct MultilevelOptions {
    DeltaSearchOptions search;
    HOptions h;
};

/// Sum of the three ML random-intercept log-likelihoods of the sessionwise
/// (A, B, C) estimates at delta.
double ml_objective(const SessionTable& table, double delta);

MixedEffectsFit cma_ml(const MultilevelDataset& data, const MultilevelOptions& opt = {});
MixedEffectsFit cma_ml(const SessionTable& table, const MultilevelOptions& opt = {});

MixedEffectsFit cma_h(const MultilevelDataset& data, const MultilevelOptions& opt = {});
MixedEffectsFit cma_h(const SessionTable& table, const MultilevelOptions& opt = {});

/// h-likelihood fit with delta supplied rather than estimated.
MixedEffectsFit cma_h_at(const SessionTable& table, double delta, const HOptions& opt = {});

/// Two-step fit: sessionwise estimates at delta, then REML per coordinate.
MixedEffectsFit cma_ts(const MultilevelDataset& data, double delta);
MixedEffectsFit cma_ts(const SessionTable& table, double delta);

/// delta from cma_h, coefficients and variances from cma_ts at that delta.
MixedEffectsFit cma_h_ts(const MultilevelDataset& data, const MultilevelOptions& opt = {});
MixedEffectsFit cma_h_ts(const SessionTable& table, const MultilevelOptions& opt = {});

/// Dispatch by method; delta is required for ts and ignored otherwise.
MixedEffectsFit fit_multilevel(const SessionTable& table, Method method,
                               std::optional<double> delta, const MultilevelOptions& opt = {});

/// Groups one coordinate of the sessionwise fits by subject.
/// coord: kA, kB, kC, or 3 for the total effect C'.
GroupedValues group_coordinate(const SessionwiseFits& fits, int coord);

}  // namespace cma
