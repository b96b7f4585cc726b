#pragma once

#include "cma/core.hpp"
#include "cma/multilevel.hpp"
#include "cma/rng.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace cma {

struct SingleLevelConfig {
    std::size_t n = 100;
    double a = -5.0;
    double b = -10.0;
    double c = 4.0;
    double sigma1 = 1.0;
    double sigma2 = 1.0;
    double delta = 0.5;
    double p_treat = 0.5;
    std::uint64_t seed = 1;
    /// Errors generated as E1 = U + e1, E2 = g U + e2 with U ~ N(0, u_sd^2),
    /// e1 ~ N(0, sigma1^2), e2 ~ N(0, sigma2^2). delta is then ignored.
    bool confounder_mode = false;
    double u_sd = 1.0;
    double g = 0.0;
};

/// Per-coordinate variances of the random effects.
struct CoefficientVariances {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
};

struct MultilevelConfig {
    int n_subjects = 50;
    int n_sessions = 4;
    double trial_mean = 100.0;
    double a = -5.0;
    double b = -10.0;
    double c = 4.0;
    CoefficientVariances psi_diag{0.5, 0.5, 0.5};
    CoefficientVariances lambda_diag{0.5, 0.5, 0.5};
    double sigma1 = 1.0;
    double sigma2 = 1.0;
    double delta = 0.5;
    double p_treat = 0.5;
    std::uint64_t seed = 1;
};

void validate(const SingleLevelConfig& cfg);
void validate(const MultilevelConfig& cfg);

/// Error covariance implied by a configuration. In confounder mode
/// sigma1^2 = u_sd^2 + sigma1^2, sigma2^2 = g^2 u_sd^2 + sigma2^2 and
/// delta = g u_sd^2 / (sigma1 sigma2).
NoiseCov implied_noise(const SingleLevelConfig& cfg);

/// Deterministic given cfg.seed.
TrialSeries gen_single(const SingleLevelConfig& cfg);
/// Draws from a caller-owned stream; cfg.seed is ignored.
TrialSeries gen_single(const SingleLevelConfig& cfg, rng::Engine& engine);

/// Draws subject effects, session deviations, trial counts
/// (Poisson, clamped at kMinSessionTrials) and every session's trials.
MultilevelDataset gen_multilevel(const MultilevelConfig& cfg);

/// Session coefficients (A, B, C) the generator used, in key order; lets
/// tests check the variance decomposition directly.
std::map<SessionKey, Eigen::Vector3d> true_session_coefficients(const MultilevelConfig& cfg);

inline constexpr std::size_t kMinSessionTrials = 10;

// ---------------------------------------------------------------------------
// Named designs
// ---------------------------------------------------------------------------

/// Which path coefficients are switched off in a null configuration.
enum class NullPattern { none, a_zero, b_zero, ab_zero };

const char* to_string(NullPattern p);

SingleLevelConfig table1_design(NullPattern pattern, double delta);
/// N = 50, K = 4, Poisson(100) trials, all variance components 0.5.
MultilevelConfig table2_design(NullPattern pattern, double delta);
/// 97 subjects, 4 sessions, Poisson(91) trials, treatment probability 1/4.
MultilevelConfig fmri_mimic_design();

// ---------------------------------------------------------------------------
// Monte Carlo driver
// ---------------------------------------------------------------------------

enum class Estimator {
    cma_delta,        // single level, true delta supplied, variances estimated
    cma_delta_known,  // single level, true delta and error SDs supplied
    bk,               // single level, delta = 0
    ml,
    h,
    h_ts,
    h_given,          // h-likelihood at the true delta
    ts_given,         // two-step at the true delta
    kkb,              // two-step at delta = 0
    pooled_delta,     // all sessions pooled into one single-level fit at the true delta
};

const char* to_string(Estimator e);

using Design = std::variant<SingleLevelConfig, MultilevelConfig>;

struct QuantityStats {
    double mean = 0.0;
    double sd = 0.0;
    double mse = 0.0;  // against the design truth; NaN when none applies
    int count = 0;
    std::vector<double> values;  // per successful replication, in replication order
};

struct MethodSummary {
    Estimator estimator = Estimator::cma_delta;
    std::map<std::string, QuantityStats> quantities;
    int failures = 0;
    std::vector<std::string> failure_messages;
};

struct MonteCarloSummary {
    int reps = 0;
    std::uint64_t seed = 0;
    std::map<std::string, double> truth;
    std::vector<MethodSummary> methods;

    const MethodSummary& method(Estimator e) const;
};

struct MonteCarloOptions {
    int threads = 0;  // 0 = all cores
    MultilevelOptions multilevel;
    double max_failure_rate = 0.05;
};

/// Seed of replication `rep` in a run with root seed `seed`.
std::uint64_t replication_seed(std::uint64_t seed, int rep);

/// Runs each estimator on `reps` independently seeded datasets and
/// aggregates mean, SD and MSE per quantity. Estimator failures are
/// recorded; more than max_failure_rate of them aborts with
/// ReplicateFailure.
MonteCarloSummary monte_carlo(const Design& design, std::span<const Estimator> estimators,
                              int reps, std::uint64_t seed, const MonteCarloOptions& opt = {});

/// Truth values of the quantities a design reports.
std::map<std::string, double> design_truth(const Design& design);

/// Quantities an estimator produces on a single dataset.
std::map<std::string, double> estimate_quantities(const Design& design, Estimator e,
                                                  const std::variant<TrialSeries, MultilevelDataset>& data,
                                                  const MultilevelOptions& opt = {});

}  // namespace cma
