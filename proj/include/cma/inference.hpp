#pragma once

#include "cma/core.hpp"
#include "cma/multilevel.hpp"
#include "cma/rng.hpp"
#include "cma/single_level.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cma {

enum class Quantity { delta, A, B, C, CTotal, ABp, ABd };

inline constexpr Quantity kAllQuantities[] = {Quantity::delta, Quantity::A,   Quantity::B,  Quantity::C,
                                              Quantity::CTotal, Quantity::ABp, Quantity::ABd};

/// "delta", "A", "B", "C", "C_total", "AB_p", "AB_d".
const char* to_string(Quantity q);
/// Throws UnknownQuantity.
Quantity quantity_from_string(const std::string& s);

enum class IntervalMethod { asymptotic, wild_bc };

const char* to_string(IntervalMethod m);

struct IntervalEstimate {
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double level = 0.95;
    IntervalMethod method = IntervalMethod::asymptotic;
};

/// Wald interval from the asymptotic covariances of a single-session fit.
/// delta is an input of that fit, so asking for it throws UnknownQuantity.
IntervalEstimate asymptotic_ci(const SingleLevelFit& fit, Quantity q, double level);

/// Asymptotic variance of a quantity of a single-session fit (divided by n).
double asymptotic_variance(const SingleLevelFit& fit, Quantity q);

/// Point value of a quantity in a mixed-effects fit.
double quantity_value(const MixedEffectsFit& fit, Quantity q);
/// Point value of a quantity in a single-session fit (delta is the input delta).
double quantity_value(const SingleLevelFit& fit, Quantity q);

// ---------------------------------------------------------------------------
// Wild bootstrap
// ---------------------------------------------------------------------------

/// Regenerates a session from its fitted coefficients and sign-flipped
/// residuals: M* = Z A + w e1, R* = Z C + M* B + w e2, where e1, e2 are the
/// residuals of the centered fit. The same weight multiplies both residuals
/// of a trial. weights.size() must equal the trial count.
TrialSeries wild_resample(const TrialSeries& series, const PathCoefficients& theta,
                          std::span<const double> weights);

/// Draws i.i.d. Rademacher weights for every trial of every session (key
/// order, then trial order) and applies wild_resample to each session.
MultilevelDataset wild_resample(const MultilevelDataset& data, const SessionwiseFits& fits,
                                rng::Engine& engine);

std::vector<double> rademacher_weights(std::size_t n, rng::Engine& engine);

struct BootstrapRun {
    int requested = 0;
    int n_replicates = 0;  // successful replicates
    std::uint64_t seed = 0;
    std::map<Quantity, double> point;
    std::map<Quantity, std::vector<double>> replicates;  // successful replicates in index order
    std::map<Quantity, double> bias_corrected_mean;      // 2 * point - mean(replicates)
    std::map<Quantity, double> z0;
    std::vector<std::string> failures;
};

struct BootstrapOptions {
    int threads = 0;
    double max_failure_rate = 0.10;
    MultilevelOptions multilevel;
};

/// Refits `method` on B wild-bootstrap datasets built from the original
/// fit's sessionwise coefficients. delta is required for ts and supplied
/// unchanged to every replicate; other methods re-estimate it. Replicate b
/// draws from the stream (seed, b), so the run is worker-count independent.
BootstrapRun wild_bootstrap(const MultilevelDataset& data, Method method, int B, std::uint64_t seed,
                            std::optional<double> delta = std::nullopt, const BootstrapOptions& opt = {});

/// Single-session version at a fixed delta (variances re-estimated).
BootstrapRun wild_bootstrap_single(const TrialSeries& series, double delta, int B, std::uint64_t seed,
                                   const BootstrapOptions& opt = {});

/// Bias-corrected percentile interval. z0 = Phi^-1(share of replicates
/// strictly below the point estimate), clamped to +-Phi^-1(1 - 1/(2B));
/// endpoints are type-7 sample quantiles at Phi(2 z0 -+ z_{(1+level)/2}).
/// All-equal replicates give a zero-width interval at their common value.
IntervalEstimate bc_interval(std::span<const double> replicates, double point, double level);
IntervalEstimate bc_interval(const BootstrapRun& run, Quantity q, double level);

/// Bias-correction constant alone, with the same clamp.
double bc_z0(std::span<const double> replicates, double point);

/// Type-7 (linear interpolation) sample quantile of unsorted data.
double quantile_type7(std::span<const double> data, double p);

}  // namespace cma
