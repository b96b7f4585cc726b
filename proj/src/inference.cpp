#include "cma/inference.hpp"

#include "cma/parallel.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/random/bernoulli_distribution.hpp>

#include <algorithm>
#include <cmath>

namespace cma {

namespace {

const boost::math::normal kStdNormal;

double z_quantile(double p) { return boost::math::quantile(kStdNormal, p); }
double z_cdf(double x) { return boost::math::cdf(kStdNormal, x); }

void check_level(double level) {
    if (!(level > 0.0 && level < 1.0)) {
        throw Error(ErrorKind::InvalidArgument, "level must lie in (0, 1)");
    }
}

std::map<Quantity, double> mixed_values(const MixedEffectsFit& fit) {
    std::map<Quantity, double> v;
    for (const Quantity q : kAllQuantities) v[q] = quantity_value(fit, q);
    return v;
}

std::map<Quantity, double> single_values(const SingleLevelFit& fit) {
    std::map<Quantity, double> v;
    for (const Quantity q : kAllQuantities) v[q] = quantity_value(fit, q);
    return v;
}

// Residuals of the centered fit, trial by trial.
struct Residuals {
    Eigen::VectorXd e1;
    Eigen::VectorXd e2;
};

Residuals residuals(const TrialSeries& series, const PathCoefficients& th) {
    const TrialSeries c = center(series);
    Residuals r;
    r.e1 = c.m - th.a * c.z;
    r.e2 = c.r - th.c * c.z - th.b * c.m;
    return r;
}

BootstrapRun collect(std::map<Quantity, double> point, int B, std::uint64_t seed,
                     std::vector<std::optional<std::map<Quantity, double>>>& reps,
                     std::vector<std::string>& errors, double max_failure_rate) {
    BootstrapRun run;
    run.requested = B;
    run.seed = seed;
    run.point = std::move(point);
    for (int b = 0; b < B; ++b) {
        if (!reps[b]) {
            run.failures.push_back("replicate " + std::to_string(b) + ": " + errors[b]);
            continue;
        }
        ++run.n_replicates;
        for (const auto& [q, v] : *reps[b]) run.replicates[q].push_back(v);
    }
    if (static_cast<double>(run.failures.size()) > max_failure_rate * B) {
        throw Error(ErrorKind::ReplicateFailure, std::to_string(run.failures.size()) + " of " +
                                                     std::to_string(B) +
                                                     " bootstrap replicates failed; first: " +
                                                     run.failures.front());
    }
    for (const auto& [q, xs] : run.replicates) {
        double sum = 0.0;
        for (const double x : xs) sum += x;
        const double mean = sum / static_cast<double>(xs.size());
        run.bias_corrected_mean[q] = 2.0 * run.point.at(q) - mean;
        run.z0[q] = bc_z0(xs, run.point.at(q));
    }
    return run;
}

}  // namespace

const char* to_string(Quantity q) {
    switch (q) {
        case Quantity::delta: return "delta";
        case Quantity::A: return "A";
        case Quantity::B: return "B";
        case Quantity::C: return "C";
        case Quantity::CTotal: return "C_total";
        case Quantity::ABp: return "AB_p";
        case Quantity::ABd: return "AB_d";
    }
    return "?";
}

Quantity quantity_from_string(const std::string& s) {
    for (const Quantity q : kAllQuantities) {
        if (s == to_string(q)) return q;
    }
    throw Error(ErrorKind::UnknownQuantity, "unknown quantity '" + s + "'");
}

const char* to_string(IntervalMethod m) {
    return m == IntervalMethod::asymptotic ? "asymptotic" : "wild_bc";
}

double quantity_value(const MixedEffectsFit& fit, Quantity q) {
    switch (q) {
        case Quantity::delta: return fit.delta_hat;
        case Quantity::A: return fit.fixed[kA];
        case Quantity::B: return fit.fixed[kB];
        case Quantity::C: return fit.fixed[kC];
        case Quantity::CTotal: return fit.c_total;
        case Quantity::ABp: return fit.indirect_prod;
        case Quantity::ABd: return fit.indirect_diff;
    }
    throw Error(ErrorKind::UnknownQuantity, "unknown quantity");
}

double quantity_value(const SingleLevelFit& fit, Quantity q) {
    switch (q) {
        case Quantity::delta: return fit.noise.delta;
        case Quantity::A: return fit.theta.a;
        case Quantity::B: return fit.theta.b;
        case Quantity::C: return fit.theta.c;
        case Quantity::CTotal: return fit.theta.c_total;
        case Quantity::ABp: return fit.indirect_prod;
        case Quantity::ABd: return fit.indirect_diff;
    }
    throw Error(ErrorKind::UnknownQuantity, "unknown quantity");
}

double asymptotic_variance(const SingleLevelFit& fit, Quantity q) {
    // asym_cov_theta is ordered (A, C, B); asym_cov_total is (C', C).
    switch (q) {
        case Quantity::A: return fit.asym_cov_theta(0, 0);
        case Quantity::C: return fit.asym_cov_theta(1, 1);
        case Quantity::B: return fit.asym_cov_theta(2, 2);
        case Quantity::CTotal: return fit.asym_cov_total(0, 0);
        case Quantity::ABp:
        case Quantity::ABd: return fit.indirect_var;
        case Quantity::delta: break;
    }
    throw Error(ErrorKind::UnknownQuantity,
                std::string("no asymptotic variance for '") + to_string(q) + "' in a single-session fit");
}

IntervalEstimate asymptotic_ci(const SingleLevelFit& fit, Quantity q, double level) {
    check_level(level);
    const double var = asymptotic_variance(fit, q);
    const double half = z_quantile(0.5 * (1.0 + level)) * std::sqrt(std::max(var, 0.0));
    const double point = quantity_value(fit, q);
    return IntervalEstimate{point, point - half, point + half, level, IntervalMethod::asymptotic};
}

std::vector<double> rademacher_weights(std::size_t n, rng::Engine& engine) {
    boost::random::bernoulli_distribution<double> coin(0.5);
    std::vector<double> w(n);
    for (auto& x : w) x = coin(engine) ? 1.0 : -1.0;
    return w;
}

TrialSeries wild_resample(const TrialSeries& series, const PathCoefficients& th,
                          std::span<const double> weights) {
    if (weights.size() != series.n()) {
        throw Error(ErrorKind::LengthMismatch, "one weight per trial is required");
    }
    const Residuals e = residuals(series, th);
    TrialSeries out;
    out.z = series.z;
    out.m.resize(series.z.size());
    out.r.resize(series.z.size());
    for (Eigen::Index t = 0; t < series.z.size(); ++t) {
        const double w = weights[static_cast<std::size_t>(t)];
        out.m[t] = series.z[t] * th.a + w * e.e1[t];
        out.r[t] = series.z[t] * th.c + out.m[t] * th.b + w * e.e2[t];
    }
    return out;
}

MultilevelDataset wild_resample(const MultilevelDataset& data, const SessionwiseFits& fits,
                                rng::Engine& engine) {
    MultilevelDataset out;
    for (const auto& [key, series] : data.sessions) {
        const auto fit = fits.fits.find(key);
        if (fit == fits.fits.end()) {
            throw Error(ErrorKind::InvalidArgument, "no fitted coefficients for session " + to_string(key));
        }
        const std::vector<double> w = rademacher_weights(series.n(), engine);
        out.sessions.emplace(key, wild_resample(series, fit->second.theta, w));
    }
    return out;
}

BootstrapRun wild_bootstrap(const MultilevelDataset& data, Method method, int B, std::uint64_t seed,
                            std::optional<double> delta, const BootstrapOptions& opt) {
    if (B < 1) throw Error(ErrorKind::InvalidArgument, "at least one bootstrap replicate is required");
    const SessionTable table = SessionTable::build(data);
    const MixedEffectsFit original = fit_multilevel(table, method, delta, opt.multilevel);

    std::vector<std::optional<std::map<Quantity, double>>> reps(static_cast<std::size_t>(B));
    std::vector<std::string> errors(reps.size());
    parallel_for(reps.size(), opt.threads, [&](std::size_t b) {
        rng::Engine engine = rng::stream(seed, {rng::kBootstrap, static_cast<std::uint64_t>(b)});
        try {
            const MultilevelDataset star = wild_resample(data, original.per_session, engine);
            reps[b] = mixed_values(fit_multilevel(SessionTable::build(star), method, delta, opt.multilevel));
        } catch (const Error& e) {
            errors[b] = e.what();
        }
    });
    return collect(mixed_values(original), B, seed, reps, errors, opt.max_failure_rate);
}

BootstrapRun wild_bootstrap_single(const TrialSeries& series, double delta, int B, std::uint64_t seed,
                                   const BootstrapOptions& opt) {
    if (B < 1) throw Error(ErrorKind::InvalidArgument, "at least one bootstrap replicate is required");
    const SingleLevelFit original = fit_single(series, delta);

    std::vector<std::optional<std::map<Quantity, double>>> reps(static_cast<std::size_t>(B));
    std::vector<std::string> errors(reps.size());
    parallel_for(reps.size(), opt.threads, [&](std::size_t b) {
        rng::Engine engine = rng::stream(seed, {rng::kBootstrap, static_cast<std::uint64_t>(b)});
        try {
            const std::vector<double> w = rademacher_weights(series.n(), engine);
            reps[b] = single_values(fit_single(wild_resample(series, original.theta, w), delta));
        } catch (const Error& e) {
            errors[b] = e.what();
        }
    });
    return collect(single_values(original), B, seed, reps, errors, opt.max_failure_rate);
}

double quantile_type7(std::span<const double> data, double p) {
    if (data.empty()) throw Error(ErrorKind::InvalidArgument, "quantile of an empty sample");
    std::vector<double> x(data.begin(), data.end());
    std::sort(x.begin(), x.end());
    const double h = (static_cast<double>(x.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, x.size() - 1);
    return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

double bc_z0(std::span<const double> replicates, double point) {
    if (replicates.empty()) throw Error(ErrorKind::InvalidArgument, "no bootstrap replicates");
    const double n = static_cast<double>(replicates.size());
    const double below =
        static_cast<double>(std::count_if(replicates.begin(), replicates.end(), [&](double x) { return x < point; }));
    const double bound = z_quantile(1.0 - 1.0 / (2.0 * n));
    if (below == 0.0) return -bound;
    if (below == n) return bound;
    return std::clamp(z_quantile(below / n), -bound, bound);
}

IntervalEstimate bc_interval(std::span<const double> replicates, double point, double level) {
    check_level(level);
    if (replicates.empty()) throw Error(ErrorKind::InvalidArgument, "no bootstrap replicates");
    const auto [mn, mx] = std::minmax_element(replicates.begin(), replicates.end());
    if (*mn == *mx) {
        return IntervalEstimate{point, *mn, *mn, level, IntervalMethod::wild_bc};
    }
    const double z0 = bc_z0(replicates, point);
    const double zq = z_quantile(0.5 * (1.0 + level));
    const double lo = quantile_type7(replicates, z_cdf(2.0 * z0 - zq));
    const double hi = quantile_type7(replicates, z_cdf(2.0 * z0 + zq));
    return IntervalEstimate{point, lo, hi, level, IntervalMethod::wild_bc};
}

IntervalEstimate bc_interval(const BootstrapRun& run, Quantity q, double level) {
    const auto it = run.replicates.find(q);
    if (it == run.replicates.end()) {
        throw Error(ErrorKind::UnknownQuantity, std::string("no replicates for '") + to_string(q) + "'");
    }
    return bc_interval(it->second, run.point.at(q), level);
}

}  // namespace cma
