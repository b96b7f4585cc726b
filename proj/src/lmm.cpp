#include "cma/lmm.hpp"

#include "cma/core.hpp"
#include "cma/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cma {

std::vector<int> GroupedValues::counts() const {
    std::vector<int> k;
    k.reserve(values.size());
    for (const auto& [_, v] : values) k.push_back(static_cast<int>(v.size()));
    return k;
}

std::size_t GroupedValues::total() const {
    std::size_t n = 0;
    for (const auto& [_, v] : values) n += v.size();
    return n;
}

void validate_grouped(const GroupedValues& data) {
    if (data.n_subjects() < 2) {
        throw Error(ErrorKind::InvalidArgument, "random-intercept fit needs at least 2 subjects");
    }
    for (const auto& [id, v] : data.values) {
        if (v.empty()) {
            throw Error(ErrorKind::InvalidArgument,
                        "subject " + std::to_string(id) + " has no values");
        }
        for (const double x : v) {
            if (!std::isfinite(x)) {
                throw Error(ErrorKind::InvalidArgument,
                            "non-finite value for subject " + std::to_string(id));
            }
        }
    }
}

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

struct GroupStats {
    std::vector<double> k;     // sessions per subject
    std::vector<double> mean;  // subject means
    double ssw = 0.0;          // pooled within-subject sum of squares
    double n = 0.0;
    double scale = 0.0;        // sum of squares about the grand mean
};

GroupStats summarize(const GroupedValues& data) {
    GroupStats g;
    double grand = 0.0;
    for (const auto& [_, v] : data.values) {
        double s = 0.0;
        for (const double x : v) s += x;
        const double m = s / static_cast<double>(v.size());
        double ss = 0.0;
        for (const double x : v) ss += (x - m) * (x - m);
        g.k.push_back(static_cast<double>(v.size()));
        g.mean.push_back(m);
        g.ssw += ss;
        g.n += static_cast<double>(v.size());
        grand += s;
    }
    grand /= g.n;
    for (const auto& [_, v] : data.values) {
        for (const double x : v) g.scale += (x - grand) * (x - grand);
    }
    return g;
}

double gls_mean(const GroupStats& g, double var_between, double var_within) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < g.k.size(); ++i) {
        const double w = g.k[i] / (var_within + g.k[i] * var_between);
        num += w * g.mean[i];
        den += w;
    }
    return num / den;
}

double loglik_stats(const GroupStats& g, double mean, double vb, double vw, Criterion crit) {
    double logdet = 0.0, quad = g.ssw / vw, wsum = 0.0;
    const double mu = crit == Criterion::REML ? gls_mean(g, vb, vw) : mean;
    for (std::size_t i = 0; i < g.k.size(); ++i) {
        const double tot = vw + g.k[i] * vb;
        logdet += (g.k[i] - 1.0) * std::log(vw) + std::log(tot);
        const double w = g.k[i] / tot;
        wsum += w;
        quad += w * (g.mean[i] - mu) * (g.mean[i] - mu);
    }
    if (crit == Criterion::ML) {
        return -0.5 * (g.n * kLog2Pi + logdet + quad);
    }
    return -0.5 * ((g.n - 1.0) * kLog2Pi + logdet + std::log(wsum) + quad);
}

// Variance ratio tau = var_between / var_within with var_within profiled out
// in closed form.
struct Profiled {
    double loglik;
    double var_within;
    double mean;
};

Profiled profile_ratio(const GroupStats& g, double tau, Criterion crit) {
    double num = 0.0, den = 0.0, logdet0 = 0.0;
    for (std::size_t i = 0; i < g.k.size(); ++i) {
        const double w0 = g.k[i] / (1.0 + g.k[i] * tau);
        num += w0 * g.mean[i];
        den += w0;
        logdet0 += std::log1p(g.k[i] * tau);
    }
    const double mu = num / den;
    double q0 = g.ssw;
    for (std::size_t i = 0; i < g.k.size(); ++i) {
        const double w0 = g.k[i] / (1.0 + g.k[i] * tau);
        q0 += w0 * (g.mean[i] - mu) * (g.mean[i] - mu);
    }
    const double dof = crit == Criterion::ML ? g.n : g.n - 1.0;
    const double vw = q0 / dof;
    double ll = -0.5 * (dof * kLog2Pi + dof * std::log(vw) + logdet0 + dof);
    if (crit == Criterion::REML) ll -= 0.5 * std::log(den);
    return Profiled{ll, vw, mu};
}

RandomInterceptFit finish(const GroupedValues& data, const GroupStats& g, double vb, double vw,
                          Criterion crit, bool degenerate) {
    RandomInterceptFit fit;
    fit.var_between = vb;
    fit.var_within = vw;
    fit.mean = gls_mean(g, vb, vw);
    fit.loglik = loglik_stats(g, fit.mean, vb, vw, crit);
    fit.degenerate = degenerate;
    std::size_t i = 0;
    for (const auto& [id, _] : data.values) {
        const double shrink = g.k[i] * vb / (vw + g.k[i] * vb);
        fit.blups[id] = shrink * (g.mean[i] - fit.mean);
        ++i;
    }
    return fit;
}

}  // namespace

double loglik_at(const GroupedValues& data, double mean, double var_between, double var_within,
                 Criterion criterion) {
    validate_grouped(data);
    if (!(var_within > 0.0) || var_between < 0.0) {
        throw Error(ErrorKind::InvalidArgument,
                    "need var_within > 0 and var_between >= 0");
    }
    return loglik_stats(summarize(data), mean, var_between, var_within, criterion);
}

RandomInterceptFit fit_random_intercept(const GroupedValues& data, Criterion criterion) {
    validate_grouped(data);
    const GroupStats g = summarize(data);

    // No within-subject information (K_i = 1 everywhere, or exact replicates):
    // pin var_within to its floor and fit var_between alone.
    if (g.ssw <= 1e-14 * std::max(g.scale, 1e-300) || g.ssw == 0.0) {
        const double vw = kVarWithinFloor;
        if (g.scale <= 0.0) {
            return finish(data, g, 0.0, vw, criterion, true);
        }
        auto f = [&](double log_vb) {
            const double vb = std::exp(log_vb);
            return loglik_stats(g, gls_mean(g, vb, vw), vb, vw, criterion);
        };
        const double hi = std::log(g.scale) + 2.0;
        GridSearchOptions opt{hi - 60.0, hi, 61, 1e-9, 0.0};
        const ScalarMaximum best = grid_then_brent(f, opt);
        double vb = std::exp(best.x);
        if (loglik_stats(g, gls_mean(g, 0.0, vw), 0.0, vw, criterion) >= best.value) vb = 0.0;
        return finish(data, g, vb, vw, criterion, true);
    }

    auto f = [&](double log_tau) { return profile_ratio(g, std::exp(log_tau), criterion).loglik; };
    GridSearchOptions opt{-20.0, 20.0, 41, 1e-10, 0.0};
    const ScalarMaximum best = grid_then_brent(f, opt);
    double tau = std::exp(best.x);
    const Profiled at_zero = profile_ratio(g, 0.0, criterion);
    if (at_zero.loglik >= best.value) tau = 0.0;
    const Profiled p = profile_ratio(g, tau, criterion);
    const double vw = std::max(p.var_within, kVarWithinFloor);
    return finish(data, g, tau * vw, vw, criterion, false);
}

}  // namespace cma
