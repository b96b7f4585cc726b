#include "cma/multilevel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace cma {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);
constexpr int kTotal = 3;

double coordinate(const PathCoefficients& th, int coord) {
    switch (coord) {
        case kA: return th.a;
        case kB: return th.b;
        case kC: return th.c;
        default: return th.c_total;
    }
}

Eigen::Vector3d as_vector(const PathCoefficients& th) { return {th.a, th.b, th.c}; }

Error with_session(const Error& e, const SessionKey& key) {
    return Error(e.kind(), to_string(key) + ": " + e.what());
}

}  // namespace

SessionTable SessionTable::build(const MultilevelDataset& data) {
    validate_dataset(data);
    SessionTable t;
    t.sessions_per_subject = data.sessions_per_subject();
    for (const auto& [key, series] : data.sessions) {
        const TrialSeries c = center(series);
        t.keys.push_back(key);
        t.subject.push_back(key.subject - 1);
        t.xp.push_back(CrossProducts::of(c));
        t.rc.push_back(residual_cov(c));
    }
    return t;
}

SessionwiseFits fit_sessionwise(const SessionTable& table, double delta) {
    check_delta(delta);
    SessionwiseFits out;
    out.delta = delta;
    for (std::size_t s = 0; s < table.n_sessions(); ++s) {
        try {
            const VarianceEstimates v = estimate_sigmas(table.rc[s], delta);
            if (!(v.sigma2_sq > 0.0)) {
                throw Error(ErrorKind::SingularResiduals, "outcome error variance is zero");
            }
            const NoiseCov noise{std::sqrt(v.sigma1_sq), std::sqrt(v.sigma2_sq), delta};
            out.fits.emplace(table.keys[s], SessionFit{fit_theta(table.xp[s], noise), v.sigma1_sq,
                                                       v.sigma2_sq});
        } catch (const Error& e) {
            throw with_session(e, table.keys[s]);
        }
    }
    return out;
}

SessionwiseFits fit_sessionwise(const MultilevelDataset& data, double delta) {
    return fit_sessionwise(SessionTable::build(data), delta);
}

const char* to_string(Method m) {
    switch (m) {
        case Method::ml: return "ml";
        case Method::h: return "h";
        case Method::ts: return "ts";
        case Method::h_ts: return "h-ts";
    }
    return "?";
}

Method method_from_string(const std::string& s) {
    if (s == "ml") return Method::ml;
    if (s == "h") return Method::h;
    if (s == "ts") return Method::ts;
    if (s == "h-ts" || s == "h_ts") return Method::h_ts;
    throw Error(ErrorKind::InvalidArgument, "unknown method '" + s + "' (expected ml, h, ts, h-ts)");
}

GroupedValues group_coordinate(const SessionwiseFits& fits, int coord) {
    GroupedValues g;
    for (const auto& [key, f] : fits.fits) {
        g.values[key.subject].push_back(coordinate(f.theta, coord));
    }
    return g;
}

// ---------------------------------------------------------------------------
// h-likelihood
// ---------------------------------------------------------------------------

namespace {

// h1 of one session as a quadratic in theta = (A, B, C):
//   h1 = constant - (theta' H theta - 2 g' theta + q0) / 2.
struct SessionQuadratic {
    Eigen::Matrix3d hess;
    Eigen::Vector3d grad;
    double q0 = 0.0;
    double constant = 0.0;

    double h1(const Eigen::Vector3d& th) const {
        return constant - 0.5 * (th.dot(hess * th) - 2.0 * grad.dot(th) + q0);
    }
};

SessionQuadratic session_quadratic(const CrossProducts& xp, double s1sq, double s2sq,
                                   double delta) {
    const double omd = 1.0 - delta * delta;
    const double p11 = 1.0 / (s1sq * omd);
    const double p22 = 1.0 / (s2sq * omd);
    const double p12 = -delta / (std::sqrt(s1sq * s2sq) * omd);
    SessionQuadratic q;
    q.hess(kA, kA) = p11 * xp.zz;
    q.hess(kA, kB) = p12 * xp.zm;
    q.hess(kA, kC) = p12 * xp.zz;
    q.hess(kB, kB) = p22 * xp.mm;
    q.hess(kB, kC) = p22 * xp.zm;
    q.hess(kC, kC) = p22 * xp.zz;
    q.hess(kB, kA) = q.hess(kA, kB);
    q.hess(kC, kA) = q.hess(kA, kC);
    q.hess(kC, kB) = q.hess(kB, kC);
    q.grad(kA) = p11 * xp.zm + p12 * xp.zr;
    q.grad(kB) = p12 * xp.mm + p22 * xp.mr;
    q.grad(kC) = p12 * xp.zm + p22 * xp.zr;
    q.q0 = p11 * xp.mm + 2.0 * p12 * xp.mr + p22 * xp.rr;
    const double n = static_cast<double>(xp.n);
    const double logdet = std::log(s1sq) + std::log(s2sq) + std::log(omd);
    q.constant = -n * kLog2Pi - 0.5 * n * logdet;
    return q;
}

double gaussian_diag_logpdf(const Eigen::Vector3d& dev, const Eigen::Vector3d& var) {
    double out = -1.5 * kLog2Pi;
    for (int j = 0; j < 3; ++j) out -= 0.5 * (std::log(var[j]) + dev[j] * dev[j] / var[j]);
    return out;
}

std::vector<SessionQuadratic> quadratics(const SessionTable& t, const HState& st) {
    std::vector<SessionQuadratic> qs;
    qs.reserve(t.n_sessions());
    for (std::size_t s = 0; s < t.n_sessions(); ++s) {
        qs.push_back(session_quadratic(t.xp[s], st.sigma1_sq[s], st.sigma2_sq[s], st.delta));
    }
    return qs;
}

HTerms h_terms(const SessionTable& t, const std::vector<SessionQuadratic>& qs, const HState& st) {
    HTerms out;
    for (std::size_t s = 0; s < t.n_sessions(); ++s) {
        out.h1 += qs[s].h1(st.b_ik[s]);
        const Eigen::Vector3d dev = st.b_ik[s] - st.b - st.u[t.subject[s]];
        out.h2 += gaussian_diag_logpdf(dev, st.lambda);
    }
    for (const auto& ui : st.u) out.h3 += gaussian_diag_logpdf(ui, st.psi);
    out.h = out.h1 + out.h2 + out.h3;
    return out;
}

void check_state_shape(const SessionTable& t, const HState& st) {
    if (st.b_ik.size() != t.n_sessions() || st.sigma1_sq.size() != t.n_sessions() ||
        st.sigma2_sq.size() != t.n_sessions() ||
        st.u.size() != static_cast<std::size_t>(t.n_subjects())) {
        throw Error(ErrorKind::InvalidArgument, "h-likelihood state does not match the dataset");
    }
}

}  // namespace

HTerms h_likelihood(const SessionTable& table, const HState& state) {
    check_state_shape(table, state);
    return h_terms(table, quadratics(table, state), state);
}

HTerms h_likelihood(const MultilevelDataset& data, const HState& state) {
    return h_likelihood(SessionTable::build(data), state);
}

HState cma_h_inner(const SessionTable& t, double delta, const HOptions& opt) {
    check_delta(delta);
    const std::size_t ns = t.n_sessions();
    const int nsub = t.n_subjects();
    const double floor = opt.variance_floor;

    HState st;
    st.delta = delta;
    st.sigma1_sq.resize(ns);
    st.sigma2_sq.resize(ns);
    for (std::size_t s = 0; s < ns; ++s) {
        try {
            const VarianceEstimates v = estimate_sigmas(t.rc[s], delta);
            if (!(v.sigma2_sq > 0.0)) {
                throw Error(ErrorKind::SingularResiduals, "outcome error variance is zero");
            }
            st.sigma1_sq[s] = v.sigma1_sq;
            st.sigma2_sq[s] = v.sigma2_sq;
        } catch (const Error& e) {
            throw with_session(e, t.keys[s]);
        }
    }
    const std::vector<SessionQuadratic> qs = quadratics(t, st);

    // Start from the unpenalized session optima and moment estimates.
    st.b_ik.resize(ns);
    for (std::size_t s = 0; s < ns; ++s) {
        const NoiseCov noise{std::sqrt(st.sigma1_sq[s]), std::sqrt(st.sigma2_sq[s]), delta};
        try {
            st.b_ik[s] = as_vector(fit_theta(t.xp[s], noise));
        } catch (const Error& e) {
            throw with_session(e, t.keys[s]);
        }
    }
    std::vector<Eigen::Vector3d> subj_sum(static_cast<std::size_t>(nsub), Eigen::Vector3d::Zero());
    Eigen::Vector3d grand = Eigen::Vector3d::Zero();
    for (std::size_t s = 0; s < ns; ++s) {
        subj_sum[t.subject[s]] += st.b_ik[s];
        grand += st.b_ik[s];
    }
    st.b = grand / static_cast<double>(ns);
    st.u.assign(static_cast<std::size_t>(nsub), Eigen::Vector3d::Zero());
    for (int i = 0; i < nsub; ++i) {
        st.u[i] = subj_sum[i] / static_cast<double>(t.sessions_per_subject[i]) - st.b;
    }
    auto update_variances = [&]() {
        Eigen::Vector3d lam = Eigen::Vector3d::Zero();
        for (std::size_t s = 0; s < ns; ++s) {
            lam += (st.b_ik[s] - st.b - st.u[t.subject[s]]).cwiseAbs2();
        }
        if (opt.common_lambda) {
            st.lambda.setConstant(std::max(lam.sum() / (3.0 * static_cast<double>(ns)), floor));
        } else {
            st.lambda = (lam / static_cast<double>(ns)).cwiseMax(floor);
        }
        Eigen::Vector3d psi = Eigen::Vector3d::Zero();
        for (const auto& ui : st.u) psi += ui.cwiseAbs2();
        st.psi = (psi / static_cast<double>(nsub)).cwiseMax(floor);
    };
    update_variances();

    HTerms terms = h_terms(t, qs, st);
    if (opt.record_trace) st.trace.push_back(terms.h);

    for (int it = 1; it <= opt.max_iter; ++it) {
        const Eigen::Vector3d lam_prec = st.lambda.cwiseInverse();
        // (i) session coefficients
        for (std::size_t s = 0; s < ns; ++s) {
            Eigen::Matrix3d lhs = qs[s].hess;
            lhs.diagonal() += lam_prec;
            const Eigen::Vector3d prior = st.b + st.u[t.subject[s]];
            const Eigen::Vector3d rhs = qs[s].grad + lam_prec.cwiseProduct(prior);
            st.b_ik[s] = lhs.llt().solve(rhs);
        }
        // (ii) subject effects given b
        std::fill(subj_sum.begin(), subj_sum.end(), Eigen::Vector3d::Zero());
        for (std::size_t s = 0; s < ns; ++s) subj_sum[t.subject[s]] += st.b_ik[s] - st.b;
        for (int i = 0; i < nsub; ++i) {
            const Eigen::Vector3d denom =
                static_cast<double>(t.sessions_per_subject[i]) * lam_prec + st.psi.cwiseInverse();
            st.u[i] = lam_prec.cwiseProduct(subj_sum[i]).cwiseQuotient(denom);
        }
        // (iii) fixed effects given u
        grand.setZero();
        for (std::size_t s = 0; s < ns; ++s) grand += st.b_ik[s] - st.u[t.subject[s]];
        st.b = grand / static_cast<double>(ns);
        // Moving the mean of u into b leaves b + u_i and h2 unchanged and can
        // only raise h3. Without it the sweeps crawl along that ridge.
        Eigen::Vector3d ubar = Eigen::Vector3d::Zero();
        for (const auto& ui : st.u) ubar += ui;
        ubar /= static_cast<double>(nsub);
        for (auto& ui : st.u) ui -= ubar;
        st.b += ubar;
        // (iv), (v) variance diagonals
        update_variances();

        const double prev = terms.h;
        terms = h_terms(t, qs, st);
        if (opt.record_trace) st.trace.push_back(terms.h);
        st.iterations = it;
        if (std::abs(terms.h - prev) <= opt.rel_tol * std::abs(prev)) {
            const HGradient g = h_gradient_norms(t, st, opt.common_lambda);
            if (g.b_ik < opt.grad_tol && g.u < opt.grad_tol) {
                st.converged = true;
                break;
            }
        }
    }
    st.boundary = static_cast<int>((st.lambda.array() <= floor).count() + (st.psi.array() <= floor).count());
    st.h_value = terms.h;
    st.h1 = terms.h1;
    st.h2 = terms.h2;
    st.h3 = terms.h3;
    return st;
}

HState cma_h_inner(const MultilevelDataset& data, double delta, const HOptions& opt) {
    return cma_h_inner(SessionTable::build(data), delta, opt);
}

HGradient h_gradient_norms(const SessionTable& t, const HState& st, bool common_lambda) {
    check_state_shape(t, st);
    const std::vector<SessionQuadratic> qs = quadratics(t, st);
    const Eigen::Vector3d lam_prec = st.lambda.cwiseInverse();
    const Eigen::Vector3d psi_prec = st.psi.cwiseInverse();
    HGradient g;
    std::vector<Eigen::Vector3d> du(st.u.size(), Eigen::Vector3d::Zero());
    Eigen::Vector3d db = Eigen::Vector3d::Zero();
    Eigen::Vector3d dev_sq = Eigen::Vector3d::Zero();
    double bik_sq = 0.0;
    for (std::size_t s = 0; s < t.n_sessions(); ++s) {
        const Eigen::Vector3d dev = st.b_ik[s] - st.b - st.u[t.subject[s]];
        const Eigen::Vector3d grad =
            qs[s].grad - qs[s].hess * st.b_ik[s] - lam_prec.cwiseProduct(dev);
        bik_sq += grad.squaredNorm();
        du[t.subject[s]] += lam_prec.cwiseProduct(dev);
        db += lam_prec.cwiseProduct(dev);
        dev_sq += dev.cwiseAbs2();
    }
    double u_sq = 0.0;
    Eigen::Vector3d u_sq_sum = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < st.u.size(); ++i) {
        u_sq += (du[i] - psi_prec.cwiseProduct(st.u[i])).squaredNorm();
        u_sq_sum += st.u[i].cwiseAbs2();
    }
    const double ns = static_cast<double>(t.n_sessions());
    const double nsub = static_cast<double>(st.u.size());
    Eigen::Vector3d dlam, dpsi;
    for (int j = 0; j < 3; ++j) {
        dlam[j] = -0.5 * ns / st.lambda[j] + 0.5 * dev_sq[j] / (st.lambda[j] * st.lambda[j]);
        dpsi[j] = -0.5 * nsub / st.psi[j] + 0.5 * u_sq_sum[j] / (st.psi[j] * st.psi[j]);
    }
    g.b_ik = std::sqrt(bik_sq);
    g.u = std::sqrt(u_sq);
    g.b = db.norm();
    if (common_lambda) {
        const double lam = st.lambda[0];
        g.lambda = std::abs(-1.5 * ns / lam + 0.5 * dev_sq.sum() / (lam * lam));
    } else {
        g.lambda = dlam.norm();
    }
    g.psi = dpsi.norm();
    return g;
}

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

DeltaOptimum optimize_delta(const std::function<double(double)>& objective,
                            const DeltaSearchOptions& opt) {
    GridSearchOptions g;
    g.lower = opt.lower;
    g.upper = opt.upper;
    g.grid_points = opt.grid_points;
    g.x_tol = opt.tol;
    const ScalarMaximum m = grid_then_brent(objective, g);
    return DeltaOptimum{m.x, m.value, m.flat};
}

namespace {

// Two-step second stage shared by ts, h-ts and the fixed-effect standard
// errors of the other methods.
struct TwoStep {
    RandomInterceptFit coord[3];
    RandomInterceptFit total;
};

double gls_se(const RandomInterceptFit& f, const GroupedValues& g) {
    double info = 0.0;
    for (const int k : g.counts()) info += k / (f.var_within + k * f.var_between);
    return 1.0 / std::sqrt(info);
}

MixedEffectsFit assemble_two_step(const SessionwiseFits& fits, Criterion crit, Method method) {
    MixedEffectsFit out;
    out.method = method;
    out.delta_hat = fits.delta;
    for (int j = 0; j < 3; ++j) {
        const GroupedValues g = group_coordinate(fits, j);
        const RandomInterceptFit f = fit_random_intercept(g, crit);
        out.fixed[j] = f.mean;
        out.fixed_se[j] = gls_se(f, g);
        out.psi[j] = f.var_between;
        out.lambda[j] = f.var_within;
        out.objective_value += f.loglik;
    }
    const GroupedValues gt = group_coordinate(fits, kTotal);
    const RandomInterceptFit ft = fit_random_intercept(gt, Criterion::REML);
    out.c_total = ft.mean;
    out.c_total_se = gls_se(ft, gt);
    out.indirect_prod = out.fixed[kA] * out.fixed[kB];
    out.indirect_diff = out.c_total - out.fixed[kC];
    out.per_session = fits;
    return out;
}

void require_subjects(const SessionTable& t) {
    if (t.n_subjects() < 2) {
        throw Error(ErrorKind::InvalidArgument, "multilevel fit needs at least 2 subjects");
    }
}

}  // namespace

double ml_objective(const SessionTable& table, double delta) {
    const SessionwiseFits fits = fit_sessionwise(table, delta);
    double total = 0.0;
    for (int j = 0; j < 3; ++j) {
        total += fit_random_intercept(group_coordinate(fits, j), Criterion::ML).loglik;
    }
    return total;
}

MixedEffectsFit cma_ml(const SessionTable& table, const MultilevelOptions& opt) {
    require_subjects(table);
    const DeltaOptimum best =
        optimize_delta([&](double d) { return ml_objective(table, d); }, opt.search);
    MixedEffectsFit out =
        assemble_two_step(fit_sessionwise(table, best.delta_hat), Criterion::ML, Method::ml);
    out.objective_value = best.value;
    out.flat_objective = best.flat;
    return out;
}

MixedEffectsFit cma_ml(const MultilevelDataset& data, const MultilevelOptions& opt) {
    return cma_ml(SessionTable::build(data), opt);
}

MixedEffectsFit cma_h_at(const SessionTable& table, double delta, const HOptions& opt) {
    require_subjects(table);
    const HState st = cma_h_inner(table, delta, opt);
    // Standard errors and C' come from the two-step stage at the same delta.
    MixedEffectsFit out =
        assemble_two_step(fit_sessionwise(table, delta), Criterion::REML, Method::h);
    out.fixed = st.b;
    out.psi = st.psi;
    out.lambda = st.lambda;
    out.indirect_prod = out.fixed[kA] * out.fixed[kB];
    out.indirect_diff = out.c_total - out.fixed[kC];
    out.objective_value = st.h_value;
    out.converged = st.converged;
    out.iterations = st.iterations;
    return out;
}

MixedEffectsFit cma_h(const SessionTable& table, const MultilevelOptions& opt) {
    require_subjects(table);
    // h grows without bound as a variance component shrinks to zero, so a
    // state held at the floor is a boundary supremum rather than a
    // stationary point. Candidates are ranked by how many components sit at
    // the floor first and by h second.
    std::map<double, std::pair<int, double>> cache;
    auto evaluate = [&](double d) {
        auto it = cache.find(d);
        if (it == cache.end()) {
            const HState st = cma_h_inner(table, d, opt.h);
            it = cache.emplace(d, std::pair{st.boundary, st.h_value}).first;
        }
        return it->second;
    };
    const int npts = std::max(opt.search.grid_points, 1);
    int fewest = std::numeric_limits<int>::max();
    for (int i = 0; i < npts; ++i) {
        const double d = npts > 1 ? opt.search.lower + (opt.search.upper - opt.search.lower) * i / (npts - 1)
                                  : 0.5 * (opt.search.lower + opt.search.upper);
        const auto [count, h] = evaluate(d);
        if (std::isfinite(h)) fewest = std::min(fewest, count);
    }
    const DeltaOptimum best = optimize_delta(
        [&](double d) {
            const auto [count, h] = evaluate(d);
            return count == fewest ? h : -std::numeric_limits<double>::infinity();
        },
        opt.search);
    MixedEffectsFit out = cma_h_at(table, best.delta_hat, opt.h);
    out.flat_objective = best.flat;
    return out;
}

MixedEffectsFit cma_h(const MultilevelDataset& data, const MultilevelOptions& opt) {
    return cma_h(SessionTable::build(data), opt);
}

MixedEffectsFit cma_ts(const SessionTable& table, double delta) {
    require_subjects(table);
    return assemble_two_step(fit_sessionwise(table, delta), Criterion::REML, Method::ts);
}

MixedEffectsFit cma_ts(const MultilevelDataset& data, double delta) {
    return cma_ts(SessionTable::build(data), delta);
}

MixedEffectsFit cma_h_ts(const SessionTable& table, const MultilevelOptions& opt) {
    const MixedEffectsFit h = cma_h(table, opt);
    MixedEffectsFit out = cma_ts(table, h.delta_hat);
    out.method = Method::h_ts;
    out.flat_objective = h.flat_objective;
    out.converged = h.converged;
    out.iterations = h.iterations;
    return out;
}

MixedEffectsFit cma_h_ts(const MultilevelDataset& data, const MultilevelOptions& opt) {
    return cma_h_ts(SessionTable::build(data), opt);
}

MixedEffectsFit fit_multilevel(const SessionTable& table, Method method,
                               std::optional<double> delta, const MultilevelOptions& opt) {
    switch (method) {
        case Method::ml: return cma_ml(table, opt);
        case Method::h: return cma_h(table, opt);
        case Method::h_ts: return cma_h_ts(table, opt);
        case Method::ts:
            if (!delta) {
                throw Error(ErrorKind::MissingDelta, "method ts requires a supplied delta");
            }
            return cma_ts(table, *delta);
    }
    throw Error(ErrorKind::InvalidArgument, "unknown method");
}

}  // namespace cma
