#include "cma/simulate.hpp"

#include "cma/parallel.hpp"
#include "cma/single_level.hpp"

#include <boost/random/bernoulli_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>

namespace cma {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorKind::InvalidArgument, what);
}

bool finite(double x) { return std::isfinite(x); }

// Neumaier compensated sum.
class Accumulator {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

// Fills z with Bernoulli(p) draws, redrawing the whole vector while it is
// constant so every session carries both arms.
void draw_treatment(Eigen::VectorXd& z, double p, rng::Engine& engine) {
    boost::random::bernoulli_distribution<double> bern(p);
    for (;;) {
        for (Eigen::Index t = 0; t < z.size(); ++t) z[t] = bern(engine) ? 1.0 : 0.0;
        const double s = z.sum();
        if (s > 0.0 && s < static_cast<double>(z.size())) return;
    }
}

TrialSeries draw_series(std::size_t n, double a, double b, double c, double p_treat,
                        const std::function<std::pair<double, double>()>& errors,
                        rng::Engine& engine) {
    TrialSeries s;
    const auto len = static_cast<Eigen::Index>(n);
    s.z.resize(len);
    s.m.resize(len);
    s.r.resize(len);
    draw_treatment(s.z, p_treat, engine);
    for (Eigen::Index t = 0; t < len; ++t) {
        const auto [e1, e2] = errors();
        s.m[t] = s.z[t] * a + e1;
        s.r[t] = s.z[t] * c + s.m[t] * b + e2;
    }
    return s;
}

Eigen::Vector3d draw_subject_effect(const MultilevelConfig& cfg, int subject) {
    rng::Engine eng = rng::stream(cfg.seed, {rng::kSubjectEffects, static_cast<std::uint64_t>(subject)});
    boost::random::normal_distribution<double> nd;
    Eigen::Vector3d u;
    u[kA] = std::sqrt(cfg.psi_diag.a) * nd(eng);
    u[kB] = std::sqrt(cfg.psi_diag.b) * nd(eng);
    u[kC] = std::sqrt(cfg.psi_diag.c) * nd(eng);
    return u;
}

Eigen::Vector3d draw_session_deviation(const MultilevelConfig& cfg, rng::Engine& eng) {
    boost::random::normal_distribution<double> nd;
    Eigen::Vector3d eta;
    eta[kA] = std::sqrt(cfg.lambda_diag.a) * nd(eng);
    eta[kB] = std::sqrt(cfg.lambda_diag.b) * nd(eng);
    eta[kC] = std::sqrt(cfg.lambda_diag.c) * nd(eng);
    return eta;
}

rng::Engine session_engine(const MultilevelConfig& cfg, int subject, int session) {
    return rng::stream(cfg.seed, {rng::kSessionDraws, static_cast<std::uint64_t>(subject),
                                  static_cast<std::uint64_t>(session)});
}

Eigen::Vector3d fixed_vector(const MultilevelConfig& cfg) {
    Eigen::Vector3d f;
    f[kA] = cfg.a;
    f[kB] = cfg.b;
    f[kC] = cfg.c;
    return f;
}

bool is_multilevel_estimator(Estimator e) {
    switch (e) {
        case Estimator::cma_delta:
        case Estimator::cma_delta_known:
        case Estimator::bk:
            return false;
        default:
            return true;
    }
}

std::map<std::string, double> path_quantities(const PathCoefficients& th, double prod, double diff) {
    return {{"A", th.a}, {"B", th.b}, {"C", th.c}, {"C_total", th.c_total}, {"AB_p", prod}, {"AB_d", diff}};
}

std::map<std::string, double> single_quantities(const SingleLevelFit& fit) {
    auto q = path_quantities(fit.theta, fit.indirect_prod, fit.indirect_diff);
    q["A_se"] = std::sqrt(fit.asym_cov_theta(0, 0));
    q["AB_se"] = std::sqrt(std::max(fit.indirect_var, 0.0));
    return q;
}

std::map<std::string, double> mixed_quantities(const MixedEffectsFit& fit) {
    std::map<std::string, double> q{
        {"delta", fit.delta_hat},
        {"A", fit.fixed[kA]},
        {"B", fit.fixed[kB]},
        {"C", fit.fixed[kC]},
        {"C_total", fit.c_total},
        {"AB_p", fit.indirect_prod},
        {"AB_d", fit.indirect_diff},
        {"sigma_a2", fit.psi[kA]},
        {"sigma_b2", fit.psi[kB]},
        {"sigma_c2", fit.psi[kC]},
        {"lambda_a2", fit.lambda[kA]},
        {"lambda_b2", fit.lambda[kB]},
        {"lambda_c2", fit.lambda[kC]},
        {"lambda2", fit.lambda.mean()},
    };
    return q;
}

TrialSeries pool_sessions(const MultilevelDataset& data) {
    Eigen::Index n = 0;
    for (const auto& [key, s] : data.sessions) n += s.z.size();
    TrialSeries out;
    out.z.resize(n);
    out.m.resize(n);
    out.r.resize(n);
    Eigen::Index at = 0;
    for (const auto& [key, s] : data.sessions) {
        out.z.segment(at, s.z.size()) = s.z;
        out.m.segment(at, s.z.size()) = s.m;
        out.r.segment(at, s.z.size()) = s.r;
        at += s.z.size();
    }
    return out;
}

double design_delta(const Design& design) {
    if (const auto* s = std::get_if<SingleLevelConfig>(&design)) return implied_noise(*s).delta;
    return std::get<MultilevelConfig>(design).delta;
}

// Runs every requested estimator on one dataset. The h-likelihood fit is
// shared by the h and h_ts estimators.
struct ReplicateResult {
    std::vector<std::optional<std::map<std::string, double>>> values;
    std::vector<std::string> errors;
};

ReplicateResult run_replicate(const Design& design, std::span<const Estimator> estimators,
                              std::uint64_t rep_seed, const MultilevelOptions& opt) {
    ReplicateResult out;
    out.values.resize(estimators.size());
    out.errors.resize(estimators.size());

    std::variant<TrialSeries, MultilevelDataset> data;
    std::optional<SessionTable> table;
    if (const auto* s = std::get_if<SingleLevelConfig>(&design)) {
        SingleLevelConfig cfg = *s;
        cfg.seed = rep_seed;
        data = gen_single(cfg);
    } else {
        MultilevelConfig cfg = std::get<MultilevelConfig>(design);
        cfg.seed = rep_seed;
        data = gen_multilevel(cfg);
    }

    std::optional<MixedEffectsFit> h_fit;
    const double delta = design_delta(design);
    for (std::size_t j = 0; j < estimators.size(); ++j) {
        try {
            const Estimator e = estimators[j];
            if (is_multilevel_estimator(e) && e != Estimator::pooled_delta) {
                const auto& ds = std::get<MultilevelDataset>(data);
                if (!table) table = SessionTable::build(ds);
                switch (e) {
                    case Estimator::ml: out.values[j] = mixed_quantities(cma_ml(*table, opt)); break;
                    case Estimator::h:
                    case Estimator::h_ts:
                        if (!h_fit) h_fit = cma_h(*table, opt);
                        if (e == Estimator::h) {
                            out.values[j] = mixed_quantities(*h_fit);
                        } else {
                            MixedEffectsFit f = cma_ts(*table, h_fit->delta_hat);
                            f.method = Method::h_ts;
                            out.values[j] = mixed_quantities(f);
                        }
                        break;
                    case Estimator::h_given: {
                        auto q = mixed_quantities(cma_h_at(*table, delta, opt.h));
                        q.erase("delta");
                        out.values[j] = q;
                        break;
                    }
                    case Estimator::ts_given: {
                        auto q = mixed_quantities(cma_ts(*table, delta));
                        q.erase("delta");
                        out.values[j] = q;
                        break;
                    }
                    case Estimator::kkb: {
                        auto q = mixed_quantities(cma_ts(*table, 0.0));
                        q.erase("delta");
                        out.values[j] = q;
                        break;
                    }
                    default: break;
                }
            } else {
                out.values[j] = estimate_quantities(design, e, data, opt);
            }
        } catch (const Error& err) {
            out.values[j].reset();
            out.errors[j] = err.what();
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

void validate(const SingleLevelConfig& cfg) {
    require(cfg.n >= kMinTrials, "n: at least 4 trials are required");
    require(finite(cfg.a) && finite(cfg.b) && finite(cfg.c), "a, b, c: must be finite");
    require(cfg.p_treat > 0.0 && cfg.p_treat < 1.0, "p_treat: must lie in (0, 1)");
    require(cfg.sigma1 > 0.0 && finite(cfg.sigma1), "sigma1: must be positive");
    require(cfg.sigma2 > 0.0 && finite(cfg.sigma2), "sigma2: must be positive");
    if (cfg.confounder_mode) {
        require(cfg.u_sd > 0.0 && finite(cfg.u_sd), "u_sd: must be positive");
        require(finite(cfg.g), "g: must be finite");
    } else {
        require(std::abs(cfg.delta) < 1.0, "delta: must lie in (-1, 1)");
    }
}

void validate(const MultilevelConfig& cfg) {
    require(cfg.n_subjects >= 2, "n_subjects: at least 2 subjects are required");
    require(cfg.n_sessions >= 1, "n_sessions: at least 1 session is required");
    require(cfg.trial_mean >= 10.0 && finite(cfg.trial_mean), "trial_mean: must be at least 10");
    require(finite(cfg.a) && finite(cfg.b) && finite(cfg.c), "a, b, c: must be finite");
    for (const auto& [name, v] : {std::pair{"psi_diag.a", cfg.psi_diag.a}, {"psi_diag.b", cfg.psi_diag.b},
                                  {"psi_diag.c", cfg.psi_diag.c}, {"lambda_diag.a", cfg.lambda_diag.a},
                                  {"lambda_diag.b", cfg.lambda_diag.b}, {"lambda_diag.c", cfg.lambda_diag.c}}) {
        require(v >= 0.0 && finite(v), std::string(name) + ": must be non-negative");
    }
    require(cfg.sigma1 > 0.0 && finite(cfg.sigma1), "sigma1: must be positive");
    require(cfg.sigma2 > 0.0 && finite(cfg.sigma2), "sigma2: must be positive");
    require(std::abs(cfg.delta) < 1.0, "delta: must lie in (-1, 1)");
    require(cfg.p_treat > 0.0 && cfg.p_treat < 1.0, "p_treat: must lie in (0, 1)");
}

NoiseCov implied_noise(const SingleLevelConfig& cfg) {
    if (!cfg.confounder_mode) return NoiseCov::make(cfg.sigma1, cfg.sigma2, cfg.delta);
    const double u2 = cfg.u_sd * cfg.u_sd;
    const double s1 = std::sqrt(u2 + cfg.sigma1 * cfg.sigma1);
    const double s2 = std::sqrt(cfg.g * cfg.g * u2 + cfg.sigma2 * cfg.sigma2);
    return NoiseCov::make(s1, s2, cfg.g * u2 / (s1 * s2));
}

TrialSeries gen_single(const SingleLevelConfig& cfg, rng::Engine& engine) {
    validate(cfg);
    boost::random::normal_distribution<double> nd;
    if (cfg.confounder_mode) {
        auto errors = [&]() {
            const double u = cfg.u_sd * nd(engine);
            const double e1 = u + cfg.sigma1 * nd(engine);
            const double e2 = cfg.g * u + cfg.sigma2 * nd(engine);
            return std::pair{e1, e2};
        };
        return draw_series(cfg.n, cfg.a, cfg.b, cfg.c, cfg.p_treat, errors, engine);
    }
    const double w = std::sqrt(1.0 - cfg.delta * cfg.delta);
    auto errors = [&]() {
        const double x1 = nd(engine);
        const double x2 = nd(engine);
        return std::pair{cfg.sigma1 * x1, cfg.sigma2 * (cfg.delta * x1 + w * x2)};
    };
    return draw_series(cfg.n, cfg.a, cfg.b, cfg.c, cfg.p_treat, errors, engine);
}

TrialSeries gen_single(const SingleLevelConfig& cfg) {
    rng::Engine engine = rng::stream(cfg.seed, {rng::kSingleSession});
    return gen_single(cfg, engine);
}

std::map<SessionKey, Eigen::Vector3d> true_session_coefficients(const MultilevelConfig& cfg) {
    validate(cfg);
    std::map<SessionKey, Eigen::Vector3d> out;
    const Eigen::Vector3d fixed = fixed_vector(cfg);
    for (int i = 1; i <= cfg.n_subjects; ++i) {
        const Eigen::Vector3d u = draw_subject_effect(cfg, i);
        for (int k = 1; k <= cfg.n_sessions; ++k) {
            rng::Engine eng = session_engine(cfg, i, k);
            out.emplace(SessionKey{i, k}, fixed + u + draw_session_deviation(cfg, eng));
        }
    }
    return out;
}

MultilevelDataset gen_multilevel(const MultilevelConfig& cfg) {
    validate(cfg);
    MultilevelDataset data;
    const Eigen::Vector3d fixed = fixed_vector(cfg);
    SingleLevelConfig sc;
    sc.sigma1 = cfg.sigma1;
    sc.sigma2 = cfg.sigma2;
    sc.delta = cfg.delta;
    sc.p_treat = cfg.p_treat;
    for (int i = 1; i <= cfg.n_subjects; ++i) {
        const Eigen::Vector3d u = draw_subject_effect(cfg, i);
        for (int k = 1; k <= cfg.n_sessions; ++k) {
            rng::Engine eng = session_engine(cfg, i, k);
            const Eigen::Vector3d coef = fixed + u + draw_session_deviation(cfg, eng);
            boost::random::poisson_distribution<int, double> pois(cfg.trial_mean);
            sc.n = std::max<std::size_t>(kMinSessionTrials, static_cast<std::size_t>(pois(eng)));
            sc.a = coef[kA];
            sc.b = coef[kB];
            sc.c = coef[kC];
            data.sessions.emplace(SessionKey{i, k}, gen_single(sc, eng));
        }
    }
    return data;
}

// ---------------------------------------------------------------------------
// Named designs
// ---------------------------------------------------------------------------

const char* to_string(NullPattern p) {
    switch (p) {
        case NullPattern::none: return "alternative";
        case NullPattern::a_zero: return "A=0";
        case NullPattern::b_zero: return "B=0";
        case NullPattern::ab_zero: return "A=B=0";
    }
    return "?";
}

namespace {

template <class Cfg>
void apply_null(Cfg& cfg, NullPattern p) {
    if (p == NullPattern::a_zero || p == NullPattern::ab_zero) cfg.a = 0.0;
    if (p == NullPattern::b_zero || p == NullPattern::ab_zero) cfg.b = 0.0;
}

}  // namespace

SingleLevelConfig table1_design(NullPattern pattern, double delta) {
    SingleLevelConfig cfg;
    cfg.n = 100;
    cfg.a = -5.0;
    cfg.b = -10.0;
    cfg.c = 4.0;
    cfg.sigma1 = 1.0;
    cfg.sigma2 = 1.0;
    cfg.delta = delta;
    cfg.p_treat = 0.5;
    apply_null(cfg, pattern);
    return cfg;
}

MultilevelConfig table2_design(NullPattern pattern, double delta) {
    MultilevelConfig cfg;
    cfg.n_subjects = 50;
    cfg.n_sessions = 4;
    cfg.trial_mean = 100.0;
    cfg.a = -5.0;
    cfg.b = -10.0;
    cfg.c = 4.0;
    cfg.psi_diag = {0.5, 0.5, 0.5};
    cfg.lambda_diag = {0.5, 0.5, 0.5};
    cfg.sigma1 = 1.0;
    cfg.sigma2 = 1.0;
    cfg.delta = delta;
    cfg.p_treat = 0.5;
    apply_null(cfg, pattern);
    return cfg;
}

MultilevelConfig fmri_mimic_design() {
    // Coefficients at the real-data CMA-h estimates. Error SDs are matched
    // to the pooled single-level interval widths, and the variance
    // components to the mixed-model interval widths of A, B and C once
    // session-level estimation noise is removed.
    MultilevelConfig cfg;
    cfg.n_subjects = 97;
    cfg.n_sessions = 4;
    cfg.trial_mean = 91.0;
    cfg.a = 0.0099;
    cfg.b = 0.5455;
    cfg.c = -0.0017;
    cfg.psi_diag = {0.0004, 0.025, 0.003};
    cfg.lambda_diag = {0.0015, 0.05, 0.011};
    cfg.sigma1 = 0.35;
    cfg.sigma2 = 0.165;
    cfg.delta = -0.254;
    cfg.p_treat = 0.25;
    return cfg;
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

const char* to_string(Estimator e) {
    switch (e) {
        case Estimator::cma_delta: return "CMA-delta";
        case Estimator::cma_delta_known: return "CMA-delta-known";
        case Estimator::bk: return "BK";
        case Estimator::ml: return "CMA-ml";
        case Estimator::h: return "CMA-h";
        case Estimator::h_ts: return "CMA-h-ts";
        case Estimator::h_given: return "CMA-h(given delta)";
        case Estimator::ts_given: return "CMA-ts";
        case Estimator::kkb: return "KKB";
        case Estimator::pooled_delta: return "CMA-delta(pooled)";
    }
    return "?";
}

const MethodSummary& MonteCarloSummary::method(Estimator e) const {
    for (const auto& m : methods) {
        if (m.estimator == e) return m;
    }
    throw Error(ErrorKind::InvalidArgument, std::string("estimator not in summary: ") + to_string(e));
}

std::uint64_t replication_seed(std::uint64_t seed, int rep) {
    return rng::derive_seed(seed, {rng::kReplication, static_cast<std::uint64_t>(rep)});
}

std::map<std::string, double> design_truth(const Design& design) {
    double a = 0, b = 0, c = 0;
    std::map<std::string, double> t;
    if (const auto* s = std::get_if<SingleLevelConfig>(&design)) {
        a = s->a;
        b = s->b;
        c = s->c;
        t["delta"] = implied_noise(*s).delta;
    } else {
        const auto& m = std::get<MultilevelConfig>(design);
        a = m.a;
        b = m.b;
        c = m.c;
        t["delta"] = m.delta;
        t["sigma_a2"] = m.psi_diag.a;
        t["sigma_b2"] = m.psi_diag.b;
        t["sigma_c2"] = m.psi_diag.c;
        t["lambda_a2"] = m.lambda_diag.a;
        t["lambda_b2"] = m.lambda_diag.b;
        t["lambda_c2"] = m.lambda_diag.c;
        t["lambda2"] = (m.lambda_diag.a + m.lambda_diag.b + m.lambda_diag.c) / 3.0;
    }
    t["A"] = a;
    t["B"] = b;
    t["C"] = c;
    t["C_total"] = c + a * b;
    t["AB_p"] = a * b;
    t["AB_d"] = a * b;
    return t;
}

std::map<std::string, double> estimate_quantities(const Design& design, Estimator e,
                                                  const std::variant<TrialSeries, MultilevelDataset>& data,
                                                  const MultilevelOptions& opt) {
    const double delta = design_delta(design);
    if (!is_multilevel_estimator(e)) {
        const auto* series = std::get_if<TrialSeries>(&data);
        require(series != nullptr, std::string(to_string(e)) + " needs a single-session dataset");
        switch (e) {
            case Estimator::cma_delta: return single_quantities(fit_single(*series, delta));
            case Estimator::cma_delta_known:
                return single_quantities(fit_single_known(*series, implied_noise(std::get<SingleLevelConfig>(design))));
            default: return single_quantities(fit_baron_kenny(*series));
        }
    }
    const auto* ds = std::get_if<MultilevelDataset>(&data);
    require(ds != nullptr, std::string(to_string(e)) + " needs a multilevel dataset");
    if (e == Estimator::pooled_delta) return single_quantities(fit_single(pool_sessions(*ds), delta));
    const SessionTable table = SessionTable::build(*ds);
    std::map<std::string, double> q;
    switch (e) {
        case Estimator::ml: return mixed_quantities(cma_ml(table, opt));
        case Estimator::h: return mixed_quantities(cma_h(table, opt));
        case Estimator::h_ts: return mixed_quantities(cma_h_ts(table, opt));
        case Estimator::h_given: q = mixed_quantities(cma_h_at(table, delta, opt.h)); break;
        case Estimator::ts_given: q = mixed_quantities(cma_ts(table, delta)); break;
        default: q = mixed_quantities(cma_ts(table, 0.0)); break;
    }
    q.erase("delta");
    return q;
}

MonteCarloSummary monte_carlo(const Design& design, std::span<const Estimator> estimators, int reps,
                              std::uint64_t seed, const MonteCarloOptions& opt) {
    require(reps >= 1, "reps: at least one replication is required");
    require(!estimators.empty(), "no estimators requested");
    const bool multilevel = std::holds_alternative<MultilevelConfig>(design);
    std::visit([](const auto& cfg) { validate(cfg); }, design);
    for (const Estimator e : estimators) {
        require(is_multilevel_estimator(e) == multilevel,
                std::string(to_string(e)) + " does not apply to this design");
    }

    std::vector<ReplicateResult> results(static_cast<std::size_t>(reps));
    parallel_for(results.size(), opt.threads, [&](std::size_t r) {
        results[r] = run_replicate(design, estimators, replication_seed(seed, static_cast<int>(r)),
                                   opt.multilevel);
    });

    MonteCarloSummary summary;
    summary.reps = reps;
    summary.seed = seed;
    summary.truth = design_truth(design);
    for (std::size_t j = 0; j < estimators.size(); ++j) {
        MethodSummary ms;
        ms.estimator = estimators[j];
        for (int r = 0; r < reps; ++r) {
            const auto& res = results[static_cast<std::size_t>(r)];
            if (!res.values[j]) {
                ++ms.failures;
                ms.failure_messages.push_back("replication " + std::to_string(r) + ": " + res.errors[j]);
                continue;
            }
            for (const auto& [name, v] : *res.values[j]) ms.quantities[name].values.push_back(v);
        }
        if (ms.failures > opt.max_failure_rate * reps) {
            throw Error(ErrorKind::ReplicateFailure,
                        std::string(to_string(estimators[j])) + ": " + std::to_string(ms.failures) + " of " +
                            std::to_string(reps) + " replications failed; first: " +
                            ms.failure_messages.front());
        }
        for (auto& [name, st] : ms.quantities) {
            st.count = static_cast<int>(st.values.size());
            Accumulator sum;
            for (const double v : st.values) sum.add(v);
            st.mean = sum.value() / st.count;
            Accumulator ss;
            for (const double v : st.values) ss.add((v - st.mean) * (v - st.mean));
            st.sd = st.count > 1 ? std::sqrt(ss.value() / (st.count - 1)) : 0.0;
            const auto truth = summary.truth.find(name);
            if (truth == summary.truth.end()) {
                st.mse = std::numeric_limits<double>::quiet_NaN();
            } else {
                Accumulator se;
                for (const double v : st.values) se.add((v - truth->second) * (v - truth->second));
                st.mse = se.value() / st.count;
            }
        }
        summary.methods.push_back(std::move(ms));
    }
    return summary;
}

}  // namespace cma
