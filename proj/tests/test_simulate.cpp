#include "cma/simulate.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

using namespace cma;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

double correlation(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    const Eigen::ArrayXd a = x.array() - x.mean();
    const Eigen::ArrayXd b = y.array() - y.mean();
    return (a * b).sum() / std::sqrt((a * a).sum() * (b * b).sum());
}

struct Errors {
    Eigen::VectorXd e1, e2;
};

Errors true_errors(const TrialSeries& s, double a, double b, double c) {
    return {s.m - a * s.z, s.r - c * s.z - b * s.m};
}

}  // namespace

TEST_CASE("noiseless limit") {
    auto cfg = table1_design(NullPattern::none, 0.5);
    cfg.sigma1 = cfg.sigma2 = 1e-8;
    cfg.seed = 5;
    const auto s = gen_single(cfg);
    CHECK((s.m - cfg.a * s.z).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((s.r - cfg.c * s.z - cfg.b * s.m).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(s.n() == 100);
}

TEST_CASE("error correlation and treatment rate at large n") {
    auto cfg = table1_design(NullPattern::none, 0.5);
    cfg.n = 100000;
    cfg.seed = 6;
    const auto s = gen_single(cfg);
    const auto e = true_errors(s, cfg.a, cfg.b, cfg.c);
    CHECK_THAT(correlation(e.e1, e.e2), WithinAbs(0.5, 0.01));
    CHECK_THAT(s.z.mean(), WithinAbs(0.5, 0.01));
    for (Eigen::Index i = 0; i < s.z.size(); ++i) REQUIRE((s.z[i] == 0.0 || s.z[i] == 1.0));
}

TEST_CASE("conditional means of mediator and outcome") {
    auto cfg = table1_design(NullPattern::none, -0.3);
    cfg.n = 100000;
    cfg.p_treat = 0.3;
    cfg.seed = 7;
    const auto s = gen_single(cfg);
    for (double zv : {0.0, 1.0}) {
        std::vector<double> m, r;
        for (Eigen::Index i = 0; i < s.z.size(); ++i)
            if (s.z[i] == zv) {
                m.push_back(s.m[i]);
                r.push_back(s.r[i]);
            }
        const double nm = static_cast<double>(m.size());
        const double mm = std::accumulate(m.begin(), m.end(), 0.0) / nm;
        const double mr = std::accumulate(r.begin(), r.end(), 0.0) / nm;
        // Var(R | z) = B^2 s1^2 + 2 B delta s1 s2 + s2^2
        const double var_r = cfg.b * cfg.b + 2 * cfg.b * cfg.delta + 1.0;
        CHECK(std::abs(mm - cfg.a * zv) < 3.0 / std::sqrt(nm));
        CHECK(std::abs(mr - (cfg.c + cfg.b * cfg.a) * zv) < 3.0 * std::sqrt(var_r / nm));
    }
}

TEST_CASE("confounder parameterization") {
    SingleLevelConfig cfg = table1_design(NullPattern::none, 0.0);
    cfg.confounder_mode = true;
    cfg.u_sd = 1.0;
    cfg.g = 2.0;
    cfg.sigma1 = 2.0;  // 1 + 4 = 5
    cfg.sigma2 = 1.0;  // 4 + 1 = 5
    const auto nc = implied_noise(cfg);
    CHECK_THAT(nc.sigma1, WithinRel(std::sqrt(5.0), 1e-14));
    CHECK_THAT(nc.sigma2, WithinRel(std::sqrt(5.0), 1e-14));
    CHECK_THAT(nc.delta, WithinRel(0.4, 1e-14));
    cfg.n = 100000;
    cfg.seed = 8;
    const auto s = gen_single(cfg);
    const auto e = true_errors(s, cfg.a, cfg.b, cfg.c);
    CHECK_THAT(correlation(e.e1, e.e2), WithinAbs(0.4, 0.01));
}

TEST_CASE("confounder and direct parameterizations give the same estimates on average") {
    SingleLevelConfig conf = table1_design(NullPattern::none, 0.0);
    conf.confounder_mode = true;
    conf.g = 2.0;
    conf.sigma1 = 2.0;
    conf.sigma2 = 1.0;
    auto direct = table1_design(NullPattern::none, 0.4);
    direct.sigma1 = direct.sigma2 = std::sqrt(5.0);
    const std::vector<Estimator> est{Estimator::bk};
    const auto a = monte_carlo(conf, est, 400, 1);
    const auto b = monte_carlo(direct, est, 400, 2);
    for (const char* q : {"A", "B", "C"}) {
        const auto& x = a.method(Estimator::bk).quantities.at(q);
        const auto& y = b.method(Estimator::bk).quantities.at(q);
        const double se = std::sqrt((x.sd * x.sd + y.sd * y.sd) / 400.0);
        CHECK(std::abs(x.mean - y.mean) < 3.5 * se);
    }
}

TEST_CASE("degenerate variances give identical session coefficients") {
    auto cfg = table2_design(NullPattern::none, 0.5);
    cfg.psi_diag = {0, 0, 0};
    cfg.lambda_diag = {0, 0, 0};
    cfg.n_subjects = 5;
    for (const auto& [k, v] : true_session_coefficients(cfg)) {
        CHECK(v[kA] == cfg.a);
        CHECK(v[kB] == cfg.b);
        CHECK(v[kC] == cfg.c);
    }
}

TEST_CASE("multilevel layout and trial counts") {
    auto cfg = table2_design(NullPattern::none, 0.5);
    cfg.seed = 12;
    const auto d = gen_multilevel(cfg);
    CHECK(d.sessions.size() == 200);
    CHECK(d.n_subjects() == 50);
    const double mean_n = static_cast<double>(d.total_trials()) / 200.0;
    CHECK(std::abs(mean_n - 100.0) < 3.0 * std::sqrt(100.0 / 200.0));
    for (const auto& [k, s] : d.sessions) CHECK(s.n() >= kMinSessionTrials);
    CHECK_NOTHROW(validate_dataset(d));

    auto tiny = cfg;
    tiny.trial_mean = 10;
    tiny.n_subjects = 30;
    for (const auto& [k, s] : gen_multilevel(tiny).sessions) CHECK(s.n() >= kMinSessionTrials);
}

TEST_CASE("variance decomposition of session coefficients") {
    auto cfg = table2_design(NullPattern::none, 0.5);
    cfg.n_subjects = 200;
    cfg.seed = 13;
    Eigen::MatrixXd v(800, 3);
    int row = 0;
    for (const auto& [k, c] : true_session_coefficients(cfg)) v.row(row++) = c.transpose();
    REQUIRE(row == 800);
    for (int j = 0; j < 3; ++j) {
        const Eigen::ArrayXd col = v.col(j).array() - v.col(j).mean();
        CHECK_THAT((col * col).sum() / 799.0, WithinAbs(1.0, 0.15));
    }
}

TEST_CASE("named designs") {
    const auto t1 = table1_design(NullPattern::a_zero, 0.5);
    CHECK(t1.a == 0.0);
    CHECK(t1.b == -10.0);
    const auto t2 = table2_design(NullPattern::ab_zero, 0.0);
    CHECK(t2.a == 0.0);
    CHECK(t2.b == 0.0);
    CHECK(t2.c == 4.0);
    CHECK(t2.delta == 0.0);
    const auto f = fmri_mimic_design();
    CHECK(f.n_subjects == 97);
    CHECK(f.n_sessions == 4);
    CHECK(f.trial_mean == 91.0);
    CHECK(f.p_treat == 0.25);
    CHECK(std::string(to_string(NullPattern::b_zero)) == "B=0");
}

TEST_CASE("config validation") {
    auto s = table1_design(NullPattern::none, 0.5);
    s.delta = 1.0;
    CHECK_THROWS_AS(validate(s), Error);
    s = table1_design(NullPattern::none, 0.5);
    s.p_treat = 1.0;
    CHECK_THROWS_AS(validate(s), Error);
    auto m = table2_design(NullPattern::none, 0.5);
    m.n_subjects = 1;
    CHECK_THROWS_AS(validate(m), Error);
    m = table2_design(NullPattern::none, 0.5);
    m.lambda_diag.b = -0.1;
    CHECK_THROWS_AS(validate(m), Error);
    m = table2_design(NullPattern::none, 0.5);
    m.trial_mean = 5;
    CHECK_THROWS_AS(validate(m), Error);
}

TEST_CASE("generators are deterministic") {
    auto cfg = table2_design(NullPattern::none, 0.5);
    cfg.n_subjects = 6;
    cfg.seed = 99;
    const auto a = gen_multilevel(cfg), b = gen_multilevel(cfg);
    REQUIRE(a.sessions.size() == b.sessions.size());
    for (const auto& [k, s] : a.sessions) {
        CHECK(s.z == b.sessions.at(k).z);
        CHECK(s.m == b.sessions.at(k).m);
        CHECK(s.r == b.sessions.at(k).r);
    }
    cfg.seed = 100;
    CHECK(gen_multilevel(cfg).sessions.at({1, 1}).m != a.sessions.at({1, 1}).m);
}

TEST_CASE("Monte Carlo summaries do not depend on the worker count") {
    auto cfg = table2_design(NullPattern::none, 0.5);
    cfg.n_subjects = 6;
    cfg.n_sessions = 2;
    cfg.trial_mean = 40;
    const std::vector<Estimator> est{Estimator::ts_given, Estimator::kkb, Estimator::ml};
    MonteCarloOptions one, four;
    one.threads = 1;
    four.threads = 4;
    const auto a = monte_carlo(cfg, est, 6, 77, one);
    const auto b = monte_carlo(cfg, est, 6, 77, four);
    for (const auto e : est)
        for (const auto& [q, st] : a.method(e).quantities) {
            CHECK(st.values == b.method(e).quantities.at(q).values);
            CHECK(st.mean == b.method(e).quantities.at(q).mean);
        }
}

TEST_CASE("a single replication is a single labeled fit") {
    const auto cfg = table1_design(NullPattern::none, 0.5);
    const std::vector<Estimator> est{Estimator::cma_delta};
    const auto s = monte_carlo(cfg, est, 1, 4);
    CHECK(s.reps == 1);
    auto rep = cfg;
    rep.seed = replication_seed(4, 0);
    const auto q = estimate_quantities(cfg, Estimator::cma_delta, gen_single(rep));
    const auto& m = s.method(Estimator::cma_delta);
    CHECK(m.failures == 0);
    for (const auto& [name, v] : q) {
        CHECK(m.quantities.at(name).count == 1);
        CHECK(m.quantities.at(name).mean == v);
    }
    CHECK_THROWS_AS(monte_carlo(cfg, est, 0, 4), Error);
}

TEST_CASE("design truth") {
    const auto t = design_truth(table1_design(NullPattern::none, 0.5));
    CHECK(t.at("C_total") == 54.0);
    CHECK(t.at("AB_p") == 50.0);
    CHECK(t.at("delta") == 0.5);
    const auto m = design_truth(table2_design(NullPattern::b_zero, 0.5));
    CHECK(m.at("AB_d") == 0.0);
    CHECK(m.at("lambda2") == 0.5);
}

TEST_CASE("table1 design: estimator means") {
    const auto cfg = table1_design(NullPattern::none, 0.5);
    const std::vector<Estimator> est{Estimator::cma_delta, Estimator::bk};
    const auto s = monte_carlo(cfg, est, 1000, 20261019);
    const auto& c = s.method(Estimator::cma_delta).quantities;
    const auto& bk = s.method(Estimator::bk).quantities;
    auto near = [](const QuantityStats& q, double target) {
        return std::abs(q.mean - target) < 3.0 * q.sd / std::sqrt(static_cast<double>(q.count));
    };
    CHECK(near(c.at("A"), -5.0));
    CHECK(near(c.at("B"), -10.0));
    CHECK(near(c.at("C"), 4.0));
    CHECK(near(bk.at("B"), -9.5));
    CHECK(near(bk.at("C"), 6.5));
    CHECK_THAT(c.at("A").sd, WithinRel(0.200, 0.1));
}
