#include "cma/single_level.hpp"
#include "cma/simulate.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

using namespace cma;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

TrialSeries make(std::initializer_list<double> z, std::initializer_list<double> m, std::initializer_list<double> r) {
    TrialSeries s;
    s.z = Eigen::Map<const Eigen::VectorXd>(z.begin(), static_cast<Eigen::Index>(z.size()));
    s.m = Eigen::Map<const Eigen::VectorXd>(m.begin(), static_cast<Eigen::Index>(m.size()));
    s.r = Eigen::Map<const Eigen::VectorXd>(r.begin(), static_cast<Eigen::Index>(r.size()));
    return s;
}

const TrialSeries kHand = make({0.5, -0.5, 0.5, -0.5}, {1, -1, -1, 1}, {1, -1, -1, 1});

TrialSeries seeded(std::size_t n, std::uint64_t seed, double delta = 0.5) {
    auto cfg = table1_design(NullPattern::none, delta);
    cfg.n = n;
    cfg.seed = seed;
    return gen_single(cfg);
}

// Plain two-regression estimates computed without the library: least squares
// of M on Z, then of R on (Z, M), via Eigen's QR on design matrices with an
// explicit intercept column.
struct Ols {
    double a, c, b, c_total;
};

Ols two_stage_ols(const TrialSeries& raw) {
    const Eigen::Index n = raw.z.size();
    Eigen::MatrixXd x1(n, 2), x2(n, 3);
    x1 << Eigen::VectorXd::Ones(n), raw.z;
    x2 << Eigen::VectorXd::Ones(n), raw.z, raw.m;
    const Eigen::VectorXd g1 = x1.colPivHouseholderQr().solve(raw.m);
    const Eigen::VectorXd g2 = x2.colPivHouseholderQr().solve(raw.r);
    const Eigen::VectorXd g3 = x1.colPivHouseholderQr().solve(raw.r);
    return {g1[1], g2[1], g2[2], g3[1]};
}

}  // namespace

TEST_CASE("fit_a and fit_c_total on hand data") {
    CHECK(fit_a(kHand) == 0.0);
    const auto s2 = make({0.5, -0.5, 0.5, -0.5}, {1, -1, 1, -1}, {0, 0, 0, 0});
    CHECK(fit_a(s2) == 2.0);
    CHECK(fit_c_total(kHand) == 0.0);
    auto s3 = kHand;
    s3.r = 3.0 * s3.z;
    CHECK(fit_c_total(s3) == 3.0);
    auto flat = kHand;
    flat.z.setZero();
    CHECK_THROWS_AS(fit_a(flat), Error);
}

TEST_CASE("residual_cov on hand data") {
    const auto rc = residual_cov(kHand);
    CHECK_THAT(rc.s11, WithinAbs(1.0, 1e-15));
    CHECK_THAT(rc.s12, WithinAbs(1.0, 1e-15));
    CHECK_THAT(rc.s22, WithinAbs(1.0, 1e-15));
    auto perfect = kHand;
    perfect.m = 2.0 * perfect.z;
    CHECK_THAT(residual_cov(perfect).s11, WithinAbs(0.0, 1e-15));
}

TEST_CASE("residual_cov matches its moment targets at n = 1000") {
    // sigma1 = sigma2 = 1, delta = 0.5, B = -10
    std::vector<double> s11, s12, s22;
    for (std::uint64_t k = 0; k < 200; ++k) {
        const auto rc = residual_cov(center(seeded(1000, 100 + k)));
        s11.push_back(rc.s11);
        s12.push_back(rc.s12);
        s22.push_back(rc.s22);
    }
    auto check = [](const std::vector<double>& v, double target) {
        double mean = 0, ss = 0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        for (double x : v) ss += (x - mean) * (x - mean);
        const double se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
        CHECK(std::abs(mean - target) < 3.0 * se);
    };
    check(s11, 1.0);
    check(s12, -9.5);
    check(s22, 91.0);
}

TEST_CASE("estimate_sigmas hand values") {
    const auto v1 = estimate_sigmas({1, 0, 1}, 0.0);
    CHECK(v1.sigma1_sq == 1.0);
    CHECK(v1.sigma2_sq == 1.0);
    CHECK_THAT(estimate_sigmas({1, 1, 1}, 0.3).sigma2_sq, WithinAbs(0.0, 1e-15));
    CHECK_THAT(estimate_sigmas({1, -9.5, 91}, 0.5).sigma2_sq, WithinRel(1.0, 1e-12));
    CHECK_THROWS_AS(estimate_sigmas({0, 0, 1}, 0.0), Error);
    try {
        estimate_sigmas({1, 2, 1}, 0.0);
        FAIL("expected NegativeVariance");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NegativeVariance);
    }
}

TEST_CASE("fit_theta hand values") {
    const auto t0 = fit_theta(kHand, NoiseCov::make(1, 1, 0));
    CHECK_THAT(t0.a, WithinAbs(0.0, 1e-15));
    CHECK_THAT(t0.c, WithinAbs(0.0, 1e-15));
    CHECK_THAT(t0.b, WithinAbs(1.0, 1e-15));
    const auto t5 = fit_theta(kHand, NoiseCov::make(1, 1, 0.5));
    CHECK_THAT(t5.b, WithinAbs(0.5, 1e-15));
    CHECK_THAT(t5.c, WithinAbs(0.0, 1e-15));
    auto collinear = kHand;
    collinear.m = 2.0 * collinear.z;
    try {
        fit_theta(collinear, NoiseCov::make(1, 1, 0));
        FAIL("expected SingularDesign");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::SingularDesign);
    }
}

TEST_CASE("fit_theta equals a numerical constrained maximizer of the objective") {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        const auto c = center(seeded(50, seed));
        for (double delta : {-0.6, 0.0, 0.5}) {
            const double s1 = 1.3, s2 = 0.8;
            const auto closed = fit_theta(c, NoiseCov::make(s1, s2, delta));
            const auto x = oracle::maximize(
                [&](const std::vector<double>& p) { return oracle::eq8_objective(c, p[0], p[1], p[2], s1, s2, delta); },
                {0.0, 0.0, 0.0}, 2.0);
            CHECK_THAT(x[0], WithinAbs(closed.a, 1e-6));
            CHECK_THAT(x[1], WithinAbs(closed.b, 1e-6));
            CHECK_THAT(x[2], WithinAbs(closed.c, 1e-6));
        }
    }
}

TEST_CASE("fit_b_plugin hand values and consistency with fit_theta") {
    CHECK_THAT(fit_b_plugin({1, 1, 1}, 0.7), WithinAbs(1.0, 1e-12));
    CHECK_THAT(fit_b_plugin({1, -9.5, 91}, 0.5), WithinAbs(-10.0, 1e-12));
    CHECK_THAT(fit_b_plugin({2, 3, 10}, 0.0), WithinAbs(1.5, 1e-15));
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto c = center(seeded(80, seed));
        for (double delta : {-0.8, -0.2, 0.3, 0.9}) {
            const auto rc = residual_cov(c);
            const auto v = estimate_sigmas(rc, delta);
            const auto th = fit_theta(c, NoiseCov::make(std::sqrt(v.sigma1_sq), std::sqrt(v.sigma2_sq), delta));
            CHECK_THAT(fit_b_plugin(rc, delta), WithinAbs(th.b, 1e-9 * (1 + std::abs(th.b))));
        }
    }
}

TEST_CASE("loglik hand values and local optimality") {
    auto exact = kHand;
    exact.m = 2.0 * exact.z;
    exact.r = exact.m;
    CHECK(loglik(exact, {2, 1, 0, 2}, NoiseCov::make(1, 1, 0)) == 0.0);
    // residual Frobenius norm^2 = 7 under identity covariance
    auto s = kHand;
    s.m = Eigen::Vector4d(1, 1, 1, 0);
    s.r = Eigen::Vector4d(1, 1, 1, 1);
    s.z.setZero();
    CHECK_THAT(loglik(s, {0, 0, 0, 0}, NoiseCov::make(1, 1, 0)), WithinAbs(-7.0, 1e-14));

    const auto c = center(seeded(100, 77));
    const auto noise = NoiseCov::make(1.0, 1.0, 0.5);
    const auto best = fit_theta(c, noise);
    const double top = loglik(c, best, noise);
    std::mt19937_64 eng(3);
    std::normal_distribution<double> nd(0.0, 0.05);
    for (int i = 0; i < 1000; ++i) {
        auto p = best;
        p.a += nd(eng);
        p.b += nd(eng);
        p.c += nd(eng);
        CHECK(loglik(c, p, noise) <= top);
    }
}

TEST_CASE("asymptotic covariance formulas") {
    const PathCoefficients th{-5, -10, 4, 54};
    const Eigen::Matrix3d v = asym_cov_theta(th, NoiseCov::make(1, 1, 0), 0.25, 1);
    Eigen::Matrix3d expect;
    expect << 4, 0, 0, 0, 29, 5, 0, 5, 1;
    CHECK((v - expect).cwiseAbs().maxCoeff() < 1e-12);

    const Eigen::Matrix3d v2 = asym_cov_theta(th, NoiseCov::make(2, 3, 0), 0.3, 1);
    CHECK_THAT(v2(1, 2), WithinAbs(v2(2, 1), 1e-15));
    CHECK_THAT(v2(2, 2), WithinRel(9.0 / 4.0, 1e-14));

    const Eigen::Matrix3d v100 = asym_cov_theta(th, NoiseCov::make(1, 1, 0.5), 0.25, 100);
    CHECK_THAT(std::sqrt(v100(0, 0)), WithinRel(0.2, 1e-12));

    const Eigen::Matrix2d t0 = asym_cov_total({1, 0, 2, 2}, NoiseCov::make(1.5, 2, 0), 0.4, 1);
    CHECK_THAT(t0(0, 0), WithinRel(4.0 / 0.4, 1e-14));

    const Eigen::Matrix2d t1 = asym_cov_total(th, NoiseCov::make(1, 1, 0.5), 0.25, 100);
    CHECK_THAT(std::sqrt(t1(0, 0)), WithinAbs(1.908, 5e-4));
    CHECK(t1(0, 1) == t1(1, 0));
    CHECK_THAT(t1(0, 1) * 100, WithinRel((1.0 - 10 * 0.5) / 0.25, 1e-12));
}

TEST_CASE("indirect effect variance") {
    const auto ie = indirect_effect({-5, -10, 4, 54}, NoiseCov::make(1, 1, 0.5), 0.25, 100);
    CHECK_THAT(std::sqrt(ie.var), WithinAbs(2.046, 5e-4));
    const auto z = indirect_effect({0, -3, 1, 1}, NoiseCov::make(2, 1, 0.4), 0.25, 50);
    CHECK(z.prod == 0.0);
    CHECK_THAT(z.var, WithinRel(4.0 * 9.0 / (0.25 * 50), 1e-14));
}

TEST_CASE("fit_single invariants across seeds and deltas") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto raw = seeded(60 + seed, seed);
        const auto ols = two_stage_ols(raw);
        const auto f0 = fit_single(raw, 0.0);
        CHECK_THAT(f0.theta.a, WithinAbs(ols.a, 1e-10 * (1 + std::abs(ols.a))));
        CHECK_THAT(f0.theta.c, WithinAbs(ols.c, 1e-10 * (1 + std::abs(ols.c))));
        CHECK_THAT(f0.theta.b, WithinAbs(ols.b, 1e-10 * (1 + std::abs(ols.b))));
        CHECK_THAT(f0.theta.c_total, WithinAbs(ols.c_total, 1e-10 * (1 + std::abs(ols.c_total))));
        for (double delta : {-0.7, 0.2, 0.85}) {
            const auto f = fit_single(raw, delta);
            CHECK(f.theta.a == f0.theta.a);
            CHECK(f.theta.c_total == f0.theta.c_total);
            CHECK(f.indirect_prod == f.theta.a * f.theta.b);
            CHECK(f.indirect_diff == f.theta.c_total - f.theta.c);
            CHECK(std::abs(f.indirect_prod - f.indirect_diff) < 1e-9 * (1 + std::abs(f.indirect_prod)));
            CHECK(f.noise.sigma2 >= 0.0);
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(f.asym_cov_theta);
            CHECK(es.eigenvalues().minCoeff() >= -1e-12);
            CHECK((f.asym_cov_theta - f.asym_cov_theta.transpose()).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("exact outcome fit is returned with zero outcome variance") {
    const auto f = fit_single(make({1, 0, 1, 0, 0}, {1, 0, 0, 1, 2}, {1, 0, 0, 1, 2}), 0.3);
    CHECK(f.noise.sigma2 == 0.0);
    CHECK(std::isinf(f.loglik));
    CHECK_THAT(f.theta.b, WithinAbs(1.0, 1e-12));
}

TEST_CASE("profile curve is flat and equals the Baron-Kenny likelihood at zero") {
    std::vector<double> grid;
    for (int i = -9; i <= 9; ++i) grid.push_back(i / 10.0);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto raw = seeded(40 + 3 * seed, 500 + seed, -0.3);
        const auto curve = profile_loglik_curve(raw, grid);
        REQUIRE(curve.size() == grid.size());
        double lo = INFINITY, hi = -INFINITY, mean = 0;
        for (const auto& p : curve) {
            lo = std::min(lo, p.loglik);
            hi = std::max(hi, p.loglik);
            mean += p.loglik / static_cast<double>(curve.size());
        }
        CHECK(hi - lo < 1e-6 * (1 + std::abs(mean)));
        const auto bk = fit_baron_kenny(raw);
        CHECK_THAT(curve[9].loglik, WithinAbs(bk.loglik, 1e-9 * (1 + std::abs(bk.loglik))));
    }
}

TEST_CASE("profile curve matches a 5-parameter numerical maximizer") {
    const auto raw = seeded(60, 4242);
    const auto c = center(raw);
    const std::vector<double> grid{-0.8, -0.4, 0.0, 0.4, 0.8};
    const auto curve = profile_loglik_curve(raw, grid);
    const auto ols = two_stage_ols(raw);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const double delta = grid[g];
        const auto x = oracle::maximize(
            [&](const std::vector<double>& p) {
                return oracle::eq8_objective(c, p[0], p[1], p[2], std::exp(p[3]), std::exp(p[4]), delta);
            },
            {ols.a, ols.b, ols.c, 0.0, 0.0}, 0.5);
        const double num = oracle::eq8_objective(c, x[0], x[1], x[2], std::exp(x[3]), std::exp(x[4]), delta);
        CHECK_THAT(curve[g].loglik, WithinAbs(num, 1e-4));
        CHECK(curve[g].loglik >= num - 1e-8);
    }
}

TEST_CASE("Monte Carlo covariance of estimates matches the information bound") {
    const int reps = 2000;
    Eigen::MatrixXd est(reps, 3);
    const auto noise = NoiseCov::make(1, 1, 0.5);
    for (int k = 0; k < reps; ++k) {
        const auto f = fit_single_known(seeded(100, 9000 + static_cast<std::uint64_t>(k)), noise);
        est.row(k) << f.theta.a, f.theta.c, f.theta.b;
    }
    const Eigen::RowVector3d mean = est.colwise().mean();
    const Eigen::MatrixXd dev = est.rowwise() - mean;
    const Eigen::Matrix3d emp = dev.transpose() * dev / (reps - 1);
    const Eigen::Matrix3d v = asym_cov_theta({-5, -10, 4, 54}, noise, 0.25, 100);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double scale = std::sqrt(v(i, i) * v(j, j));
            if (std::abs(v(i, j)) > 0.05 * scale)
                CHECK_THAT(emp(i, j), WithinRel(v(i, j), 0.10));
            else
                CHECK(std::abs(emp(i, j)) < 0.1 * scale);
        }

    // standardized A: skewness and excess kurtosis near zero
    const Eigen::VectorXd za = (est.col(0).array() - mean(0)) / std::sqrt(emp(0, 0));
    const double skew = za.array().cube().mean();
    const double kurt = za.array().square().square().mean() - 3.0;
    CHECK(std::abs(skew) < 0.15);
    CHECK(std::abs(kurt) < 0.3);
}
