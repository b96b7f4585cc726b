#include "cma/core.hpp"

#include <catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <random>

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

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no cma::Error thrown");
    return ErrorKind::InvalidArgument;
}

TrialSeries random_series(std::size_t n, unsigned seed) {
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> nd(3.0, 2.0);
    TrialSeries s;
    s.z.resize(static_cast<Eigen::Index>(n));
    s.m.resize(static_cast<Eigen::Index>(n));
    s.r.resize(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < s.z.size(); ++i) {
        s.z[i] = static_cast<double>(i % 3 == 0);
        s.m[i] = nd(eng);
        s.r[i] = nd(eng) * 10.0;
    }
    return s;
}

}  // namespace

TEST_CASE("validate_series accepts the minimal valid session") {
    const auto s = make({1, 0, 1, 0}, {1, -1, -1, 1}, {1, -1, -1, 1});
    const auto out = validate_series(s);
    CHECK(out.z == s.z);
    CHECK(out.m == s.m);
    CHECK(out.r == s.r);
}

TEST_CASE("validate_series error kinds") {
    CHECK(kind_of([] { validate_series(make({1, 1, 1, 1}, {1, 2, 3, 4}, {1, 2, 3, 4})); }) ==
          ErrorKind::DegenerateTreatment);
    CHECK(kind_of([] { validate_series(make({1, 0, 1, 0, 1}, {1, 2, 3, 4}, {1, 2, 3, 4, 5})); }) ==
          ErrorKind::LengthMismatch);
    CHECK(kind_of([] { validate_series(make({1, 0, 1}, {1, 2, 3}, {1, 2, 3})); }) == ErrorKind::TooFewTrials);
}

TEST_CASE("center subtracts the sample mean") {
    const auto c = center(make({1, 0, 1, 0}, {2, 0, 2, 0}, {0, 0, 0, 4}));
    CHECK(c.m == Eigen::Vector4d(1, -1, 1, -1));
    CHECK(c.z == Eigen::Vector4d(0.5, -0.5, 0.5, -0.5));
    CHECK(c.r == Eigen::Vector4d(-1, -1, -1, 3));
}

TEST_CASE("center leaves its input untouched and is idempotent") {
    const auto raw = random_series(37, 5);
    const auto copy = raw;
    const auto once = center(raw);
    CHECK(raw.m == copy.m);
    const auto twice = center(once);
    CHECK(twice.z == once.z);
    CHECK(twice.m == once.m);
    CHECK(twice.r == once.r);
}

TEST_CASE("centered inner products equal raw covariance sums") {
    const auto raw = random_series(101, 9);
    const auto c = center(raw);
    auto centered_sum = [](const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
        const double mu = u.mean(), mv = v.mean();
        long double s = 0;
        for (Eigen::Index i = 0; i < u.size(); ++i) s += (u[i] - mu) * (v[i] - mv);
        return static_cast<double>(s);
    };
    CHECK_THAT(c.z.dot(c.m), WithinRel(centered_sum(raw.z, raw.m), 1e-10));
    CHECK_THAT(c.m.dot(c.r), WithinRel(centered_sum(raw.m, raw.r), 1e-10));
    CHECK_THAT(c.r.dot(c.r), WithinRel(centered_sum(raw.r, raw.r), 1e-10));
    CHECK_THAT(c.z.sum(), WithinAbs(0.0, 1e-12));
}

TEST_CASE("NoiseCov and check_delta") {
    const auto nc = NoiseCov::make(2.0, 3.0, 0.5);
    const Eigen::Matrix2d s = nc.matrix();
    CHECK(s(0, 0) == 4.0);
    CHECK(s(1, 1) == 9.0);
    CHECK(s(0, 1) == 3.0);
    CHECK(s(1, 0) == 3.0);
    CHECK_THAT(nc.log_det(), WithinRel(std::log(36.0 - 9.0), 1e-14));
    CHECK(kind_of([] { NoiseCov::make(1.0, 1.0, 1.0); }) == ErrorKind::InvalidArgument);
    CHECK(kind_of([] { NoiseCov::make(0.0, 1.0, 0.0); }) == ErrorKind::InvalidArgument);
    CHECK(kind_of([] { check_delta(-1.2); }) == ErrorKind::InvalidArgument);
    CHECK_NOTHROW(check_delta(0.99));
}

TEST_CASE("validate_dataset checks key layout") {
    const auto s = make({1, 0, 1, 0}, {1, -1, -1, 1}, {1, -1, -1, 1});
    MultilevelDataset d;
    d.sessions[{1, 1}] = s;
    d.sessions[{1, 2}] = s;
    d.sessions[{2, 1}] = s;
    CHECK_NOTHROW(validate_dataset(d));
    CHECK(d.n_subjects() == 2);
    CHECK(d.sessions_per_subject() == std::vector<int>{2, 1});
    CHECK(d.total_trials() == 12);

    auto gap = d;
    gap.sessions.erase({1, 2});
    gap.sessions[{1, 3}] = s;
    CHECK_THROWS_AS(validate_dataset(gap), Error);

    auto bad = d;
    bad.sessions[{2, 1}] = make({1, 1, 1, 1}, {1, 2, 3, 4}, {1, 2, 3, 4});
    try {
        validate_dataset(bad);
        FAIL("expected failure");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DegenerateTreatment);
    }
}
