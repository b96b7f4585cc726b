#pragma once

#include <map>
#include <vector>

namespace cma {

/// One coefficient type across sessions, grouped by subject.
struct GroupedValues {
    std::map<int, std::vector<double>> values;

    int n_subjects() const { return static_cast<int>(values.size()); }
    std::vector<int> counts() const;
    std::size_t total() const;
};

enum class Criterion { ML, REML };

/// y_ik = mean + u_i + e_ik, u_i ~ N(0, var_between), e_ik ~ N(0, var_within).
struct RandomInterceptFit {
    double mean = 0.0;
    double var_between = 0.0;
    double var_within = 0.0;
    double loglik = 0.0;
    std::map<int, double> blups;
    /// No within-subject spread: var_within sits at its floor.
    bool degenerate = false;
};

inline constexpr double kVarWithinFloor = 1e-12;

/// Throws InvalidArgument unless there are >= 2 subjects, each with >= 1
/// finite value.
void validate_grouped(const GroupedValues& data);

/// Maximizes the (restricted) Gaussian likelihood over the two variance
/// components with the mean profiled out by GLS.
RandomInterceptFit fit_random_intercept(const GroupedValues& data, Criterion criterion);

/// Log-likelihood with all constants. For REML the mean argument is not
/// used: the restricted likelihood depends only on the variance components.
double loglik_at(const GroupedValues& data, double mean, double var_between, double var_within,
                 Criterion criterion);

}  // namespace cma
