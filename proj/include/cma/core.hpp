#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace cma {

enum class ErrorKind {
    LengthMismatch,
    DegenerateTreatment,
    TooFewTrials,
    InvalidArgument,
    SingularResiduals,
    NegativeVariance,
    SingularDesign,
    OptimFailed,
    NoConvergence,
    UnknownQuantity,
    ReplicateFailure,
    MissingDelta,
    ParseError,
    ConfigError,
    IoError,
};

const char* to_string(ErrorKind kind);

/// Every estimator failure is reported through this type; `kind()` lets
/// callers (the CLI in particular) map failures to exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what);
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// One session: per-trial treatment indicator, mediator and outcome.
struct TrialSeries {
    Eigen::VectorXd z;
    Eigen::VectorXd m;
    Eigen::VectorXd r;

    std::size_t n() const { return static_cast<std::size_t>(z.size()); }
};

inline constexpr std::size_t kMinTrials = 4;

/// Checks lengths, trial count and that raw z takes both values 0 and 1.
/// Returns the input unchanged.
TrialSeries validate_series(TrialSeries raw);

/// Shifts z, m and r to zero sample mean. A vector whose mean is already
/// zero to rounding is copied unchanged, so center(center(x)) == center(x).
TrialSeries center(const TrialSeries& series);

/// Error covariance [[s1^2, d s1 s2], [d s1 s2, s2^2]].
struct NoiseCov {
    double sigma1 = 1.0;
    double sigma2 = 1.0;
    double delta = 0.0;

    /// Throws InvalidArgument unless sigma1, sigma2 > 0 and |delta| < 1.
    static NoiseCov make(double sigma1, double sigma2, double delta);

    Eigen::Matrix2d matrix() const;
    double log_det() const;
};

/// Throws InvalidArgument unless |delta| < 1.
void check_delta(double delta);

struct PathCoefficients {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double c_total = 0.0;
};

/// Sample covariance of the mediator-equation and total-effect residuals.
struct ResidualCov {
    double s11 = 0.0;
    double s12 = 0.0;
    double s22 = 0.0;

    double det() const { return s11 * s22 - s12 * s12; }
};

struct SessionKey {
    int subject = 0;
    int session = 0;

    auto operator<=>(const SessionKey&) const = default;
};

std::string to_string(const SessionKey& key);

/// Sessions keyed by (subject, session), both dense and 1-based.
struct MultilevelDataset {
    std::map<SessionKey, TrialSeries> sessions;

    int n_subjects() const;
    /// K_i indexed by subject - 1.
    std::vector<int> sessions_per_subject() const;
    std::size_t total_trials() const;
};

/// Validates every session and the key layout (subjects 1..N, sessions
/// 1..K_i with no gaps). Throws Error naming the offending session.
void validate_dataset(const MultilevelDataset& data);

}  // namespace cma
