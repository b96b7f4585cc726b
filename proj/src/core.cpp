#include "cma/core.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace cma {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::DegenerateTreatment: return "DegenerateTreatment";
        case ErrorKind::TooFewTrials: return "TooFewTrials";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::SingularResiduals: return "SingularResiduals";
        case ErrorKind::NegativeVariance: return "NegativeVariance";
        case ErrorKind::SingularDesign: return "SingularDesign";
        case ErrorKind::OptimFailed: return "OptimFailed";
        case ErrorKind::NoConvergence: return "NoConvergence";
        case ErrorKind::UnknownQuantity: return "UnknownQuantity";
        case ErrorKind::ReplicateFailure: return "ReplicateFailure";
        case ErrorKind::MissingDelta: return "MissingDelta";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

TrialSeries validate_series(TrialSeries raw) {
    const auto n = raw.z.size();
    if (raw.m.size() != n || raw.r.size() != n) {
        std::ostringstream os;
        os << "z has " << n << " entries, m has " << raw.m.size() << ", r has " << raw.r.size();
        throw Error(ErrorKind::LengthMismatch, os.str());
    }
    if (static_cast<std::size_t>(n) < kMinTrials) {
        throw Error(ErrorKind::TooFewTrials,
                    std::to_string(n) + " trials, need at least " + std::to_string(kMinTrials));
    }
    bool has0 = false;
    bool has1 = false;
    for (Eigen::Index t = 0; t < n; ++t) {
        const double v = raw.z[t];
        if (v == 0.0) {
            has0 = true;
        } else if (v == 1.0) {
            has1 = true;
        } else {
            throw Error(ErrorKind::InvalidArgument,
                        "treatment must be 0 or 1, got " + std::to_string(v) + " at trial " +
                            std::to_string(t + 1));
        }
    }
    if (!(has0 && has1)) {
        throw Error(ErrorKind::DegenerateTreatment, "treatment is constant across trials");
    }
    for (Eigen::Index t = 0; t < n; ++t) {
        if (!std::isfinite(raw.m[t]) || !std::isfinite(raw.r[t])) {
            throw Error(ErrorKind::InvalidArgument,
                        "non-finite mediator or outcome at trial " + std::to_string(t + 1));
        }
    }
    return raw;
}

namespace {

// Neumaier-compensated mean.
double mean_of(const Eigen::VectorXd& v) {
    double sum = 0.0;
    double comp = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double x = v[i];
        const double t = sum + x;
        if (std::abs(sum) >= std::abs(x)) {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    return (sum + comp) / static_cast<double>(v.size());
}

Eigen::VectorXd centered(const Eigen::VectorXd& v) {
    if (v.size() == 0) return v;
    const double mu = mean_of(v);
    const double scale = v.cwiseAbs().maxCoeff();
    // Already centered up to rounding: leave bits alone.
    if (std::abs(mu) <= 4.0 * std::numeric_limits<double>::epsilon() * scale) {
        return v;
    }
    return v.array() - mu;
}

}  // namespace

TrialSeries center(const TrialSeries& series) {
    return TrialSeries{centered(series.z), centered(series.m), centered(series.r)};
}

NoiseCov NoiseCov::make(double sigma1, double sigma2, double delta) {
    if (!(sigma1 > 0.0) || !(sigma2 > 0.0) || !std::isfinite(sigma1) || !std::isfinite(sigma2)) {
        throw Error(ErrorKind::InvalidArgument, "error standard deviations must be positive");
    }
    check_delta(delta);
    return NoiseCov{sigma1, sigma2, delta};
}

Eigen::Matrix2d NoiseCov::matrix() const {
    Eigen::Matrix2d s;
    const double off = delta * sigma1 * sigma2;
    s << sigma1 * sigma1, off, off, sigma2 * sigma2;
    return s;
}

double NoiseCov::log_det() const {
    return 2.0 * std::log(sigma1) + 2.0 * std::log(sigma2) + std::log1p(-delta * delta);
}

void check_delta(double delta) {
    if (!(std::abs(delta) < 1.0)) {
        throw Error(ErrorKind::InvalidArgument,
                    "error correlation must lie in (-1, 1), got " + std::to_string(delta));
    }
}

std::string to_string(const SessionKey& key) {
    return "subject " + std::to_string(key.subject) + " session " + std::to_string(key.session);
}

int MultilevelDataset::n_subjects() const {
    return sessions.empty() ? 0 : sessions.rbegin()->first.subject;
}

std::vector<int> MultilevelDataset::sessions_per_subject() const {
    std::vector<int> counts(static_cast<std::size_t>(n_subjects()), 0);
    for (const auto& [key, _] : sessions) {
        ++counts[static_cast<std::size_t>(key.subject - 1)];
    }
    return counts;
}

std::size_t MultilevelDataset::total_trials() const {
    std::size_t total = 0;
    for (const auto& [_, s] : sessions) total += s.n();
    return total;
}

void validate_dataset(const MultilevelDataset& data) {
    if (data.sessions.empty()) {
        throw Error(ErrorKind::InvalidArgument, "dataset has no sessions");
    }
    int expect_subject = 1;
    int expect_session = 1;
    for (const auto& [key, series] : data.sessions) {
        if (key.subject == expect_subject + 1 && expect_session > 1) {
            ++expect_subject;
            expect_session = 1;
        }
        if (key.subject != expect_subject || key.session != expect_session) {
            throw Error(ErrorKind::InvalidArgument,
                        "session keys must be dense and 1-based; unexpected " + to_string(key));
        }
        ++expect_session;
        try {
            validate_series(series);
        } catch (const Error& e) {
            throw Error(e.kind(), to_string(key) + ": " + e.what());
        }
    }
}

}  // namespace cma
