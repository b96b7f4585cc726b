#pragma once

#include "io.hpp"

#include "cma/inference.hpp"
#include "cma/multilevel.hpp"
#include "cma/simulate.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cma::cli {

inline constexpr const char* kToolkitVersion = "1.0.0";
inline constexpr std::uint64_t kDefaultSeed = 20261019;

enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitNumerical = 3, kExitIo = 4 };

/// Validation (bad input, config or arguments) -> 2, estimator failure -> 3,
/// file system -> 4.
int exit_code(ErrorKind kind);

/// --seed when given, then a seed from the config, then CMA_SEED, then the
/// built-in default. A malformed CMA_SEED is a validation error.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config = std::nullopt);

/// Inclusive evenly spaced grid "lo:hi:n"; n = 1 gives {lo}.
std::vector<double> parse_grid(const std::string& spec);

struct Invocation {
    std::string command;
    std::vector<std::string> argv;
    int threads = 0;
};

/// Writes `<primary>.manifest.json` next to the primary output.
void write_manifest(const std::string& primary, const Invocation& inv, const nlohmann::json& config,
                    std::uint64_t seed, const std::vector<std::string>& outputs, double wall_seconds);

// ---------------------------------------------------------------------------
// Report builders (pure; the command runners add file handling)
// ---------------------------------------------------------------------------

nlohmann::json fit_single_report(const SingleInput& input, double delta, double level, std::uint64_t seed);

struct MultilevelRequest {
    Method method = Method::h;
    std::optional<double> delta;
    double level = 0.95;
    int bootstrap = 0;  // replicates; 0 = none
    int threads = 0;
};

nlohmann::json fit_multilevel_report(const MultilevelInput& input, const MultilevelRequest& req,
                                     std::uint64_t seed);

struct ProfileRow {
    double delta = 0.0;
    double objective = 0.0;
    int boundary = 0;  // multilevel only: variance entries on the floor
};

/// Full Gaussian log-likelihood of one session, profiled over everything but delta.
std::vector<ProfileRow> profile_single(const TrialSeries& series, const std::vector<double>& grid);
/// Profile h-likelihood of a multilevel dataset.
std::vector<ProfileRow> profile_multi(const MultilevelDataset& data, const std::vector<double>& grid, int threads);

std::string profile_csv(const std::vector<ProfileRow>& rows, bool multilevel);

enum class ReproduceTarget { table1, table2, table3, fig5, fig6 };
ReproduceTarget reproduce_target_from_string(const std::string& s);
const char* to_string(ReproduceTarget t);
int default_reps(ReproduceTarget t);

struct ReproduceRequest {
    ReproduceTarget target = ReproduceTarget::table1;
    int reps = 0;  // 0 = target default
    std::vector<int> n_grid{50, 200, 500};  // figures only
    std::vector<int> k_grid{4};             // figures only
    int threads = 0;
};

/// Runs the study and returns the CSV table (reference values alongside).
std::string reproduce_csv(const ReproduceRequest& req, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Command runners: parse inputs, write outputs and manifests
// ---------------------------------------------------------------------------

struct FitSingleArgs {
    std::string data;
    double delta = 0.0;
    double level = 0.95;
    std::string out;  // empty = stdout
};

struct FitMultilevelArgs {
    std::string data;
    std::string method = "h";
    std::optional<double> delta;
    double level = 0.95;
    int bootstrap = 0;
    std::string out;
};

struct ProfileArgs {
    std::string data;
    std::string level = "single";
    std::string grid = "-0.95:0.95:39";
    std::string out;
};

struct SimulateArgs {
    std::string config;
    std::string out;
};

struct ReproduceArgs {
    std::string target;
    int reps = 0;
    std::string out_dir = ".";
    std::vector<int> n_grid{50, 200, 500};
    std::vector<int> k_grid{4};
};

void run_fit_single(const FitSingleArgs& a, const Invocation& inv, std::optional<std::uint64_t> seed);
void run_fit_multilevel(const FitMultilevelArgs& a, const Invocation& inv, std::optional<std::uint64_t> seed);
void run_profile(const ProfileArgs& a, const Invocation& inv, std::optional<std::uint64_t> seed);
void run_simulate(const SimulateArgs& a, const Invocation& inv, std::optional<std::uint64_t> seed);
void run_reproduce(const ReproduceArgs& a, const Invocation& inv, std::optional<std::uint64_t> seed);

}  // namespace cma::cli
