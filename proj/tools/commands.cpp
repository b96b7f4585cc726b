#include "commands.hpp"

#include "reference.hpp"

#include "cma/parallel.hpp"

#include <boost/math/distributions/normal.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <limits>
#include <sstream>

namespace cma::cli {

namespace {

using nlohmann::json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Non-finite numbers have no JSON spelling; store them as null so the report
// object equals what is written out.
json null_nonfinite(json j) {
    if (j.is_number_float() && !std::isfinite(j.get<double>())) return nullptr;
    if (j.is_structured()) {
        for (auto& v : j) v = null_nonfinite(std::move(v));
    }
    return j;
}

double z_half(double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::InvalidArgument, "level must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal(), 0.5 * (1.0 + level));
}

std::uint64_t parse_seed_text(const std::string& s, const std::string& source) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        if (s.empty() || s.front() == '-') throw std::invalid_argument("negative");
        v = std::stoull(s, &used, 10);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) {
        throw Error(ErrorKind::InvalidArgument, source + " must be a non-negative integer, got '" + s + "'");
    }
    return v;
}

json interval_json(const std::string& name, double est, double se, double lo, double hi, const char* method) {
    return {{"name", name}, {"estimate", est}, {"se", se}, {"ci_lower", lo}, {"ci_upper", hi}, {"ci_method", method}};
}

void emit(const std::string& out, const std::string& text) {
    if (out.empty()) {
        std::cout << text;
        std::cout.flush();
    } else {
        write_file(out, text);
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string method_label(Estimator e) {
    switch (e) {
        case Estimator::cma_delta:
        case Estimator::pooled_delta: return "CMA-delta";
        case Estimator::cma_delta_known: return "CMA-delta-known";
        case Estimator::bk: return "BK";
        case Estimator::ml: return "CMA-ml";
        case Estimator::h:
        case Estimator::h_given: return "CMA-h";
        case Estimator::h_ts: return "CMA-h-ts";
        case Estimator::ts_given: return "CMA-ts";
        case Estimator::kkb: return "KKB";
    }
    return "?";
}

struct Block {
    NullPattern pattern;
    double delta;
};

const std::vector<Block>& table_blocks() {
    static const std::vector<Block> b{{NullPattern::none, 0.5},
                                      {NullPattern::a_zero, 0.5},
                                      {NullPattern::b_zero, 0.5},
                                      {NullPattern::ab_zero, 0.5},
                                      {NullPattern::none, 0.0}};
    return b;
}

std::string table_csv(ReproduceTarget target, int reps, std::uint64_t seed, int threads) {
    const ReferenceTable* ref = nullptr;
    std::vector<Estimator> est;
    switch (target) {
        case ReproduceTarget::table1:
            ref = &reference_table1();
            est = {Estimator::cma_delta, Estimator::bk};
            break;
        case ReproduceTarget::table2:
            ref = &reference_table2();
            est = {Estimator::h_given, Estimator::ts_given, Estimator::kkb, Estimator::pooled_delta};
            break;
        case ReproduceTarget::table3:
            ref = &reference_table3();
            est = {Estimator::ml, Estimator::h, Estimator::h_ts, Estimator::kkb};
            break;
        default: throw Error(ErrorKind::InvalidArgument, "not a table target");
    }

    std::ostringstream out;
    std::vector<std::string> header{"block", "true_delta", "method", "reps", "failures"};
    for (const auto& c : ref->columns) {
        for (const char* suffix : {"", "_sd", "_paper", "_paper_sd"}) header.push_back(c + suffix);
    }
    write_csv_row(out, header);

    MonteCarloOptions opt;
    opt.threads = threads;
    for (const auto& blk : table_blocks()) {
        Design design = target == ReproduceTarget::table1 ? Design{table1_design(blk.pattern, blk.delta)}
                                                          : Design{table2_design(blk.pattern, blk.delta)};
        const MonteCarloSummary mc = monte_carlo(design, est, reps, seed, opt);

        std::vector<std::string> truth{to_string(blk.pattern), format_number(blk.delta), "True value", "", ""};
        for (const auto& c : ref->columns) {
            const auto it = mc.truth.find(c);
            truth.insert(truth.end(), {it == mc.truth.end() ? "" : format_number(it->second), "", "", ""});
        }
        write_csv_row(out, truth);

        for (const auto& m : mc.methods) {
            const std::string label = method_label(m.estimator);
            const ReferenceRow* rr = ref->find(blk.pattern, blk.delta, label);
            std::vector<std::string> row{to_string(blk.pattern), format_number(blk.delta), label,
                                         std::to_string(reps), std::to_string(m.failures)};
            for (std::size_t j = 0; j < ref->columns.size(); ++j) {
                const auto it = m.quantities.find(ref->columns[j]);
                const bool have = it != m.quantities.end() && it->second.count > 0;
                row.push_back(have ? format_number(it->second.mean) : "");
                row.push_back(have ? format_number(it->second.sd) : "");
                row.push_back(rr ? format_number(rr->mean[j]) : "");
                row.push_back(rr ? format_number(rr->sd[j]) : "");
            }
            write_csv_row(out, row);
        }
    }
    return out.str();
}

std::string figure_csv(const ReproduceRequest& req, int reps, std::uint64_t seed) {
    const std::vector<Estimator> est = req.target == ReproduceTarget::fig5
                                           ? std::vector<Estimator>{Estimator::ml}
                                           : std::vector<Estimator>{Estimator::h, Estimator::h_ts};
    std::ostringstream out;
    write_csv_row(out, {"N", "K", "method", "quantity", "truth", "mean", "bias", "sd", "mse", "reps", "failures"});
    MonteCarloOptions opt;
    opt.threads = req.threads;
    for (const int k : req.k_grid) {
        for (const int n : req.n_grid) {
            MultilevelConfig cfg = table2_design(NullPattern::none, 0.5);
            cfg.n_subjects = n;
            cfg.n_sessions = k;
            const MonteCarloSummary mc = monte_carlo(Design{cfg}, est, reps, seed, opt);
            for (const auto& m : mc.methods) {
                for (const char* q : {"delta", "C", "B"}) {
                    const auto it = m.quantities.find(q);
                    if (it == m.quantities.end()) continue;
                    const double truth = mc.truth.at(q);
                    write_csv_row(out, {std::to_string(n), std::to_string(k), method_label(m.estimator), q,
                                        format_number(truth), format_number(it->second.mean),
                                        format_number(it->second.mean - truth), format_number(it->second.sd),
                                        format_number(it->second.mse), std::to_string(it->second.count),
                                        std::to_string(m.failures)});
                }
            }
        }
    }
    return out.str();
}

}  // namespace

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::IoError: return kExitIo;
        case ErrorKind::SingularResiduals:
        case ErrorKind::NegativeVariance:
        case ErrorKind::SingularDesign:
        case ErrorKind::OptimFailed:
        case ErrorKind::NoConvergence:
        case ErrorKind::ReplicateFailure: return kExitNumerical;
        default: return kExitValidation;
    }
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config) {
    if (flag) return *flag;
    if (config) return *config;
    if (const char* env = std::getenv("CMA_SEED"); env != nullptr && *env != '\0') {
        return parse_seed_text(env, "CMA_SEED");
    }
    return kDefaultSeed;
}

std::vector<double> parse_grid(const std::string& spec) {
    const auto bad = [&](const std::string& why) {
        return Error(ErrorKind::InvalidArgument, "grid '" + spec + "': " + why + " (expected lo:hi:n)");
    };
    const auto c1 = spec.find(':');
    const auto c2 = c1 == std::string::npos ? std::string::npos : spec.find(':', c1 + 1);
    if (c2 == std::string::npos) throw bad("missing fields");
    double lo = 0.0, hi = 0.0;
    long n = 0;
    try {
        std::size_t u1 = 0, u2 = 0, u3 = 0;
        const std::string s1 = spec.substr(0, c1), s2 = spec.substr(c1 + 1, c2 - c1 - 1), s3 = spec.substr(c2 + 1);
        lo = std::stod(s1, &u1);
        hi = std::stod(s2, &u2);
        n = std::stol(s3, &u3);
        if (u1 != s1.size() || u2 != s2.size() || u3 != s3.size()) throw bad("trailing characters");
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        throw bad("not numeric");
    }
    if (n < 1) throw bad("n must be at least 1");
    if (!(std::abs(lo) < 1.0 && std::abs(hi) < 1.0)) throw bad("endpoints must lie in (-1, 1)");
    if (hi < lo) throw bad("lo exceeds hi");
    if (n == 1) return {lo};
    std::vector<double> g(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    g.back() = hi;
    return g;
}

void write_manifest(const std::string& primary, const Invocation& inv, const json& config, std::uint64_t seed,
                    const std::vector<std::string>& outputs, double wall_seconds) {
    const json m{{"command", inv.command},
                 {"arguments", inv.argv},
                 {"config", config},
                 {"seed", seed},
                 {"threads", resolve_threads(inv.threads)},
                 {"toolkit_version", kToolkitVersion},
                 {"wall_time_seconds", wall_seconds},
                 {"outputs", outputs}};
    write_file(primary + ".manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

json fit_single_report(const SingleInput& input, double delta, double level, std::uint64_t seed) {
    check_delta(delta);
    const SingleLevelFit fit = fit_single(input.series, delta);

    json intervals = json::array();
    const std::pair<const char*, Quantity> rows[] = {{"A", Quantity::A},       {"C", Quantity::C},
                                                     {"B", Quantity::B},       {"C_total", Quantity::CTotal},
                                                     {"AB_p", Quantity::ABp},  {"AB_d", Quantity::ABd}};
    for (const auto& [name, q] : rows) {
        const IntervalEstimate ci = asymptotic_ci(fit, q, level);
        const double se = std::sqrt(std::max(asymptotic_variance(fit, q), 0.0));
        intervals.push_back(interval_json(name, ci.point, se, ci.lower, ci.upper, "asymptotic"));
    }
    const double n = static_cast<double>(fit.n);
    Warnings warnings = input.warnings;
    if (fit.noise.sigma2 == 0.0) warnings.push_back("outcome is fit exactly; the likelihood is unbounded");
    return null_nonfinite(json{{"command", "fit-single"},
                {"seed", seed},
                {"n", fit.n},
                {"delta", delta},
                {"level", level},
                {"coefficients",
                 {{"A", fit.theta.a},
                  {"B", fit.theta.b},
                  {"C", fit.theta.c},
                  {"C_total", fit.theta.c_total},
                  {"AB_p", fit.indirect_prod},
                  {"AB_d", fit.indirect_diff}}},
                {"variances",
                 {{"sigma1_sq", fit.noise.sigma1 * fit.noise.sigma1},
                  {"sigma2_sq", fit.noise.sigma2 * fit.noise.sigma2}}},
                {"q_hat", fit.q_hat},
                {"intervals", intervals},
                {"loglik", -n * std::log(2.0 * M_PI) + 0.5 * fit.loglik},
                {"warnings", warnings}});
}

json fit_multilevel_report(const MultilevelInput& input, const MultilevelRequest& req, std::uint64_t seed) {
    if (req.delta) check_delta(*req.delta);
    if (req.method == Method::ts && !req.delta) {
        throw Error(ErrorKind::MissingDelta, "method ts requires --delta");
    }
    if (req.bootstrap < 0) throw Error(ErrorKind::InvalidArgument, "--bootstrap must be non-negative");
    const double zq = z_half(req.level);
    const SessionTable table = SessionTable::build(input.data);
    const std::optional<double> delta = req.method == Method::ts ? req.delta : std::nullopt;
    const MixedEffectsFit fit = fit_multilevel(table, req.method, delta);

    std::optional<BootstrapRun> boot;
    if (req.bootstrap > 0) {
        BootstrapOptions bo;
        bo.threads = req.threads;
        boot = wild_bootstrap(input.data, req.method, req.bootstrap, seed, delta, bo);
    }

    json effects = json::array();
    auto add = [&](const char* name, Quantity q, double se) {
        const double est = quantity_value(fit, q);
        json row;
        if (boot) {
            const IntervalEstimate ci = bc_interval(*boot, q, req.level);
            row = interval_json(name, est, se, ci.lower, ci.upper, "wild_bc");
            const auto& xs = boot->replicates.at(q);
            double mean = 0.0;
            for (const double x : xs) mean += x;
            mean /= static_cast<double>(xs.size());
            double ss = 0.0;
            for (const double x : xs) ss += (x - mean) * (x - mean);
            row["bootstrap_sd"] = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : kNaN;
            row["bias_corrected_mean"] = boot->bias_corrected_mean.at(q);
        } else if (std::isfinite(se)) {
            row = interval_json(name, est, se, est - zq * se, est + zq * se, "mixed_model");
        } else {
            row = interval_json(name, est, se, kNaN, kNaN, "none");
        }
        effects.push_back(row);
    };
    add("delta", Quantity::delta, kNaN);
    add("A", Quantity::A, fit.fixed_se[kA]);
    add("C", Quantity::C, fit.fixed_se[kC]);
    add("B", Quantity::B, fit.fixed_se[kB]);
    add("C_total", Quantity::CTotal, fit.c_total_se);
    add("AB_p", Quantity::ABp, kNaN);
    add("AB_d", Quantity::ABd, kNaN);

    auto vec = [](const Eigen::Vector3d& v) { return json{{"A", v[kA]}, {"B", v[kB]}, {"C", v[kC]}}; };
    json report{{"command", "fit-multilevel"},
                {"seed", seed},
                {"method", to_string(req.method)},
                {"delta_hat", fit.delta_hat},
                {"delta_source", req.method == Method::ts ? "supplied" : "estimated"},
                {"level", req.level},
                {"n_subjects", input.data.n_subjects()},
                {"n_sessions", input.data.sessions.size()},
                {"n_trials", input.data.total_trials()},
                {"effects", effects},
                {"variance_components", {{"psi", vec(fit.psi)}, {"lambda", vec(fit.lambda)}}},
                {"objective", fit.objective_value},
                {"converged", fit.converged},
                {"flat_objective", fit.flat_objective},
                {"iterations", fit.iterations},
                {"warnings", input.warnings}};
    if (boot) {
        report["bootstrap"] = {{"replicates_requested", boot->requested},
                               {"replicates_used", boot->n_replicates},
                               {"seed", boot->seed},
                               {"failures", boot->failures}};
    }
    return null_nonfinite(std::move(report));
}

std::vector<ProfileRow> profile_single(const TrialSeries& series, const std::vector<double>& grid) {
    const double n = static_cast<double>(series.n());
    std::vector<ProfileRow> rows;
    for (const auto& p : profile_loglik_curve(series, grid)) {
        rows.push_back({p.delta, -n * std::log(2.0 * M_PI) + 0.5 * p.loglik, 0});
    }
    return rows;
}

std::vector<ProfileRow> profile_multi(const MultilevelDataset& data, const std::vector<double>& grid, int threads) {
    const SessionTable table = SessionTable::build(data);
    std::vector<ProfileRow> rows(grid.size());
    std::vector<std::string> errors(grid.size());
    std::vector<ErrorKind> kinds(grid.size(), ErrorKind::OptimFailed);
    parallel_for(grid.size(), threads, [&](std::size_t i) {
        try {
            const HState s = cma_h_inner(table, grid[i]);
            rows[i] = {grid[i], s.h_value, s.boundary};
        } catch (const Error& e) {
            errors[i] = e.what();
            kinds[i] = e.kind();
        }
    });
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!errors[i].empty()) {
            throw Error(kinds[i], "profile h at delta = " + format_number(grid[i]) + ": " + errors[i]);
        }
    }
    return rows;
}

std::string profile_csv(const std::vector<ProfileRow>& rows, bool multilevel) {
    std::ostringstream out;
    if (multilevel) write_csv_row(out, {"delta", "objective", "boundary"});
    else write_csv_row(out, {"delta", "objective"});
    for (const auto& r : rows) {
        if (multilevel) write_csv_row(out, {format_number(r.delta), format_number(r.objective), std::to_string(r.boundary)});
        else write_csv_row(out, {format_number(r.delta), format_number(r.objective)});
    }
    return out.str();
}

ReproduceTarget reproduce_target_from_string(const std::string& s) {
    for (const auto t : {ReproduceTarget::table1, ReproduceTarget::table2, ReproduceTarget::table3,
                         ReproduceTarget::fig5, ReproduceTarget::fig6}) {
        if (s == to_string(t)) return t;
    }
    throw Error(ErrorKind::InvalidArgument, "unknown target '" + s + "' (expected table1, table2, table3, fig5, fig6)");
}

const char* to_string(ReproduceTarget t) {
    switch (t) {
        case ReproduceTarget::table1: return "table1";
        case ReproduceTarget::table2: return "table2";
        case ReproduceTarget::table3: return "table3";
        case ReproduceTarget::fig5: return "fig5";
        case ReproduceTarget::fig6: return "fig6";
    }
    return "?";
}

int default_reps(ReproduceTarget t) {
    switch (t) {
        case ReproduceTarget::table1: return 200;
        case ReproduceTarget::table2:
        case ReproduceTarget::table3: return 50;
        default: return 30;
    }
}

std::string reproduce_csv(const ReproduceRequest& req, std::uint64_t seed) {
    const int reps = req.reps > 0 ? req.reps : default_reps(req.target);
    if (req.target == ReproduceTarget::fig5 || req.target == ReproduceTarget::fig6) {
        if (req.n_grid.empty() || req.k_grid.empty()) throw Error(ErrorKind::InvalidArgument, "empty N or K grid");
        return figure_csv(req, reps, seed);
    }
    return table_csv(req.target, reps, seed, req.threads);
}

// ---------------------------------------------------------------------------

void run_fit_single(const FitSingleArgs& a, const Invocation& inv, std::optional<std::uint64_t> seed_flag) {
    const auto t0 = std::chrono::steady_clock::now();
    check_delta(a.delta);  // before touching the data
    const std::uint64_t seed = resolve_seed(seed_flag);
    const SingleInput input = read_single_csv_file(a.data);
    const json report = fit_single_report(input, a.delta, a.level, seed);
    emit(a.out, report.dump(2) + "\n");
    if (!a.out.empty()) {
        write_manifest(a.out, inv, {{"data", a.data}, {"delta", a.delta}, {"level", a.level}}, seed, {a.out},
                       seconds_since(t0));
    }
}

void run_fit_multilevel(const FitMultilevelArgs& a, const Invocation& inv, std::optional<std::uint64_t> seed_flag) {
    const auto t0 = std::chrono::steady_clock::now();
    MultilevelRequest req;
    req.method = method_from_string(a.method);
    req.delta = a.delta;
    req.level = a.level;
    req.bootstrap = a.bootstrap;
    req.threads = inv.threads;
    if (req.delta) check_delta(*req.delta);
    if (req.method == Method::ts && !req.delta) throw Error(ErrorKind::MissingDelta, "method ts requires --delta");
    const std::uint64_t seed = resolve_seed(seed_flag);
    const MultilevelInput input = read_multilevel_csv_file(a.data);
    const json report = fit_multilevel_report(input, req, seed);
    emit(a.out, report.dump(2) + "\n");
    if (!a.out.empty()) {
        json cfg{{"data", a.data}, {"method", a.method}, {"level", a.level}, {"bootstrap", a.bootstrap}};
        cfg["delta"] = a.delta ? json(*a.delta) : json(nullptr);
        write_manifest(a.out, inv, cfg, seed, {a.out}, seconds_since(t0));
    }
}

void run_profile(const ProfileArgs& a, const Invocation& inv, std::optional<std::uint64_t> seed_flag) {
    const auto t0 = std::chrono::steady_clock::now();
    if (a.level != "single" && a.level != "multi") {
        throw Error(ErrorKind::InvalidArgument, "--level must be single or multi");
    }
    const std::vector<double> grid = parse_grid(a.grid);
    const std::uint64_t seed = resolve_seed(seed_flag);
    std::string csv;
    if (a.level == "single") {
        csv = profile_csv(profile_single(read_single_csv_file(a.data).series, grid), false);
    } else {
        csv = profile_csv(profile_multi(read_multilevel_csv_file(a.data).data, grid, inv.threads), true);
    }
    emit(a.out, csv);
    if (!a.out.empty()) {
        write_manifest(a.out, inv, {{"data", a.data}, {"level", a.level}, {"grid", a.grid}}, seed, {a.out},
                       seconds_since(t0));
    }
}

void run_simulate(const SimulateArgs& a, const Invocation& inv, std::optional<std::uint64_t> seed_flag) {
    const auto t0 = std::chrono::steady_clock::now();
    if (a.out.empty()) throw Error(ErrorKind::InvalidArgument, "--out is required");
    ParsedConfig pc = parse_config_text(read_file(a.config));
    std::optional<std::uint64_t> cfg_seed;
    if (pc.seed_given) {
        cfg_seed = std::visit([](const auto& c) { return c.seed; }, pc.design);
    }
    const std::uint64_t seed = resolve_seed(seed_flag, cfg_seed);
    std::visit([&](auto& c) { c.seed = seed; }, pc.design);

    std::ostringstream out;
    if (const auto* s = std::get_if<SingleLevelConfig>(&pc.design)) {
        write_single_csv(out, gen_single(*s));
    } else {
        write_multilevel_csv(out, gen_multilevel(std::get<MultilevelConfig>(pc.design)));
    }
    write_file(a.out, out.str());
    write_manifest(a.out, inv, config_to_json(pc.design), seed, {a.out}, seconds_since(t0));
}

void run_reproduce(const ReproduceArgs& a, const Invocation& inv, std::optional<std::uint64_t> seed_flag) {
    const auto t0 = std::chrono::steady_clock::now();
    ReproduceRequest req;
    req.target = reproduce_target_from_string(a.target);
    if (a.reps < 0) throw Error(ErrorKind::InvalidArgument, "--reps must be positive");
    req.reps = a.reps;
    req.n_grid = a.n_grid;
    req.k_grid = a.k_grid;
    req.threads = inv.threads;
    for (const int n : req.n_grid) {
        if (n < 2) throw Error(ErrorKind::InvalidArgument, "--n-grid entries must be at least 2");
    }
    for (const int k : req.k_grid) {
        if (k < 1) throw Error(ErrorKind::InvalidArgument, "--k-grid entries must be at least 1");
    }
    const std::uint64_t seed = resolve_seed(seed_flag);
    std::error_code ec;
    std::filesystem::create_directories(a.out_dir, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create '" + a.out_dir + "': " + ec.message());
    const std::string path = a.out_dir + "/" + to_string(req.target) + ".csv";
    write_file(path, reproduce_csv(req, seed));
    json cfg{{"target", a.target}, {"reps", req.reps > 0 ? req.reps : default_reps(req.target)}};
    if (req.target == ReproduceTarget::fig5 || req.target == ReproduceTarget::fig6) {
        cfg["n_grid"] = req.n_grid;
        cfg["k_grid"] = req.k_grid;
    }
    write_manifest(path, inv, cfg, seed, {path}, seconds_since(t0));
}

}  // namespace cma::cli
