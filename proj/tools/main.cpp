#include "commands.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace cma;
using namespace cma::cli;

int main(int argc, char** argv) {
    CLI::App app{"Causal mediation analysis with correlated errors"};
    app.set_version_flag("--version", kToolkitVersion);
    app.require_subcommand(1);

    Invocation inv;
    for (int i = 1; i < argc; ++i) inv.argv.emplace_back(argv[i]);
    std::optional<std::uint64_t> seed;
    app.add_option("--seed", seed, "Root seed (falls back to CMA_SEED)");
    app.add_option("--threads", inv.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    // Accept the global flags after the subcommand name too.
    app.fallthrough();

    FitSingleArgs fs;
    auto* c_fs = app.add_subcommand("fit-single", "Fit one session at a given delta");
    c_fs->add_option("--data", fs.data, "CSV with columns z,m,r")->required();
    c_fs->add_option("--delta", fs.delta, "Error correlation")->required();
    c_fs->add_option("--level", fs.level, "Confidence level");
    c_fs->add_option("--out", fs.out, "JSON report path (default stdout)");

    FitMultilevelArgs fm;
    auto* c_fm = app.add_subcommand("fit-multilevel", "Fit a multilevel dataset");
    c_fm->add_option("--data", fm.data, "CSV with columns subject,session,z,m,r")->required();
    c_fm->add_option("--method", fm.method, "ml, h, ts or h-ts");
    c_fm->add_option("--delta", fm.delta, "Error correlation (required for ts)");
    c_fm->add_option("--level", fm.level, "Confidence level");
    c_fm->add_option("--bootstrap", fm.bootstrap, "Wild-bootstrap replicates (0 = none)");
    c_fm->add_option("--out", fm.out, "JSON report path (default stdout)");

    ProfileArgs pr;
    auto* c_pr = app.add_subcommand("profile", "Objective as a function of delta");
    c_pr->add_option("--data", pr.data, "Input CSV")->required();
    c_pr->add_option("--level", pr.level, "single or multi");
    c_pr->add_option("--grid", pr.grid, "lo:hi:n");
    c_pr->add_option("--out", pr.out, "CSV path (default stdout)");

    SimulateArgs sm;
    auto* c_sm = app.add_subcommand("simulate", "Generate a dataset from a JSON config");
    c_sm->add_option("--config", sm.config, "JSON config")->required();
    c_sm->add_option("--out", sm.out, "Dataset CSV path")->required();

    ReproduceArgs rp;
    auto* c_rp = app.add_subcommand("reproduce", "Run a published simulation study");
    c_rp->add_option("target", rp.target, "table1, table2, table3, fig5 or fig6")->required();
    c_rp->add_option("--reps", rp.reps, "Replications (0 = target default)");
    c_rp->add_option("--out-dir", rp.out_dir, "Output directory");
    c_rp->add_option("--n-grid", rp.n_grid, "Subject counts for the figures")->delimiter(',');
    c_rp->add_option("--k-grid", rp.k_grid, "Session counts for the figures")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*c_fs) {
            inv.command = "fit-single";
            run_fit_single(fs, inv, seed);
        } else if (*c_fm) {
            inv.command = "fit-multilevel";
            run_fit_multilevel(fm, inv, seed);
        } else if (*c_pr) {
            inv.command = "profile";
            run_profile(pr, inv, seed);
        } else if (*c_sm) {
            inv.command = "simulate";
            run_simulate(sm, inv, seed);
        } else if (*c_rp) {
            inv.command = "reproduce";
            run_reproduce(rp, inv, seed);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
