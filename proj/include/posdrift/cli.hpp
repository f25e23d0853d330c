#pragma once

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "posdrift/experiment.hpp"

namespace posdrift {

namespace detail {

// --out flag > [output] dir in the config > POSDRIFT_OUT env var > ./posdrift-out
inline void resolve_output_dir(ExperimentConfig& cfg, const std::string& cli_out) {
    if (!cli_out.empty()) {
        cfg.output_dir = cli_out;
        return;
    }
    if (!cfg.output_dir.empty()) return;
    if (const char* env = std::getenv("POSDRIFT_OUT"); env && *env) {
        cfg.output_dir = env;
        return;
    }
    cfg.output_dir = "posdrift-out";
}

struct CliOverrides {
    std::string config_path;
    std::string preset;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    long replicates = 0;  // 0 keeps the config value
};

inline int load_and_override(const CliOverrides& o, ExperimentConfig& cfg, std::ostream& log) {
    try {
        if (!o.preset.empty()) cfg = make_preset(o.preset);
        else cfg = load_config(o.config_path);
    } catch (const error& e) {
        log << "config error: " << e.what() << "\n";
        return 2;
    }
    if (o.seed_set) cfg.master_seed = o.seed;
    if (o.replicates > 0) cfg.replicates = o.replicates;
    return 0;
}

// Replicate study for estimate-mode presets: per-estimator mean, 3-standard-error
// confidence interval, and for the Kalman filter the 1-sd band coverage of the
// true parameter plus its distance from the shift-corrected SGD iterate.
inline int run_estimate_diagnosis(const ExperimentConfig& cfg0, const std::string& out_dir,
                                  std::ostream& log) {
    ExperimentConfig cfg = cfg0;
    cfg.record_history = false;
    ResolvedExperiment r;
    try {
        cfg.output_dir = out_dir;
        r = resolve_experiment(cfg, !out_dir.empty());
    } catch (const error& e) {
        log << "config error: " << e.what() << "\n";
        return 2;
    }
    const long R = cfg.replicates;
    const int dt = r.model.d_theta;
    std::map<std::string, Mat> finals;
    for (const auto& name : cfg.estimators)
        if (name != "sigma_qv") finals[name] = Mat(dt, R);
    Mat bands(dt, R);
    Mat sigma_rows(2, R);  // row 0: sigma_qv, row 1: mle sigma_hat
    sigma_rows.setConstant(std::numeric_limits<double>::quiet_NaN());
    try {
        for (long rep = 0; rep < R; ++rep) {
            SimConfig sim = r.sim;
            sim.seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(rep));
            const Trajectory traj = generate_reference(r.model, sim);
            const VelocitySeries series = midpoint_velocities(traj);
            for (const auto& name : cfg.estimators) {
                if (name == "standard_sgd")
                    finals[name].col(rep) =
                        sgd_standard_run(traj, r.model, r.theta0, r.lr).theta;
                else if (name == "unbiased_sgd")
                    finals[name].col(rep) =
                        sgd_unbiased_run(traj, r.model, r.theta0, r.lr, r.variant).theta;
                else if (name == "kalman") {
                    const KalmanState st =
                        kalman_run(traj, r.model, r.m_prior, r.Sigma_prior, r.sigma_mode);
                    finals[name].col(rep) = st.m;
                    bands.col(rep) = st.Sigma.diagonal().cwiseSqrt();
                } else if (name == "mle") {
                    const MleResult mle = mle_fit(traj, r.model);
                    finals[name].col(rep) = mle.theta_hat;
                    sigma_rows(1, rep) = mle.sigma_hat;
                } else if (name == "sigma_qv") {
                    sigma_rows(0, rep) = estimate_sigma(series);
                }
            }
        }
    } catch (const error& e) {
        log << "runtime error: " << e.what() << "\n";
        return 1;
    }
    const Vec& ts = *r.model.theta_star;
    log << "diagnose (estimate): " << R << " replicates, theta* = " << ts.transpose() << "\n";
    std::vector<std::vector<std::string>> cells;
    for (const auto& [name, F] : finals) {
        for (int i = 0; i < dt; ++i) {
            const double mean = F.row(i).mean();
            const double var =
                (F.row(i).array() - mean).square().sum() / static_cast<double>(R - 1);
            const double se = std::sqrt(var / static_cast<double>(R));
            const bool contains = std::abs(mean - ts(i)) <= 3.0 * se;
            log << "  " << name << " theta_" << i << ": mean = " << mean << "  3se = "
                << 3.0 * se << "  CI " << (contains ? "contains" : "misses") << " theta*\n";
            cells.push_back({name, std::to_string(i), format_double(mean), format_double(se),
                             contains ? "yes" : "no"});
        }
    }
    for (int s = 0; s < 2; ++s) {
        if (sigma_rows.row(s).hasNaN()) continue;
        const char* nm = s == 0 ? "sigma_qv" : "mle_sigma_hat";
        const double mean = sigma_rows.row(s).mean();
        log << "  " << nm << ": mean = " << mean << " (true sigma = " << r.model.sigma << ")\n";
        cells.push_back({nm, "-", format_double(mean), "", ""});
    }
    if (finals.count("kalman")) {
        long covered = 0;
        for (long rep = 0; rep < R; ++rep) {
            bool all = true;
            for (int i = 0; i < dt; ++i)
                all = all && std::abs(finals["kalman"](i, rep) - ts(i)) <= bands(i, rep);
            covered += all;
        }
        log << "  kalman 1-sd band covers theta* in " << covered << "/" << R
            << " replicates\n";
        if (finals.count("unbiased_sgd")) {
            const double gap =
                (finals["kalman"] - finals["unbiased_sgd"]).cwiseAbs().maxCoeff();
            log << "  max |kalman - unbiased_sgd| over replicates = " << gap << "\n";
        }
    }
    if (!out_dir.empty())
        write_csv((r.out_dir / "diagnose_estimate.csv").string(),
                  {"estimator", "component", "mean", "std_error", "ci_contains_theta_star"},
                  cells);
    return 0;
}

}  // namespace detail

// Diagnostics entry point: statistical self-checks for a preset.
inline int diagnose(const detail::CliOverrides& o, std::ostream& log = std::cout) {
    ExperimentConfig cfg;
    if (const int rc = detail::load_and_override(o, cfg, log); rc != 0) return rc;
    if (cfg.mode == "estimate") {
        if (o.replicates == 0 && cfg.replicates < 20) cfg.replicates = 20;
        return detail::run_estimate_diagnosis(cfg, o.out_dir, log);
    }
    // xi-stats and martingale modes already print their statistics next to targets.
    cfg.output_dir = o.out_dir;
    return run_experiment_config(cfg, log, !o.out_dir.empty());
}

inline int cli_main(int argc, char** argv) {
    CLI::App app{"posdrift: drift-parameter estimation for second-order SDEs observed "
                 "through positions only"};
    app.require_subcommand(1);

    detail::CliOverrides run_o, diag_o;

    CLI::App* run = app.add_subcommand("run", "Run an experiment from a config file or preset");
    auto* copt = run->add_option("--config", run_o.config_path,
                                 "Path to an INI or JSON experiment config");
    auto* popt = run->add_option("--preset", run_o.preset,
                                 "Name of a built-in experiment (see list-presets)");
    copt->excludes(popt);
    popt->excludes(copt);
    auto* sopt = run->add_option("--seed", run_o.seed, "Override the master seed");
    run->add_option("--out", run_o.out_dir, "Output directory for CSV and metadata files");
    run->add_option("--replicates", run_o.replicates, "Override the replicate count");

    CLI::App* lp = app.add_subcommand("list-presets", "List built-in experiments");

    CLI::App* diag = app.add_subcommand(
        "diagnose", "Run statistical self-checks for a preset (tables to stdout)");
    diag->add_option("--preset", diag_o.preset, "Preset to diagnose")->required();
    auto* dsopt = diag->add_option("--seed", diag_o.seed, "Override the master seed");
    diag->add_option("--out", diag_o.out_dir,
                     "Also write the diagnostic tables as CSV to this directory");
    diag->add_option("--replicates", diag_o.replicates, "Override the replicate count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the usage message
        return 2;     // command-line misuse is a config-stage failure
    }

    if (lp->parsed()) {
        list_presets(std::cout);
        return 0;
    }
    if (run->parsed()) {
        if (run_o.config_path.empty() && run_o.preset.empty()) {
            std::cerr << "config error: run requires --config or --preset\n";
            return 2;
        }
        run_o.seed_set = sopt->count() > 0;
        ExperimentConfig cfg;
        if (const int rc = detail::load_and_override(run_o, cfg, std::cout); rc != 0) return rc;
        detail::resolve_output_dir(cfg, run_o.out_dir);
        return run_experiment_config(cfg, std::cout);
    }
    diag_o.seed_set = dsopt->count() > 0;
    return diagnose(diag_o, std::cout);
}

}  // namespace posdrift
