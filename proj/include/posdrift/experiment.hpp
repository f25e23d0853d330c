#pragma once

#include <algorithm>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "posdrift/csv.hpp"
#include "posdrift/diagnostics.hpp"
#include "posdrift/errors.hpp"
#include "posdrift/estimators.hpp"
#include "posdrift/model.hpp"
#include "posdrift/rng.hpp"
#include "posdrift/simulate.hpp"
#include "posdrift/velocity.hpp"

namespace posdrift {

// Every knob of an experiment, with the defaults the tool would choose.
// Serialized in full (including defaults) to metadata.json so a run can be
// reproduced from its own output.
struct ExperimentConfig {
    // [model]
    std::string model_name = "cubic";
    double theta_star = 1.0;
    double sigma = 2.0;
    // [sim]
    double tau = 0.025;
    double h = 0.00025;
    long n_obs = 100000;
    std::vector<double> x0{0.0};
    std::vector<double> u0{0.0};
    double burn_in = 0.0;
    // [run]  mode: estimate | xi-stats | martingale
    std::string mode = "estimate";
    long replicates = 1;
    std::uint64_t master_seed = 1748200;
    bool record_history = true;
    // [lr]
    std::string lr_kind = "harmonic";
    double lr_a = 6.0;
    double lr_c1 = 1.0;
    double lr_c2 = 1.0;
    // [estimators]
    std::vector<std::string> estimators{"standard_sgd", "unbiased_sgd", "kalman", "mle",
                                        "sigma_qv"};
    // [estimator.sgd]
    std::vector<double> theta0{2.0};
    std::string variant = "shifted_innovation";
    // [estimator.kalman]
    std::vector<double> m_prior{2.0};
    std::vector<double> sigma_prior{6.0};  // one value: s*I; d_theta values: diagonal
    std::string sigma_mode = "in_prior";
    // [diagnostics]
    int max_lag = 3;
    std::vector<double> diag_theta;  // martingale evaluation point; empty = theta_star
    // [output]
    std::string output_dir;  // empty: resolved from --out / POSDRIFT_OUT / "posdrift-out"
    std::string preset;      // provenance only
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<double> parse_double_list(const std::string& v, const std::string& ctx) {
    std::vector<double> out;
    for (const auto& cell : split_csv_line(v)) out.push_back(parse_double(trim(cell), ctx));
    if (out.empty()) throw io_error(ctx + ": empty list");
    return out;
}

inline long parse_long(const std::string& v, const std::string& ctx) {
    long out = 0;
    const std::string t = trim(v);
    const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw io_error(ctx + ": cannot parse integer '" + v + "'");
    return out;
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& ctx) {
    std::uint64_t out = 0;
    const std::string t = trim(v);
    const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw io_error(ctx + ": cannot parse unsigned integer '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& v, const std::string& ctx) {
    const std::string t = trim(v);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw io_error(ctx + ": cannot parse boolean '" + v + "'");
}

inline std::vector<std::string> parse_name_list(const std::string& v) {
    std::vector<std::string> out;
    for (const auto& cell : split_csv_line(v)) {
        const std::string t = trim(cell);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

// Applies one section/key/value triple onto the config.  Shared by the INI
// and JSON loaders so both formats accept exactly the same schema.
inline void apply_config_kv(ExperimentConfig& cfg, const std::string& section,
                            const std::string& key, const std::string& value,
                            const std::string& file, int line) {
    const std::string ctx = file + ":" + std::to_string(line);
    auto unknown = [&]() {
        throw config_error(file, line, "unknown configuration key '" + section +
                                           (section.empty() ? "" : ".") + key + "'");
    };
    try {
        if (section == "model") {
            if (key == "name") cfg.model_name = trim(value);
            else if (key == "theta_star") cfg.theta_star = parse_double(trim(value), ctx);
            else if (key == "sigma") cfg.sigma = parse_double(trim(value), ctx);
            else unknown();
        } else if (section == "sim") {
            if (key == "tau") cfg.tau = parse_double(trim(value), ctx);
            else if (key == "h") cfg.h = parse_double(trim(value), ctx);
            else if (key == "n_obs") cfg.n_obs = parse_long(value, ctx);
            else if (key == "x0") cfg.x0 = parse_double_list(value, ctx);
            else if (key == "u0") cfg.u0 = parse_double_list(value, ctx);
            else if (key == "burn_in") cfg.burn_in = parse_double(trim(value), ctx);
            else unknown();
        } else if (section == "run") {
            if (key == "mode") cfg.mode = trim(value);
            else if (key == "replicates") cfg.replicates = parse_long(value, ctx);
            else if (key == "master_seed") cfg.master_seed = parse_u64(value, ctx);
            else if (key == "record_history") cfg.record_history = parse_bool(value, ctx);
            else unknown();
        } else if (section == "lr") {
            if (key == "kind") cfg.lr_kind = trim(value);
            else if (key == "a") cfg.lr_a = parse_double(trim(value), ctx);
            else if (key == "c1") cfg.lr_c1 = parse_double(trim(value), ctx);
            else if (key == "c2") cfg.lr_c2 = parse_double(trim(value), ctx);
            else unknown();
        } else if (section == "estimators") {
            if (key == "list") cfg.estimators = parse_name_list(value);
            else unknown();
        } else if (section == "estimator.sgd") {
            if (key == "theta0") cfg.theta0 = parse_double_list(value, ctx);
            else if (key == "variant") cfg.variant = trim(value);
            else unknown();
        } else if (section == "estimator.kalman") {
            if (key == "m_prior") cfg.m_prior = parse_double_list(value, ctx);
            else if (key == "sigma_prior") cfg.sigma_prior = parse_double_list(value, ctx);
            else if (key == "sigma_mode") cfg.sigma_mode = trim(value);
            else unknown();
        } else if (section == "diagnostics") {
            if (key == "max_lag") cfg.max_lag = static_cast<int>(parse_long(value, ctx));
            else if (key == "theta") cfg.diag_theta = parse_double_list(value, ctx);
            else unknown();
        } else if (section == "output") {
            if (key == "dir") cfg.output_dir = trim(value);
            else unknown();
        } else {
            throw config_error(file, line, "unknown configuration section '" + section + "'");
        }
    } catch (const io_error& e) {
        throw config_error(file, line, e.what());
    }
}

}  // namespace detail

// INI-style loader: [section] headers, key = value lines, # or ; comments.
inline ExperimentConfig load_config_ini(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error(path, 0, "cannot open file");
    ExperimentConfig cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw config_error(path, lineno, "malformed section header '" + t + "'");
            section = detail::trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw config_error(path, lineno, "expected 'key = value', got '" + t + "'");
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        if (key.empty()) throw config_error(path, lineno, "empty key");
        detail::apply_config_kv(cfg, section, key, value, path, lineno);
    }
    return cfg;
}

// JSON loader accepting the metadata.json this tool writes (its "config"
// object) or a bare config object with the same section/key layout.
inline ExperimentConfig load_config_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error(path, 0, "cannot open file");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error(path, 0, std::string("JSON parse failure: ") + e.what());
    }
    if (j.contains("config")) j = j["config"];
    ExperimentConfig cfg;
    for (const auto& [section, obj] : j.items()) {
        if (!obj.is_object())
            throw config_error(path, 0, "section '" + section + "' must be an object");
        for (const auto& [key, val] : obj.items()) {
            std::string s;
            if (val.is_string()) s = val.get<std::string>();
            else if (val.is_array()) {
                for (std::size_t i = 0; i < val.size(); ++i) {
                    if (i) s += ",";
                    s += val[i].is_string() ? val[i].get<std::string>() : val[i].dump();
                }
            } else s = val.dump();
            detail::apply_config_kv(cfg, section, key, s, path, 0);
        }
    }
    return cfg;
}

// Sniffs JSON (first non-space byte '{') versus INI.
inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error(path, 0, "cannot open file");
    char c = 0;
    while (f.get(c) && (c == ' ' || c == '\t' || c == '\n' || c == '\r')) {}
    return (c == '{') ? load_config_json(path) : load_config_ini(path);
}

struct PresetInfo {
    std::string name;
    std::string description;
};

inline std::vector<PresetInfo> preset_catalog() {
    return {
        {"fig1",
         "Cubic-drift comparison at tau=0.025, N=1e5: biased SGD vs shift-corrected SGD vs "
         "Kalman posterior (history traces, final-estimate summary, sigma estimates)"},
        {"xi-stats",
         "Rescaled-innovation statistics on integrated OU data: variance vs 2/3, lag-1 "
         "autocovariance vs 1/6, higher lags vs 0"},
        {"martingale",
         "Velocity-times-innovation sums on OU data over T=100: unshifted mean drifts to "
         "T*sigma/2, shifted mean stays at 0"},
    };
}

inline ExperimentConfig make_preset(const std::string& name) {
    ExperimentConfig cfg;
    cfg.preset = name;
    if (name == "fig1") {
        // Defaults already describe this experiment.
        cfg.master_seed = 1748200;
        return cfg;
    }
    if (name == "xi-stats") {
        cfg.model_name = "ou";
        cfg.theta_star = 0.0;
        cfg.sigma = 1.0;
        cfg.tau = 0.01;
        cfg.h = 0.0001;
        cfg.n_obs = 100000;
        cfg.mode = "xi-stats";
        cfg.replicates = 10;
        cfg.master_seed = 530912;
        cfg.record_history = false;
        cfg.estimators.clear();
        return cfg;
    }
    if (name == "martingale") {
        cfg.model_name = "ou";
        cfg.theta_star = 0.0;
        cfg.sigma = 1.0;
        cfg.tau = 0.01;
        cfg.h = 0.0001;
        cfg.n_obs = 10000;  // T = n_obs * tau = 100
        cfg.mode = "martingale";
        cfg.replicates = 100;
        cfg.master_seed = 86040;
        cfg.record_history = false;
        cfg.estimators.clear();
        return cfg;
    }
    throw invalid_argument("unknown preset '" + name + "' (see list-presets)");
}

namespace detail {

// Fully validated, ready-to-run experiment.
struct ResolvedExperiment {
    ExperimentConfig cfg;
    ModelSpec model;
    SimConfig sim;
    LearningRate lr;
    SgdVariant variant = SgdVariant::shifted_innovation;
    SigmaMode sigma_mode = SigmaMode::in_prior;
    Vec theta0, m_prior, diag_theta;
    Mat Sigma_prior;
    std::filesystem::path out_dir;
    bool write_files = true;
};

inline Vec to_vec(const std::vector<double>& v) {
    Vec out(static_cast<long>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<long>(i)) = v[i];
    return out;
}

// All validation lives here; throwing maps to exit code 2.
inline ResolvedExperiment resolve_experiment(const ExperimentConfig& cfg, bool write_files) {
    ResolvedExperiment r;
    r.cfg = cfg;
    r.write_files = write_files;
    r.model = model_by_name(cfg.model_name, cfg.theta_star, cfg.sigma);

    if (cfg.mode != "estimate" && cfg.mode != "xi-stats" && cfg.mode != "martingale")
        throw invalid_argument("run.mode must be one of estimate, xi-stats, martingale (got '" +
                               cfg.mode + "')");
    if (cfg.replicates < 1) throw invalid_argument("run.replicates must be >= 1");

    r.sim.h = cfg.h;
    r.sim.tau = cfg.tau;
    r.sim.n_obs = cfg.n_obs;
    r.sim.x0 = to_vec(cfg.x0);
    r.sim.u0 = to_vec(cfg.u0);
    r.sim.burn_in = cfg.burn_in;
    validate_sim_config(r.sim, r.model.d);

    if (cfg.lr_kind == "harmonic") r.lr = LearningRate::harmonic(cfg.lr_a);
    else if (cfg.lr_kind == "inverse_time") r.lr = LearningRate::inverse_time(cfg.lr_c1, cfg.lr_c2);
    else throw invalid_argument("lr.kind must be harmonic or inverse_time (got '" +
                                cfg.lr_kind + "')");

    if (cfg.variant == "shifted_innovation") r.variant = SgdVariant::shifted_innovation;
    else if (cfg.variant == "shifted_difference") r.variant = SgdVariant::shifted_difference;
    else throw invalid_argument("estimator.sgd.variant must be shifted_innovation or "
                                "shifted_difference (got '" + cfg.variant + "')");

    if (cfg.sigma_mode == "known") r.sigma_mode = SigmaMode::known;
    else if (cfg.sigma_mode == "in_prior") r.sigma_mode = SigmaMode::in_prior;
    else throw invalid_argument("estimator.kalman.sigma_mode must be known or in_prior (got '" +
                                cfg.sigma_mode + "')");

    for (const auto& e : cfg.estimators)
        if (e != "standard_sgd" && e != "unbiased_sgd" && e != "kalman" && e != "mle" &&
            e != "sigma_qv")
            throw invalid_argument("estimators.list: unknown estimator '" + e + "'");
    if (cfg.mode == "estimate" && cfg.estimators.empty())
        throw invalid_argument("estimators.list must not be empty in estimate mode");

    r.theta0 = to_vec(cfg.theta0);
    if (r.theta0.size() != r.model.d_theta)
        throw invalid_argument("estimator.sgd.theta0 must have d_theta = " +
                               std::to_string(r.model.d_theta) + " entries");
    r.m_prior = to_vec(cfg.m_prior);
    if (r.m_prior.size() != r.model.d_theta)
        throw invalid_argument("estimator.kalman.m_prior must have d_theta entries");
    if (cfg.sigma_prior.size() == 1) {
        r.Sigma_prior = cfg.sigma_prior[0] * Mat::Identity(r.model.d_theta, r.model.d_theta);
    } else if (static_cast<long>(cfg.sigma_prior.size()) == r.model.d_theta) {
        r.Sigma_prior = to_vec(cfg.sigma_prior).asDiagonal();
    } else {
        throw invalid_argument("estimator.kalman.sigma_prior must be one value or d_theta values");
    }
    if (Eigen::LLT<Mat>(r.Sigma_prior).info() != Eigen::Success)
        throw invalid_argument("estimator.kalman.sigma_prior must be positive definite");

    if (cfg.diag_theta.empty()) {
        r.diag_theta = *r.model.theta_star;
    } else {
        r.diag_theta = to_vec(cfg.diag_theta);
        if (r.diag_theta.size() != r.model.d_theta)
            throw invalid_argument("diagnostics.theta must have d_theta entries");
    }
    if (cfg.max_lag < 0) throw invalid_argument("diagnostics.max_lag must be >= 0");

    if (write_files) {
        if (cfg.output_dir.empty())
            throw invalid_argument("output.dir is empty and no fallback was provided");
        r.out_dir = cfg.output_dir;
        std::error_code ec;
        std::filesystem::create_directories(r.out_dir, ec);
        if (ec)
            throw invalid_argument("cannot create output directory '" + cfg.output_dir +
                                   "': " + ec.message());
    }
    return r;
}

inline std::string utc_timestamp() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["model"] = {{"name", c.model_name}, {"theta_star", c.theta_star}, {"sigma", c.sigma}};
    j["sim"] = {{"tau", c.tau},     {"h", c.h},           {"n_obs", c.n_obs},
                {"x0", c.x0},       {"u0", c.u0},         {"burn_in", c.burn_in}};
    j["run"] = {{"mode", c.mode},
                {"replicates", c.replicates},
                {"master_seed", c.master_seed},
                {"record_history", c.record_history}};
    j["lr"] = {{"kind", c.lr_kind}, {"a", c.lr_a}, {"c1", c.lr_c1}, {"c2", c.lr_c2}};
    j["estimators"] = {{"list", c.estimators}};
    j["estimator.sgd"] = {{"theta0", c.theta0}, {"variant", c.variant}};
    j["estimator.kalman"] = {{"m_prior", c.m_prior},
                             {"sigma_prior", c.sigma_prior},
                             {"sigma_mode", c.sigma_mode}};
    j["diagnostics"] = {{"max_lag", c.max_lag}};
    if (!c.diag_theta.empty()) j["diagnostics"]["theta"] = c.diag_theta;
    j["output"] = {{"dir", c.output_dir}};
    return j;
}

inline void write_metadata(const ResolvedExperiment& r) {
    nlohmann::json j;
    j["tool"] = "posdrift";
    j["created_utc"] = utc_timestamp();  // the only field excluded from reproducibility checks
    j["preset"] = r.cfg.preset.empty() ? nlohmann::json() : nlohmann::json(r.cfg.preset);
    j["seed_derivation"] =
        "replicate_seed(i) = splitmix64(splitmix64(master_seed XOR 0x9E3779B97F4A7C15 * (i+1)))";
    j["defaults_note"] =
        "all values below are fully resolved (initial conditions, burn-in, priors, seeds)";
    j["config"] = config_to_json(r.cfg);
    std::ofstream f(r.out_dir / "metadata.json");
    if (!f) throw io_error("cannot write metadata.json");
    f << j.dump(2) << "\n";
}

struct SummaryRow {
    std::string estimator;
    long replicate = 0;
    std::uint64_t seed = 0;
    Vec theta;       // empty when not applicable
    double sigma_hat = std::numeric_limits<double>::quiet_NaN();
    Vec band;        // kalman posterior sd, else empty
};

inline void write_summary(const ResolvedExperiment& r, const std::vector<SummaryRow>& rows) {
    const int dt = r.model.d_theta;
    std::vector<std::string> header = {"estimator", "replicate", "seed"};
    for (int i = 0; i < dt; ++i) header.push_back("theta_" + std::to_string(i));
    header.push_back("sigma_hat");
    for (int i = 0; i < dt; ++i) header.push_back("band_" + std::to_string(i));
    std::vector<std::vector<std::string>> cells;
    cells.reserve(rows.size());
    for (const auto& row : rows) {
        std::vector<std::string> c = {row.estimator, std::to_string(row.replicate),
                                      std::to_string(row.seed)};
        for (int i = 0; i < dt; ++i)
            c.push_back(row.theta.size() ? format_double(row.theta(i)) : "");
        c.push_back(std::isnan(row.sigma_hat) ? "" : format_double(row.sigma_hat));
        for (int i = 0; i < dt; ++i)
            c.push_back(row.band.size() ? format_double(row.band(i)) : "");
        cells.push_back(std::move(c));
    }
    write_csv((r.out_dir / "summary.csv").string(), header, cells);
}

inline void execute_estimate(const ResolvedExperiment& r, std::ostream& log) {
    std::vector<SummaryRow> rows;
    for (long rep = 0; rep < r.cfg.replicates; ++rep) {
        SimConfig sim = r.sim;
        sim.seed = derive_seed(r.cfg.master_seed, static_cast<std::uint64_t>(rep));
        const Trajectory traj = generate_reference(r.model, sim);
        const VelocitySeries series = midpoint_velocities(traj);
        const bool hist = r.cfg.record_history && rep == 0 && r.write_files;
        for (const auto& name : r.cfg.estimators) {
            SummaryRow row;
            row.estimator = name;
            row.replicate = rep;
            row.seed = sim.seed;
            try {
            if (name == "standard_sgd") {
                const SgdState st = sgd_standard_run(traj, r.model, r.theta0, r.lr, hist);
                row.theta = st.theta;
                if (hist)
                    write_sgd_history_csv((r.out_dir / "history_standard_sgd.csv").string(), st,
                                          traj.tau);
            } else if (name == "unbiased_sgd") {
                const SgdState st =
                    sgd_unbiased_run(traj, r.model, r.theta0, r.lr, r.variant, hist);
                row.theta = st.theta;
                if (hist)
                    write_sgd_history_csv((r.out_dir / "history_unbiased_sgd.csv").string(), st,
                                          traj.tau);
            } else if (name == "kalman") {
                const KalmanState st =
                    kalman_run(traj, r.model, r.m_prior, r.Sigma_prior, r.sigma_mode, hist);
                row.theta = st.m;
                row.band = st.Sigma.diagonal().cwiseSqrt();
                if (hist)
                    write_kalman_history_csv((r.out_dir / "history_kalman.csv").string(), st,
                                             traj.tau);
            } else if (name == "mle") {
                const MleResult mle = mle_fit(traj, r.model);
                row.theta = mle.theta_hat;
                row.sigma_hat = mle.sigma_hat;
            } else if (name == "sigma_qv") {
                row.sigma_hat = estimate_sigma(series);
            }
            } catch (const error& e) {
                throw error("estimator " + name + " (replicate " + std::to_string(rep) +
                            "): " + e.what());
            }
            rows.push_back(std::move(row));
        }
    }
    if (r.write_files) write_summary(r, rows);

    log << "estimate: model=" << r.model.name << " tau=" << r.sim.tau
        << " n_obs=" << r.sim.n_obs << " replicates=" << r.cfg.replicates << "\n";
    for (const auto& row : rows) {
        log << "  [" << row.replicate << "] " << row.estimator << ":";
        if (row.theta.size()) {
            log << " theta =";
            for (long i = 0; i < row.theta.size(); ++i) log << " " << row.theta(i);
        }
        if (!std::isnan(row.sigma_hat)) log << " sigma_hat = " << row.sigma_hat;
        if (row.band.size()) {
            log << " band =";
            for (long i = 0; i < row.band.size(); ++i) log << " " << row.band(i);
        }
        log << "\n";
    }
}

inline void execute_xi_stats(const ResolvedExperiment& r, std::ostream& log) {
    const int K = r.cfg.max_lag;
    std::vector<Eigen::VectorXd> xis;
    std::vector<InnovationStats> per_rep;
    long total = 0;
    for (long rep = 0; rep < r.cfg.replicates; ++rep) {
        SimConfig sim = r.sim;
        sim.seed = derive_seed(r.cfg.master_seed, static_cast<std::uint64_t>(rep));
        const Trajectory traj = generate_reference(r.model, sim);
        const VelocitySeries series = midpoint_velocities(traj);
        xis.push_back(rescaled_innovations(series, r.model.sigma));
        per_rep.push_back(xi_statistics(xis.back(), K));
        total += xis.back().size();
    }
    Eigen::VectorXd pooled(total);
    long at = 0;
    for (const auto& x : xis) {
        pooled.segment(at, x.size()) = x;
        at += x.size();
    }
    const InnovationStats stats = xi_statistics(pooled, K);

    // Replicate spread gives the standard error of each pooled statistic.
    std::vector<double> se(static_cast<std::size_t>(K) + 1, 0.0);
    const double R = static_cast<double>(r.cfg.replicates);
    if (r.cfg.replicates > 1) {
        for (int k = 0; k <= K; ++k) {
            KahanSum s, s2;
            for (const auto& st : per_rep) {
                s.add(st.autocov[static_cast<std::size_t>(k)]);
                s2.add(st.autocov[static_cast<std::size_t>(k)] *
                       st.autocov[static_cast<std::size_t>(k)]);
            }
            const double var = (s2.value() - s.value() * s.value() / R) / (R - 1.0);
            se[static_cast<std::size_t>(k)] = std::sqrt(std::max(var, 0.0) / R);
        }
    }
    const double targets[2] = {2.0 / 3.0, 1.0 / 6.0};
    std::vector<std::vector<std::string>> cells;
    log << "xi-stats: pooled over " << r.cfg.replicates << " replicates, " << stats.n_terms
        << " terms (mean " << stats.mean << ")\n";
    log << "  lag  autocov      target       std_error\n";
    for (int k = 0; k <= K; ++k) {
        const double target = k < 2 ? targets[k] : 0.0;
        const double v = stats.autocov[static_cast<std::size_t>(k)];
        cells.push_back({std::to_string(k), format_double(v), format_double(target),
                         format_double(se[static_cast<std::size_t>(k)])});
        log << "  " << k << "    " << v << "   " << target << "   "
            << se[static_cast<std::size_t>(k)] << "\n";
    }
    if (r.write_files)
        write_csv((r.out_dir / "xi_stats.csv").string(),
                  {"lag", "autocov", "target", "std_error"}, cells);
}

inline void execute_martingale(const ResolvedExperiment& r, std::ostream& log) {
    SimConfig sim = r.sim;
    sim.seed = r.cfg.master_seed;  // recipe carrier; replicates are drawn inside the check
    const Trajectory recipe = generate_reference(r.model, sim);
    const double T = static_cast<double>(r.sim.n_obs) * r.sim.tau;
    std::vector<std::vector<std::string>> cells;
    log << "martingale: T = " << T << ", sigma = " << r.model.sigma << ", "
        << r.cfg.replicates << " replicates, theta = " << r.diag_theta.transpose() << "\n";
    for (const bool shifted : {false, true}) {
        const auto [mean, se] = martingale_sum_check(recipe, r.model, r.diag_theta, shifted,
                                                     r.cfg.replicates, r.cfg.master_seed);
        const double target = shifted ? 0.0 : T * r.model.sigma / 2.0;
        cells.push_back({shifted ? "shifted" : "unshifted", format_double(mean),
                         format_double(se), format_double(target)});
        log << "  " << (shifted ? "shifted:   " : "unshifted: ") << "mean = " << mean
            << "  se = " << se << "  target = " << target << "\n";
    }
    if (r.write_files)
        write_csv((r.out_dir / "martingale.csv").string(),
                  {"variant", "mean_sum", "std_error", "target"}, cells);
}

}  // namespace detail

// Runs a fully resolved config.  Validation errors exit 2, runtime errors 1.
inline int run_experiment_config(const ExperimentConfig& cfg, std::ostream& log,
                                 bool write_files = true) {
    detail::ResolvedExperiment r;
    try {
        r = detail::resolve_experiment(cfg, write_files);
    } catch (const error& e) {
        log << "config error: " << e.what() << "\n";
        return 2;
    }
    try {
        if (cfg.mode == "estimate") detail::execute_estimate(r, log);
        else if (cfg.mode == "xi-stats") detail::execute_xi_stats(r, log);
        else detail::execute_martingale(r, log);
        if (r.write_files) detail::write_metadata(r);
    } catch (const error& e) {
        log << "runtime error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

// Config-file entry point; exit codes: 0 success, 1 runtime failure, 2 config failure.
inline int run_experiment(const std::string& config_path, std::ostream& log = std::cout) {
    ExperimentConfig cfg;
    try {
        cfg = load_config(config_path);
    } catch (const error& e) {
        log << "config error: " << e.what() << "\n";
        return 2;
    }
    return run_experiment_config(cfg, log);
}

inline void list_presets(std::ostream& log = std::cout) {
    for (const auto& p : preset_catalog()) log << p.name << " — " << p.description << "\n";
}

}  // namespace posdrift
