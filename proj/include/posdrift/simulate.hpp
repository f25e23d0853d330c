#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "posdrift/errors.hpp"
#include "posdrift/model.hpp"
#include "posdrift/rng.hpp"

namespace posdrift {

// Simulation recipe: fine integration step h, observation interval tau
// (an integer multiple of h), number of retained observations, initial
// state, optional burn-in duration discarded before recording.
struct SimConfig {
    double h = 0.0;
    double tau = 0.0;
    long n_obs = 0;  // N: positions X_{t_0}..X_{t_N} are recorded (N+1 values)
    Vec x0;
    Vec u0;
    std::uint64_t seed = 0;
    double burn_in = 0.0;
    bool record_true_velocities = false;
    bool record_fine_velocities = false;  // diagnostics only; memory-heavy
};

// Velocity samples on the fine integration grid (diagnostics only).
struct FineTrace {
    double h = 0.0;
    Mat u;  // d x (n_obs * J + 1)
};

struct Trajectory {
    double tau = 0.0;
    Mat positions;                      // d x (n_obs + 1)
    std::optional<Mat> true_velocities; // d x (n_obs + 1), observation grid
    std::optional<FineTrace> fine;      // fine-grid velocities when requested
    std::uint64_t seed = 0;
    SimConfig cfg;  // the full recipe, so replicate studies can re-simulate

    long n_obs() const { return positions.cols() - 1; }
    int dim() const { return static_cast<int>(positions.rows()); }
};

// Validates cfg against a model dimension and returns J = tau/h.
inline long validate_sim_config(const SimConfig& cfg, int d) {
    if (!(cfg.h > 0.0)) throw invalid_argument("sim.h must be positive");
    if (!(cfg.tau > 0.0)) throw invalid_argument("sim.tau must be positive");
    const double ratio = cfg.tau / cfg.h;
    const long J = std::llround(ratio);
    if (J < 1 || std::abs(ratio - static_cast<double>(J)) > 1e-9 * ratio)
        throw invalid_argument("sim.tau must be an integer multiple of sim.h (tau/h = " +
                               std::to_string(ratio) + ")");
    if (cfg.n_obs < 4)
        throw invalid_argument("sim.n_obs must be at least 4 (estimators read indices up to n+3)");
    if (cfg.x0.size() != d || cfg.u0.size() != d)
        throw invalid_argument("sim.x0/u0 must have the model dimension d=" + std::to_string(d));
    if (cfg.burn_in < 0.0) throw invalid_argument("sim.burn_in must be non-negative");
    return J;
}

// Euler-Maruyama on the coupled system at step h:
//     X_{k+1} = X_k + U_k h
//     U_{k+1} = U_k + g(X_k, U_k) h + sqrt(sigma h) xi_k,
// recording every J = tau/h-th position.  Deterministic given cfg.seed.
inline Trajectory generate_reference(const ModelSpec& model, const SimConfig& cfg) {
    if (!model.theta_star)
        throw invalid_argument("generate_reference: model has no true parameter (theta_star)");
    const long J = validate_sim_config(cfg, model.d);
    const long n_burn = std::llround(cfg.burn_in / cfg.h);
    const long n_fine = cfg.n_obs * J;

    Trajectory traj;
    traj.tau = cfg.tau;
    traj.seed = cfg.seed;
    traj.cfg = cfg;
    traj.positions.resize(model.d, cfg.n_obs + 1);
    if (cfg.record_true_velocities) traj.true_velocities = Mat(model.d, cfg.n_obs + 1);
    if (cfg.record_fine_velocities) {
        traj.fine = FineTrace{cfg.h, Mat(model.d, n_fine + 1)};
    }

    NormalSampler normal(cfg.seed);
    Vec x = cfg.x0, u = cfg.u0;
    Vec g(model.d), fval(model.d), xi(model.d);
    Mat feats(model.d, model.d_theta);
    const Vec& theta = *model.theta_star;
    const double noise_scale = std::sqrt(model.sigma * cfg.h);

    auto em_step = [&](long k_global) {
        model.f(x, u, fval);
        model.F(x, u, feats);
        g.noalias() = feats * theta;
        g += fval;
        if (model.sigma > 0.0)
            for (int i = 0; i < model.d; ++i) xi(i) = normal();
        x += u * cfg.h;  // position advances with the pre-update velocity
        u += g * cfg.h;
        if (model.sigma > 0.0) u += noise_scale * xi;
        if (!x.allFinite() || !u.allFinite())
            throw simulation_diverged(static_cast<double>(k_global + 1) * cfg.h,
                                      "simulation diverged: state became non-finite at t = " +
                                          std::to_string(static_cast<double>(k_global + 1) * cfg.h) +
                                          " (model '" + model.name + "')");
    };

    for (long k = 0; k < n_burn; ++k) em_step(k);

    traj.positions.col(0) = x;
    if (traj.true_velocities) traj.true_velocities->col(0) = u;
    if (traj.fine) traj.fine->u.col(0) = u;
    for (long n = 0; n < cfg.n_obs; ++n) {
        for (long j = 0; j < J; ++j) {
            em_step(n_burn + n * J + j);
            if (traj.fine) traj.fine->u.col(n * J + j + 1) = u;
        }
        traj.positions.col(n + 1) = x;
        if (traj.true_velocities) traj.true_velocities->col(n + 1) = u;
    }
    return traj;
}

struct BmMoments {
    double var_integral = 0.0;        // sample variance of I = integral of W over [0, tau]
    double cov_with_increment = 0.0;  // sample covariance of (I, W_tau)
    long n_samples = 0;
};

// Monte Carlo moments of integrated Brownian motion, built from the same
// normal stream the simulator uses.  The path integral is a trapezoid sum
// at substep tau/100: its covariance with W_tau is exactly tau^2/2 and its
// variance is (tau^3/3)(1 - 1/(4 J^2)), so at J=100 both match the exact
// values far inside Monte Carlo noise.  Self-test that noise generation is
// consistent with the second-moment analysis of the velocity pipeline.
inline BmMoments integrated_bm_moments(double tau, long n_samples, std::uint64_t seed) {
    if (!(tau > 0.0)) throw invalid_argument("integrated_bm_moments: tau must be positive");
    if (n_samples < 2) throw invalid_argument("integrated_bm_moments: need at least 2 samples");
    const long J = 100;
    const double h = tau / static_cast<double>(J);
    const double root_h = std::sqrt(h);
    NormalSampler normal(seed);
    KahanSum sum_i, sum_w, sum_ii, sum_iw;
    for (long s = 0; s < n_samples; ++s) {
        double w = 0.0, integral = 0.0;
        for (long k = 0; k < J; ++k) {
            const double dw = root_h * normal();
            integral += (w + 0.5 * dw) * h;  // trapezoid: (W_k + W_{k+1}) / 2 * h
            w += dw;
        }
        sum_i.add(integral);
        sum_w.add(w);
        sum_ii.add(integral * integral);
        sum_iw.add(integral * w);
    }
    const double n = static_cast<double>(n_samples);
    BmMoments out;
    out.n_samples = n_samples;
    out.var_integral = (sum_ii.value() - sum_i.value() * sum_i.value() / n) / (n - 1.0);
    out.cov_with_increment = (sum_iw.value() - sum_i.value() * sum_w.value() / n) / (n - 1.0);
    return out;
}

}  // namespace posdrift
