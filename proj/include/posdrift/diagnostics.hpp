#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "posdrift/errors.hpp"
#include "posdrift/estimators.hpp"
#include "posdrift/model.hpp"
#include "posdrift/rng.hpp"
#include "posdrift/simulate.hpp"
#include "posdrift/velocity.hpp"

namespace posdrift {

// Sample statistics of the rescaled innovation sequence.
struct InnovationStats {
    long n_terms = 0;
    double mean = 0.0;
    double variance = 0.0;          // equals autocov[0]
    std::vector<double> autocov;    // lags 0..max_lag
};

// Rescaled innovations Xi_n = (U~_{n+1/2} - U~_{n-1/2}) / sqrt(sigma tau)
// for n = 1..N-1.  For independent Gaussian velocity forcing these have
// variance 2/3 and lag-1 autocovariance 1/6 (adjacent differences share one
// midpoint), vanishing beyond lag 1.  Scalar state only.
inline Eigen::VectorXd rescaled_innovations(const VelocitySeries& series, double sigma) {
    if (!(sigma > 0.0)) throw invalid_argument("rescaled_innovations: sigma must be positive");
    if (series.midpoint.rows() != 1)
        throw invalid_argument("rescaled_innovations: implemented for scalar state (d=1)");
    const long M = series.n_midpoints() - 1;
    if (M < 1) throw invalid_argument("rescaled_innovations: need at least two midpoints");
    const double scale = 1.0 / std::sqrt(sigma * series.tau);
    Eigen::VectorXd xi(M);
    for (long n = 1; n <= M; ++n)
        xi(n - 1) = (series.midpoint(0, n) - series.midpoint(0, n - 1)) * scale;
    return xi;
}

// Sample mean and autocovariances at lags 0..max_lag.  Divisor at lag k is
// (number of products) - 1, the direct generalization of the n-1 variance
// rule; autocov[0] is the variance field verbatim.
inline InnovationStats xi_statistics(const Eigen::VectorXd& xi, int max_lag) {
    const long M = xi.size();
    if (max_lag < 0) throw invalid_argument("xi_statistics: max_lag must be >= 0");
    if (M <= max_lag || M - max_lag - 1 < 1)
        throw invalid_argument("xi_statistics: need more than max_lag + 1 samples, got " +
                               std::to_string(M));
    InnovationStats out;
    out.n_terms = M;
    KahanSum s;
    for (long i = 0; i < M; ++i) s.add(xi(i));
    out.mean = s.value() / static_cast<double>(M);
    out.autocov.resize(static_cast<std::size_t>(max_lag) + 1);
    for (int k = 0; k <= max_lag; ++k) {
        KahanSum ck;
        for (long i = 0; i + k < M; ++i)
            ck.add((xi(i) - out.mean) * (xi(i + k) - out.mean));
        out.autocov[static_cast<std::size_t>(k)] =
            ck.value() / static_cast<double>(M - k - 1);
    }
    out.variance = out.autocov[0];
    return out;
}

// Monte Carlo check of the martingale structure of accumulated
// velocity-times-innovation sums at a fixed parameter:
//     S = sum_n  U~_n . dI_m(theta),   m = n (unshifted)  or  m = n+2 (shifted).
// The unshifted sum at theta = theta_star drifts by sigma tau / 2 per term
// (the centered velocity straddles the noise it multiplies); the shifted sum
// is zero-mean.  `traj` supplies the simulation recipe (its embedded config);
// n_replicates fresh trajectories are drawn from master_seed.
inline std::pair<double, double> martingale_sum_check(const Trajectory& traj,
                                                      const ModelSpec& model, const Vec& theta,
                                                      bool shifted, long n_replicates,
                                                      std::uint64_t master_seed) {
    if (!model.theta_star)
        throw invalid_argument("martingale_sum_check: model needs theta_star");
    if (n_replicates < 2)
        throw invalid_argument("martingale_sum_check: need at least 2 replicates");
    if (theta.size() != model.d_theta)
        throw invalid_argument("martingale_sum_check: theta size mismatch");
    const int shift = shifted ? 2 : 0;
    SimConfig cfg = traj.cfg;
    cfg.record_true_velocities = false;
    cfg.record_fine_velocities = false;
    KahanSum acc, acc2;
    Vec fval(model.d), dI(model.d), un(model.d), um(model.d), xm(model.d);
    Mat feats(model.d, model.d_theta);
    for (long r = 0; r < n_replicates; ++r) {
        cfg.seed = derive_seed(master_seed, static_cast<std::uint64_t>(r));
        const Trajectory t = generate_reference(model, cfg);
        const VelocitySeries series = midpoint_velocities(t);
        const long n_last = t.n_obs() - 1 - shift;
        KahanSum s;
        for (long n = 1; n <= n_last; ++n) {
            const long m = n + shift;
            un = series.centered(n);
            um = series.centered(m);
            xm = t.positions.col(m);
            model.f(xm, um, fval);
            model.F(xm, um, feats);
            dI = (series.midpoint.col(m) - series.midpoint.col(m - 1)) -
                 (fval + feats * theta) * series.tau;
            s.add(un.dot(dI));
        }
        acc.add(s.value());
        acc2.add(s.value() * s.value());
    }
    const double R = static_cast<double>(n_replicates);
    const double mean = acc.value() / R;
    const double var = (acc2.value() - acc.value() * acc.value() / R) / (R - 1.0);
    return {mean, std::sqrt(std::max(var, 0.0) / R)};
}

// Which estimator a replicate study runs, with its fixed inputs.
struct EstimatorChoice {
    enum class Kind { standard_sgd, unbiased_sgd, kalman, mle } kind = Kind::unbiased_sgd;
    LearningRate lr;  // SGD kinds
    Vec theta0;       // SGD kinds
    SgdVariant variant = SgdVariant::shifted_innovation;
    Vec m_prior;      // kalman
    Mat Sigma_prior;  // kalman
    SigmaMode sigma_mode = SigmaMode::in_prior;
};

struct BiasExperimentResult {
    Vec mean_final_theta;
    Vec ci_halfwidth;      // 3 standard errors, per component
    Mat finals;            // d_theta x n_replicates
    Mat bands;             // d_theta x n_replicates (kalman: sqrt diag Sigma_N; else empty)
};

// Runs the chosen estimator on n_replicates independent trajectories
// (per-replicate seeds derived from master_seed) and reports the replicate
// mean of the final estimate with a 3-standard-error half-width.
inline BiasExperimentResult bias_experiment(const ModelSpec& model, const SimConfig& cfg,
                                            const EstimatorChoice& choice, long n_replicates,
                                            std::uint64_t master_seed) {
    if (n_replicates < 2)
        throw invalid_argument("bias_experiment: need at least 2 replicates");
    BiasExperimentResult out;
    out.finals.resize(model.d_theta, n_replicates);
    if (choice.kind == EstimatorChoice::Kind::kalman)
        out.bands.resize(model.d_theta, n_replicates);
    SimConfig c = cfg;
    c.record_true_velocities = false;
    c.record_fine_velocities = false;
    for (long r = 0; r < n_replicates; ++r) {
        c.seed = derive_seed(master_seed, static_cast<std::uint64_t>(r));
        const Trajectory traj = generate_reference(model, c);
        switch (choice.kind) {
            case EstimatorChoice::Kind::standard_sgd:
                out.finals.col(r) = sgd_standard_run(traj, model, choice.theta0, choice.lr).theta;
                break;
            case EstimatorChoice::Kind::unbiased_sgd:
                out.finals.col(r) =
                    sgd_unbiased_run(traj, model, choice.theta0, choice.lr, choice.variant).theta;
                break;
            case EstimatorChoice::Kind::kalman: {
                const KalmanState ks = kalman_run(traj, model, choice.m_prior,
                                                  choice.Sigma_prior, choice.sigma_mode);
                out.finals.col(r) = ks.m;
                out.bands.col(r) = ks.Sigma.diagonal().cwiseSqrt();
                break;
            }
            case EstimatorChoice::Kind::mle:
                out.finals.col(r) = mle_fit(traj, model).theta_hat;
                break;
        }
    }
    const double R = static_cast<double>(n_replicates);
    out.mean_final_theta.resize(model.d_theta);
    out.ci_halfwidth.resize(model.d_theta);
    for (int i = 0; i < model.d_theta; ++i) {
        KahanSum s, s2;
        for (long r = 0; r < n_replicates; ++r) {
            s.add(out.finals(i, r));
            s2.add(out.finals(i, r) * out.finals(i, r));
        }
        const double mean = s.value() / R;
        const double var = (s2.value() - s.value() * s.value() / R) / (R - 1.0);
        out.mean_final_theta(i) = mean;
        out.ci_halfwidth(i) = 3.0 * std::sqrt(std::max(var, 0.0) / R);
    }
    return out;
}

}  // namespace posdrift
