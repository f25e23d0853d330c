#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "posdrift/errors.hpp"
#include "posdrift/model.hpp"
#include "posdrift/simulate.hpp"
#include "posdrift/velocity.hpp"

namespace posdrift {

// Decaying step-size schedule for SGD.
//   inverse_time: alpha(t) = c1 / (c2 + t), evaluated at t = n tau
//   harmonic:     alpha(n) = a / n
struct LearningRate {
    enum class Kind { inverse_time, harmonic };
    Kind kind = Kind::harmonic;
    double c1 = 0.0, c2 = 0.0;  // inverse_time constants
    double a = 0.0;             // harmonic constant

    static LearningRate inverse_time(double c1, double c2) {
        if (!(c1 > 0.0) || !(c2 > 0.0))
            throw invalid_argument("learning rate constants c1, c2 must be positive");
        LearningRate lr;
        lr.kind = Kind::inverse_time;
        lr.c1 = c1;
        lr.c2 = c2;
        return lr;
    }
    static LearningRate harmonic(double a) {
        if (!(a > 0.0)) throw invalid_argument("learning rate constant a must be positive");
        LearningRate lr;
        lr.kind = Kind::harmonic;
        lr.a = a;
        return lr;
    }

    // Step size at iteration n >= 1 (t is the physical time n tau).
    double at(long n, double t) const {
        if (n < 1) throw invalid_argument("learning rate index n must be >= 1");
        return kind == Kind::inverse_time ? c1 / (c2 + t) : a / static_cast<double>(n);
    }
};

enum class SgdVariant {
    shifted_innovation,  // innovation evaluated entirely two frames ahead of the gain
    shifted_difference,  // only the velocity difference shifted; drift stays at the gain frame
};

enum class SigmaMode { known, in_prior };

struct SgdState {
    Vec theta;
    long step = 0;
    std::vector<std::pair<long, Vec>> history;  // (n, theta after step n), when recorded
};

struct KalmanStep {
    long n = 0;
    Vec m;
    Mat Sigma;
};

struct KalmanState {
    Vec m;
    Mat Sigma;
    long step = 0;
    std::vector<KalmanStep> history;  // when recorded
};

struct MleResult {
    Vec theta_hat;
    double sigma_hat = 0.0;
    double objective_value = 0.0;
    double normal_matrix_condition = 0.0;
};

namespace detail {

// Estimator cores read positions through a view so tests can observe which
// indices each phase touches.  A production view is a bare accessor; a view
// may additionally expose phase() to receive phase-change notifications.
enum class AccessPhase { gain, difference, drift };

struct PlainPositions {
    const Mat& p;
    auto col(long n) const { return p.col(n); }
};

template <class View>
inline void set_phase(View& view, AccessPhase phase) {
    if constexpr (requires { view.phase(phase); }) view.phase(phase);
}

// One SGD family: iterates n = 1 .. N-1-shift with update
//   theta += alpha_n F(X_n, U~_n)^T dI,
// where dI is the innovation whose difference term sits `shift` frames ahead.
// shift = 0 is the standard (biased) recursion; shift = 2 the corrected one.
template <class View>
SgdState sgd_core(View& pos, long n_obs, double tau, const ModelSpec& model, Vec theta0,
                  const LearningRate& lr, int shift, SgdVariant variant, bool record_history) {
    if (theta0.size() != model.d_theta)
        throw invalid_argument("sgd: theta0 has size " + std::to_string(theta0.size()) +
                               ", expected " + std::to_string(model.d_theta));
    const long n_last = n_obs - 1 - shift;
    if (n_last < 1)
        throw invalid_argument("sgd: need n_obs >= " + std::to_string(3 + shift) +
                               " observations for shift " + std::to_string(shift));

    Vec mid_hi(model.d), mid_lo(model.d), ug(model.d), ud(model.d), xw(model.d);
    Vec fval(model.d), dI(model.d);
    Mat Fg(model.d, model.d_theta), Fd(model.d, model.d_theta);

    SgdState st;
    st.theta = std::move(theta0);
    if (record_history) st.history.reserve(static_cast<std::size_t>(n_last));

    auto load_mid = [&](long k, Vec& out) { out = (pos.col(k + 1) - pos.col(k)) / tau; };

    for (long n = 1; n <= n_last; ++n) {
        set_phase(pos, AccessPhase::gain);
        load_mid(n, mid_hi);
        load_mid(n - 1, mid_lo);
        ug = 0.5 * (mid_hi + mid_lo);
        xw = pos.col(n);
        model.F(xw, ug, Fg);

        set_phase(pos, AccessPhase::difference);
        const long m = n + shift;
        load_mid(m, mid_hi);
        load_mid(m - 1, mid_lo);
        dI = mid_hi - mid_lo;

        set_phase(pos, AccessPhase::drift);
        if (variant == SgdVariant::shifted_innovation) {
            ud = 0.5 * (mid_hi + mid_lo);
            xw = pos.col(m);
            model.f(xw, ud, fval);
            model.F(xw, ud, Fd);
            dI -= (fval + Fd * st.theta) * tau;
        } else {
            xw = pos.col(n);
            model.f(xw, ug, fval);
            dI -= (fval + Fg * st.theta) * tau;
        }

        st.theta += lr.at(n, static_cast<double>(n) * tau) * (Fg.transpose() * dI);
        st.step = n;
        if (!st.theta.allFinite())
            throw estimation_diverged(n, "sgd: theta became non-finite at step " +
                                             std::to_string(n));
        if (record_history) st.history.emplace_back(n, st.theta);
    }
    return st;
}

// Kalman recursion over n = 1 .. N-3 with the innovation two frames ahead:
//   K_n   = Sigma_n F_n^T (F_n Sigma_n F_n^T + (sigma/tau) I)^{-1}
//   m     += K_n dI_{n+2}(m) / tau
//   Sigma -= K_n F_n Sigma_n,   then symmetrized.
template <class View>
KalmanState kalman_core(View& pos, long n_obs, double tau, const ModelSpec& model, Vec m0,
                        Mat Sigma0, double sigma_gain, bool record_history) {
    const long n_last = n_obs - 3;
    if (n_last < 1) throw invalid_argument("kalman: need n_obs >= 4");
    const int d = model.d, dt = model.d_theta;

    Vec mid_hi(d), mid_lo(d), ug(d), ud(d), xw(d), fval(d), dI(d), dm(dt);
    Mat Fg(d, dt), Fd(d, dt), FS(d, dt), inner(d, d), Kt(d, dt), dS(dt, dt), sym(dt, dt);
    Eigen::LLT<Mat> llt(d);

    KalmanState st;
    st.m = std::move(m0);
    st.Sigma = std::move(Sigma0);
    if (record_history) st.history.reserve(static_cast<std::size_t>(n_last));

    auto load_mid = [&](long k, Vec& out) { out = (pos.col(k + 1) - pos.col(k)) / tau; };

    for (long n = 1; n <= n_last; ++n) {
        set_phase(pos, AccessPhase::gain);
        load_mid(n, mid_hi);
        load_mid(n - 1, mid_lo);
        ug = 0.5 * (mid_hi + mid_lo);
        xw = pos.col(n);
        model.F(xw, ug, Fg);

        FS.noalias() = Fg * st.Sigma;
        inner.noalias() = FS * Fg.transpose();
        inner.diagonal().array() += sigma_gain / tau;
        llt.compute(inner);
        if (llt.info() != Eigen::Success)
            throw singular_gain("kalman: gain matrix F Sigma F^T + (sigma/tau) I "
                                "not positive definite at step " + std::to_string(n));
        Kt = llt.solve(FS);  // K = Kt^T = Sigma F^T inner^{-1}

        set_phase(pos, AccessPhase::difference);
        const long m = n + 2;
        load_mid(m, mid_hi);
        load_mid(m - 1, mid_lo);
        dI = mid_hi - mid_lo;

        set_phase(pos, AccessPhase::drift);
        ud = 0.5 * (mid_hi + mid_lo);
        xw = pos.col(m);
        model.f(xw, ud, fval);
        model.F(xw, ud, Fd);
        dI -= (fval + Fd * st.m) * tau;

        dm.noalias() = Kt.transpose() * dI;
        st.m += dm / tau;
        dS.noalias() = Kt.transpose() * FS;
        st.Sigma -= dS;
        sym.noalias() = st.Sigma.transpose();
        st.Sigma += sym;
        st.Sigma *= 0.5;

        st.step = n;
        if (!st.m.allFinite() || !st.Sigma.allFinite())
            throw estimation_diverged(n, "kalman: state became non-finite at step " +
                                             std::to_string(n));
        if (record_history) st.history.push_back({n, st.m, st.Sigma});
    }
    return st;
}

}  // namespace detail

// Innovation at interior index n (1 <= n <= N-1):
//   dI_n(theta) = (U~_{n+1/2} - U~_{n-1/2}) - (f(X_n, U~_n) + F(X_n, U~_n) theta) tau.
inline Vec innovation(const VelocitySeries& series, const Trajectory& traj,
                      const ModelSpec& model, long n, const Vec& theta) {
    const long N = series.n_midpoints();
    if (n < 1 || n > N - 1)
        throw invalid_argument("innovation: index " + std::to_string(n) +
                               " outside the interior range 1.." + std::to_string(N - 1));
    if (theta.size() != model.d_theta)
        throw invalid_argument("innovation: theta size mismatch");
    const Vec un = series.centered(n);
    const Vec xn = traj.positions.col(n);
    Vec fval(model.d);
    Mat feats(model.d, model.d_theta);
    model.f(xn, un, fval);
    model.F(xn, un, feats);
    return (series.midpoint.col(n) - series.midpoint.col(n - 1)) -
           (fval + feats * theta) * series.tau;
}

// Standard (biased) SGD: gain and innovation share the frame.  n = 1..N-1.
inline SgdState sgd_standard_run(const Trajectory& traj, const ModelSpec& model,
                                 const Vec& theta0, const LearningRate& lr,
                                 bool record_history = false) {
    if (traj.n_obs() < 3) throw invalid_argument("sgd_standard_run: need n_obs >= 3");
    detail::PlainPositions pos{traj.positions};
    return detail::sgd_core(pos, traj.n_obs(), traj.tau, model, theta0, lr, 0,
                            SgdVariant::shifted_innovation, record_history);
}

// Corrected SGD: innovation difference two frames ahead of the gain.  n = 1..N-3.
inline SgdState sgd_unbiased_run(const Trajectory& traj, const ModelSpec& model,
                                 const Vec& theta0, const LearningRate& lr,
                                 SgdVariant variant = SgdVariant::shifted_innovation,
                                 bool record_history = false) {
    if (traj.n_obs() < 5) throw invalid_argument("sgd_unbiased_run: need n_obs >= 5");
    detail::PlainPositions pos{traj.positions};
    return detail::sgd_core(pos, traj.n_obs(), traj.tau, model, theta0, lr, 2, variant,
                            record_history);
}

// Kalman filter for the parameter posterior.  sigma_mode selects the gain's
// noise level: `known` uses model.sigma; `in_prior` fixes it to 1, with the
// unknown diffusion constant absorbed into Sigma_prior by the caller.
inline KalmanState kalman_run(const Trajectory& traj, const ModelSpec& model,
                              const Vec& m_prior, const Mat& Sigma_prior, SigmaMode mode,
                              bool record_history = false) {
    if (traj.n_obs() < 5) throw invalid_argument("kalman_run: need n_obs >= 5");
    if (m_prior.size() != model.d_theta)
        throw invalid_argument("kalman_run: m_prior size mismatch");
    if (Sigma_prior.rows() != model.d_theta || Sigma_prior.cols() != model.d_theta)
        throw invalid_argument("kalman_run: Sigma_prior shape mismatch");
    if ((Sigma_prior - Sigma_prior.transpose()).cwiseAbs().maxCoeff() >
        1e-12 * (1.0 + Sigma_prior.cwiseAbs().maxCoeff()))
        throw invalid_argument("kalman_run: Sigma_prior must be symmetric");
    if (Eigen::LLT<Mat>(Sigma_prior).info() != Eigen::Success)
        throw invalid_argument("kalman_run: Sigma_prior must be positive definite");
    const double sigma_gain = (mode == SigmaMode::known) ? model.sigma : 1.0;
    detail::PlainPositions pos{traj.positions};
    return detail::kalman_core(pos, traj.n_obs(), traj.tau, model, m_prior, Sigma_prior,
                               sigma_gain, record_history);
}

// Quadratic-variation diffusion estimator over all available differences:
//   sigma_hat = 3 / (2 tau M) sum_{n=1}^{M} || U~_{n+1/2} - U~_{n-1/2} ||^2,
// the 3/2 factor compensating var(U~_{n+1/2} - U~_{n-1/2}) = (2/3) sigma tau.
inline double estimate_sigma(const VelocitySeries& series) {
    const long M = series.n_midpoints() - 1;
    if (M < 1)
        throw invalid_argument("estimate_sigma: need at least two midpoint velocities");
    KahanSum q;
    for (long n = 1; n <= M; ++n)
        q.add((series.midpoint.col(n) - series.midpoint.col(n - 1)).squaredNorm());
    return 3.0 / (2.0 * series.tau * static_cast<double>(M)) * q.value();
}

namespace detail {

// Sufficient statistics of the corrected least-squares objective
//   A(theta) = 1/2 theta^T G theta - theta^T b + (3 / 4 tau) qsum
// with G = sum F^T F tau, b = sum F^T (dU - f tau), qsum = sum ||dU||^2,
// where F, f sit at frame n and dU = U~_{n+5/2} - U~_{n+3/2}; n = 1..N-3.
struct MleNormal {
    Mat G;
    Vec b;
    double qsum = 0.0;
    long count = 0;
    double tau = 0.0;
    int d = 0;
};

inline MleNormal mle_accumulate(const Trajectory& traj, const ModelSpec& model) {
    if (traj.n_obs() < 5) throw invalid_argument("mle: need n_obs >= 5");
    const VelocitySeries series = midpoint_velocities(traj);
    const long n_last = traj.n_obs() - 3;
    MleNormal acc;
    acc.G = Mat::Zero(model.d_theta, model.d_theta);
    acc.b = Vec::Zero(model.d_theta);
    acc.tau = traj.tau;
    acc.d = model.d;
    Vec un(model.d), xn(model.d), fval(model.d), dU(model.d);
    Mat feats(model.d, model.d_theta);
    KahanSum q;
    for (long n = 1; n <= n_last; ++n) {
        un = series.centered(n);
        xn = traj.positions.col(n);
        model.f(xn, un, fval);
        model.F(xn, un, feats);
        dU = series.midpoint.col(n + 2) - series.midpoint.col(n + 1);
        acc.G.noalias() += feats.transpose() * feats * traj.tau;
        acc.b.noalias() += feats.transpose() * (dU - fval * traj.tau);
        q.add(dU.squaredNorm());
    }
    acc.qsum = q.value();
    acc.count = n_last;
    return acc;
}

inline double mle_quadratic(const MleNormal& acc, const Vec& theta) {
    return 0.5 * theta.dot(acc.G * theta) - theta.dot(acc.b) +
           3.0 / (4.0 * acc.tau) * acc.qsum;
}

}  // namespace detail

// Negative log-likelihood L(theta, sigma) = A(theta)/sigma + (d count / 2) log sigma.
inline double mle_objective(const Trajectory& traj, const ModelSpec& model, const Vec& theta,
                            double sigma) {
    if (!(sigma > 0.0)) throw invalid_argument("mle_objective: sigma must be positive");
    const detail::MleNormal acc = detail::mle_accumulate(traj, model);
    return detail::mle_quadratic(acc, theta) / sigma +
           0.5 * static_cast<double>(acc.d) * static_cast<double>(acc.count) * std::log(sigma);
}

// Exact minimizer of the corrected likelihood: theta_hat solves G theta = b;
// sigma_hat = 2 A(theta_hat) / (d (N-3)) from stationarity in sigma.
inline MleResult mle_fit(const Trajectory& traj, const ModelSpec& model) {
    const detail::MleNormal acc = detail::mle_accumulate(traj, model);
    const Eigen::JacobiSVD<Mat> svd(acc.G, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double smax = svd.singularValues().maxCoeff();
    const double smin = svd.singularValues().minCoeff();
    const double cond = (smin > 0.0) ? smax / smin : std::numeric_limits<double>::infinity();
    MleResult out;
    if (smax == 0.0) {
        // Features identically zero: the quadratic part vanishes, every theta is
        // a minimizer; report the minimal-norm one so sigma_hat is still defined.
        out.normal_matrix_condition = 1.0;
        out.theta_hat = Vec::Zero(acc.G.rows());
    } else if (!(smin > smax * 1e-12)) {
        throw rank_deficient(cond, "mle_fit: normal matrix numerically singular "
                                   "(condition estimate " + std::to_string(cond) + ")");
    } else {
        out.normal_matrix_condition = cond;
        out.theta_hat = svd.solve(acc.b);
    }
    const double A = detail::mle_quadratic(acc, out.theta_hat);
    const double denom = static_cast<double>(acc.d) * static_cast<double>(acc.count);
    out.sigma_hat = 2.0 * A / denom;
    if (!(out.sigma_hat > 0.0))
        throw estimation_diverged(acc.count, "mle_fit: nonpositive sigma estimate");
    out.objective_value = A / out.sigma_hat + 0.5 * denom * std::log(out.sigma_hat);
    return out;
}

}  // namespace posdrift
