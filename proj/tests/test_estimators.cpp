#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "posdrift/estimators.hpp"
#include "posdrift/model.hpp"
#include "posdrift/simulate.hpp"
#include "posdrift/velocity.hpp"
#include "test_support.hpp"

using posdrift::LearningRate;
using posdrift::Mat;
using posdrift::SimConfig;
using posdrift::Trajectory;
using posdrift::Vec;
using testsupport::make_traj;
using testsupport::make_zero_feature_model;
using testsupport::make_two_feature_model;

namespace {

SimConfig cfg1d(double tau, double h, long n_obs, double x0, double u0, std::uint64_t seed) {
    SimConfig cfg;
    cfg.tau = tau;
    cfg.h = h;
    cfg.n_obs = n_obs;
    cfg.x0 = Vec::Constant(1, x0);
    cfg.u0 = Vec::Constant(1, u0);
    cfg.seed = seed;
    return cfg;
}

Vec scalar(double v) {
    Vec x(1);
    x << v;
    return x;
}

}  // namespace

TEST_CASE("learning rates are positive and non-increasing") {
    const LearningRate harm = LearningRate::harmonic(6.0);
    const LearningRate invt = LearningRate::inverse_time(2.0, 3.0);
    double prev_h = std::numeric_limits<double>::infinity();
    double prev_i = std::numeric_limits<double>::infinity();
    for (long n = 1; n <= 200; ++n) {
        const double t = static_cast<double>(n) * 0.025;
        const double ah = harm.at(n, t), ai = invt.at(n, t);
        CHECK(ah > 0.0);
        CHECK(ai > 0.0);
        CHECK(ah <= prev_h);
        CHECK(ai <= prev_i);
        prev_h = ah;
        prev_i = ai;
    }
    CHECK(harm.at(4, 0.1) == 1.5);
    CHECK(invt.at(1, 1.0) == 0.5);

    CHECK_THROWS_AS(LearningRate::harmonic(0.0), posdrift::invalid_argument);
    CHECK_THROWS_AS(LearningRate::inverse_time(-1.0, 2.0), posdrift::invalid_argument);
    CHECK_THROWS_AS(LearningRate::inverse_time(1.0, 0.0), posdrift::invalid_argument);
    CHECK_THROWS_AS(harm.at(0, 0.0), posdrift::invalid_argument);
}

TEST_CASE("innovation: trivial reductions and index guards") {
    const posdrift::ModelSpec zero = make_zero_feature_model(0.0);

    // Straight-line data with zero drift and theta = 0: innovations vanish.
    SimConfig cfg = cfg1d(0.25, 0.25 / 128.0, 8, 0.0, 1.0, 3);
    const Trajectory line = posdrift::generate_reference(zero, cfg);
    const posdrift::VelocitySeries ls = posdrift::midpoint_velocities(line);
    for (long n = 1; n <= ls.n_midpoints() - 1; ++n)
        CHECK(posdrift::innovation(ls, line, zero, n, scalar(0.0))(0) == 0.0);

    // f == 0, F == 0: the innovation is the bare velocity difference.
    const posdrift::ModelSpec zero1 = make_zero_feature_model(1.0);
    cfg = cfg1d(0.05, 0.005, 50, 0.0, 0.0, 5);
    const Trajectory noisy = posdrift::generate_reference(zero1, cfg);
    const posdrift::VelocitySeries ns = posdrift::midpoint_velocities(noisy);
    for (long n = 1; n <= ns.n_midpoints() - 1; ++n)
        CHECK(posdrift::innovation(ns, noisy, zero1, n, scalar(0.7))(0) ==
              ns.midpoint(0, n) - ns.midpoint(0, n - 1));

    CHECK_THROWS_AS(posdrift::innovation(ns, noisy, zero1, 0, scalar(0.0)),
                    posdrift::invalid_argument);
    CHECK_THROWS_AS(posdrift::innovation(ns, noisy, zero1, ns.n_midpoints(), scalar(0.0)),
                    posdrift::invalid_argument);
}

TEST_CASE("innovation at the true parameter is mean-zero on OU data") {
    const posdrift::ModelSpec ou = posdrift::make_ou(0.0, 1.0);
    SimConfig cfg = cfg1d(0.01, 0.0001, 10000, 0.0, 0.0, 271);
    const Trajectory traj = posdrift::generate_reference(ou, cfg);
    const posdrift::VelocitySeries s = posdrift::midpoint_velocities(traj);
    posdrift::KahanSum sum, sum2;
    const long M = s.n_midpoints() - 1;
    for (long n = 1; n <= M; ++n) {
        const double v = posdrift::innovation(s, traj, ou, n, scalar(0.0))(0);
        sum.add(v);
        sum2.add(v * v);
    }
    const double mean = sum.value() / static_cast<double>(M);
    const double var =
        (sum2.value() - sum.value() * sum.value() / static_cast<double>(M)) /
        static_cast<double>(M - 1);
    const double se = std::sqrt(var / static_cast<double>(M));
    CHECK(std::abs(mean) <= 3.0 * se);
}

TEST_CASE("zero features freeze the SGD iterate") {
    const posdrift::ModelSpec zero = make_zero_feature_model(1.0);
    SimConfig cfg = cfg1d(0.05, 0.005, 100, 0.0, 0.0, 8);
    const Trajectory traj = posdrift::generate_reference(zero, cfg);
    const LearningRate lr = LearningRate::harmonic(6.0);

    CHECK(posdrift::sgd_standard_run(traj, zero, scalar(1.75), lr).theta(0) == 1.75);
    CHECK(posdrift::sgd_unbiased_run(traj, zero, scalar(1.75), lr,
                                     posdrift::SgdVariant::shifted_innovation)
              .theta(0) == 1.75);
    CHECK(posdrift::sgd_unbiased_run(traj, zero, scalar(1.75), lr,
                                     posdrift::SgdVariant::shifted_difference)
              .theta(0) == 1.75);
}

TEST_CASE("SGD input validation and divergence reporting") {
    const posdrift::ModelSpec cubic = posdrift::make_cubic(1.0, 2.0);
    const LearningRate lr = LearningRate::harmonic(6.0);

    SimConfig tiny = cfg1d(0.05, 0.005, 4, 0.0, 0.0, 9);
    const Trajectory t4 = posdrift::generate_reference(cubic, tiny);
    CHECK_THROWS_AS(posdrift::sgd_unbiased_run(t4, cubic, scalar(2.0), lr),
                    posdrift::invalid_argument);

    SimConfig cfg = cfg1d(0.05, 0.005, 400, 0.0, 0.0, 10);
    const Trajectory traj = posdrift::generate_reference(cubic, cfg);
    CHECK_THROWS_AS(posdrift::sgd_standard_run(traj, cubic, scalar(2.0),
                                               LearningRate::harmonic(1e8)),
                    posdrift::estimation_diverged);
    try {
        posdrift::sgd_standard_run(traj, cubic, scalar(2.0), LearningRate::harmonic(1e8));
    } catch (const posdrift::estimation_diverged& e) {
        CHECK(e.step >= 1);
    }

    Vec bad_theta0(2);
    bad_theta0 << 1.0, 2.0;
    CHECK_THROWS_AS(posdrift::sgd_standard_run(traj, cubic, bad_theta0, lr),
                    posdrift::invalid_argument);
}

TEST_CASE("SGD history records every accepted step") {
    const posdrift::ModelSpec cubic = posdrift::make_cubic(1.0, 2.0);
    SimConfig cfg = cfg1d(0.05, 0.005, 50, 0.0, 0.0, 21);
    const Trajectory traj = posdrift::generate_reference(cubic, cfg);
    const posdrift::SgdState st = posdrift::sgd_unbiased_run(
        traj, cubic, scalar(2.0), LearningRate::harmonic(6.0),
        posdrift::SgdVariant::shifted_innovation, true);
    REQUIRE(st.history.size() == static_cast<std::size_t>(traj.n_obs() - 3));
    CHECK(st.history.front().first == 1);
    CHECK(st.history.back().first == traj.n_obs() - 3);
    CHECK(st.history.back().second(0) == st.theta(0));
}

TEST_CASE("Kalman filter validates its prior") {
    const posdrift::ModelSpec two = make_two_feature_model(0.5, 0.5, 1.0);
    SimConfig cfg = cfg1d(0.05, 0.005, 100, 0.0, 0.5, 31);
    const Trajectory traj = posdrift::generate_reference(two, cfg);

    Mat asym(2, 2);
    asym << 1.0, 0.5, -0.5, 1.0;
    CHECK_THROWS_AS(posdrift::kalman_run(traj, two, Vec::Zero(2), asym,
                                         posdrift::SigmaMode::known),
                    posdrift::invalid_argument);

    Mat indef(2, 2);
    indef << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS(posdrift::kalman_run(traj, two, Vec::Zero(2), indef,
                                         posdrift::SigmaMode::known),
                    posdrift::invalid_argument);

    CHECK_THROWS_AS(posdrift::kalman_run(traj, two, Vec::Zero(1),
                                         Mat::Identity(2, 2), posdrift::SigmaMode::known),
                    posdrift::invalid_argument);
}

TEST_CASE("zero features freeze the Kalman posterior") {
    const posdrift::ModelSpec zero = make_zero_feature_model(1.0);
    SimConfig cfg = cfg1d(0.05, 0.005, 200, 0.0, 0.0, 33);
    const Trajectory traj = posdrift::generate_reference(zero, cfg);
    const Mat prior = 4.0 * Mat::Identity(1, 1);
    const posdrift::KalmanState st =
        posdrift::kalman_run(traj, zero, scalar(2.0), prior, posdrift::SigmaMode::known);
    CHECK(st.m(0) == 2.0);
    CHECK(st.Sigma(0, 0) == 4.0);
}

TEST_CASE("Kalman gain goes singular only without noise and signal") {
    const posdrift::ModelSpec zero = make_zero_feature_model(0.0);
    SimConfig cfg = cfg1d(0.25, 0.25 / 128.0, 16, 0.0, 1.0, 34);
    const Trajectory traj = posdrift::generate_reference(zero, cfg);
    CHECK_THROWS_AS(posdrift::kalman_run(traj, zero, scalar(0.0), Mat::Identity(1, 1),
                                         posdrift::SigmaMode::known),
                    posdrift::singular_gain);
}

TEST_CASE("Kalman posterior variance decays like 1/n on OU data") {
    const posdrift::ModelSpec ou = posdrift::make_ou(1.0, 1.0);
    SimConfig cfg = cfg1d(0.1, 0.001, 100000, 0.0, 0.0, 404);
    const Trajectory traj = posdrift::generate_reference(ou, cfg);
    const posdrift::KalmanState st = posdrift::kalman_run(
        traj, ou, scalar(2.0), 6.0 * Mat::Identity(1, 1), posdrift::SigmaMode::in_prior, true);

    // Least-squares slope of log Sigma_n against log n over n in [1e3, 1e5].
    posdrift::KahanSum sx, sy, sxx, sxy;
    long cnt = 0;
    for (std::size_t i = 0; i < st.history.size(); i += 500) {
        const auto& step = st.history[i];
        if (step.n < 1000) continue;
        const double lx = std::log(static_cast<double>(step.n));
        const double ly = std::log(step.Sigma(0, 0));
        sx.add(lx);
        sy.add(ly);
        sxx.add(lx * lx);
        sxy.add(lx * ly);
        ++cnt;
    }
    REQUIRE(cnt > 50);
    const double n = static_cast<double>(cnt);
    const double slope = (sxy.value() - sx.value() * sy.value() / n) /
                         (sxx.value() - sx.value() * sx.value() / n);
    CHECK(slope == Catch::Approx(-1.0).margin(0.1));
    CHECK(std::abs(st.m(0) - 1.0) < 0.1);
}

TEST_CASE("diffusion estimator: hand case and degenerate inputs") {
    posdrift::VelocitySeries s;
    s.tau = 0.5;
    s.midpoint.resize(1, 3);
    s.midpoint << 0.0, 1.0, 0.0;  // differences [1, -1]
    CHECK(posdrift::estimate_sigma(s) == 3.0);  // 3/(2*0.5*2) * (1+1)

    posdrift::VelocitySeries too_short;
    too_short.tau = 0.5;
    too_short.midpoint.resize(1, 1);
    too_short.midpoint << 1.0;
    CHECK_THROWS_AS(posdrift::estimate_sigma(too_short), posdrift::invalid_argument);
}

TEST_CASE("diffusion estimator vanishes on noise-free data") {
    const posdrift::ModelSpec cubic = posdrift::make_cubic(1.0, 0.0);
    SimConfig cfg = cfg1d(0.01, 0.0001, 200, 0.5, 0.0, 41);
    const Trajectory traj = posdrift::generate_reference(cubic, cfg);
    const double sig = posdrift::estimate_sigma(posdrift::midpoint_velocities(traj));
    // Residual is (3/2) <udot^2> tau from drift curvature; far below noise scale.
    CHECK(sig >= 0.0);
    CHECK(sig < 0.02);
}

TEST_CASE("diffusion estimator recovers sigma = 1 on OU data within 2%") {
    const posdrift::ModelSpec ou = posdrift::make_ou(0.0, 1.0);
    SimConfig cfg = cfg1d(0.01, 0.0001, 20000, 0.0, 0.0, 47);
    const Trajectory traj = posdrift::generate_reference(ou, cfg);
    const double sig = posdrift::estimate_sigma(posdrift::midpoint_velocities(traj));
    CHECK(std::abs(sig - 1.0) < 0.02);
}

TEST_CASE("MLE with zero features reduces to the diffusion estimator") {
    const posdrift::ModelSpec zero = make_zero_feature_model(1.5);
    SimConfig cfg = cfg1d(0.05, 0.0005, 200, 0.0, 0.0, 53);
    const Trajectory traj = posdrift::generate_reference(zero, cfg);
    const posdrift::MleResult mle = posdrift::mle_fit(traj, zero);
    CHECK(mle.theta_hat(0) == 0.0);

    // Dropping the first two observations aligns the diffusion estimator's
    // differences with the shifted differences the likelihood sums.
    const long N = traj.n_obs();
    Trajectory dropped = make_traj(traj.positions.rightCols(N - 1), traj.tau);
    const double qv = posdrift::estimate_sigma(posdrift::midpoint_velocities(dropped));
    CHECK(mle.sigma_hat == Catch::Approx(qv).epsilon(1e-13));
}

TEST_CASE("MLE satisfies first-order optimality; finite-difference gradient vanishes") {
    const posdrift::ModelSpec cubic = posdrift::make_cubic(1.0, 2.0);
    SimConfig cfg = cfg1d(0.025, 0.00025, 2000, 0.0, 0.0, 59);
    const Trajectory traj = posdrift::generate_reference(cubic, cfg);
    const posdrift::MleResult mle = posdrift::mle_fit(traj, cubic);

    const double L0 = posdrift::mle_objective(traj, cubic, mle.theta_hat, mle.sigma_hat);
    CHECK(mle.objective_value == Catch::Approx(L0).epsilon(1e-12));

    const double dt = 1e-5 * (1.0 + std::abs(mle.theta_hat(0)));
    const double ds = 1e-5 * (1.0 + mle.sigma_hat);
    const double gt = (posdrift::mle_objective(traj, cubic, scalar(mle.theta_hat(0) + dt),
                                               mle.sigma_hat) -
                       posdrift::mle_objective(traj, cubic, scalar(mle.theta_hat(0) - dt),
                                               mle.sigma_hat)) /
                      (2.0 * dt);
    const double gs = (posdrift::mle_objective(traj, cubic, mle.theta_hat,
                                               mle.sigma_hat + ds) -
                       posdrift::mle_objective(traj, cubic, mle.theta_hat,
                                               mle.sigma_hat - ds)) /
                      (2.0 * ds);
    const double grad_norm = std::hypot(gt, gs);
    CHECK(grad_norm <= 1e-6 * (1.0 + std::abs(L0)));
}

TEST_CASE("MLE matches a generic numerical minimizer") {
    const posdrift::ModelSpec cubic = posdrift::make_cubic(1.0, 2.0);
    SimConfig cfg = cfg1d(0.025, 0.00025, 1000, 0.0, 0.0, 61);
    const Trajectory traj = posdrift::generate_reference(cubic, cfg);
    const posdrift::MleResult mle = posdrift::mle_fit(traj, cubic);

    // Coordinate descent with golden-section line searches from a generic box.
    auto golden = [](const std::function<double(double)>& f, double lo, double hi) {
        const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
        double a = lo, b = hi;
        double c = b - phi * (b - a), d = a + phi * (b - a);
        double fc = f(c), fd = f(d);
        for (int i = 0; i < 90; ++i) {
            if (fc < fd) {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = f(d);
            }
        }
        return 0.5 * (a + b);
    };
    double th = 2.0, sg = 1.0;
    for (int sweep = 0; sweep < 4; ++sweep) {
        th = golden([&](double t) { return posdrift::mle_objective(traj, cubic, scalar(t), sg); },
                    -1.0, 4.0);
        sg = golden([&](double s) { return posdrift::mle_objective(traj, cubic, scalar(th), s); },
                    0.2, 6.0);
    }
    CHECK(th == Catch::Approx(mle.theta_hat(0)).epsilon(1e-6));
    CHECK(sg == Catch::Approx(mle.sigma_hat).epsilon(1e-6));
}

TEST_CASE("MLE estimate scales exactly inversely to a feature rescaling") {
    const posdrift::ModelSpec cubic = posdrift::make_cubic(1.0, 2.0);
    posdrift::ModelSpec scaled = cubic;  // F -> 2F, theta* -> theta*/2
    scaled.F = [base = cubic.F](const Vec& x, const Vec& u, Mat& out) {
        base(x, u, out);
        out *= 2.0;
    };
    scaled.theta_star = scalar(0.5);

    SimConfig cfg = cfg1d(0.025, 0.00025, 1000, 0.0, 0.0, 67);
    const Trajectory t1 = posdrift::generate_reference(cubic, cfg);
    const Trajectory t2 = posdrift::generate_reference(scaled, cfg);
    REQUIRE((t1.positions.array() == t2.positions.array()).all());  // bitwise-equal data

    const posdrift::MleResult m1 = posdrift::mle_fit(t1, cubic);
    const posdrift::MleResult m2 = posdrift::mle_fit(t2, scaled);
    CHECK(m2.theta_hat(0) == Catch::Approx(0.5 * m1.theta_hat(0)).epsilon(1e-12));
    CHECK(m2.sigma_hat == Catch::Approx(m1.sigma_hat).epsilon(1e-12));
}

TEST_CASE("MLE reports rank deficiency for duplicated features") {
    posdrift::ModelSpec dup;
    dup.d = 1;
    dup.d_theta = 2;
    dup.f = [](const Vec&, const Vec&, Vec& out) { out.setZero(); };
    dup.F = [](const Vec&, const Vec& u, Mat& out) {
        out(0, 0) = -u(0);
        out(0, 1) = -u(0);
    };
    dup.sigma = 1.0;
    Vec ts(2);
    ts << 0.25, 0.25;
    dup.theta_star = ts;
    dup.name = "duplicated";

    SimConfig cfg;
    cfg.tau = 0.05;
    cfg.h = 0.005;
    cfg.n_obs = 200;
    cfg.x0 = Vec::Zero(1);
    cfg.u0 = Vec::Zero(1);
    cfg.seed = 71;
    const Trajectory traj = posdrift::generate_reference(dup, cfg);
    CHECK_THROWS_AS(posdrift::mle_fit(traj, dup), posdrift::rank_deficient);
}

TEST_CASE("MLE requires at least five observations") {
    const posdrift::ModelSpec cubic = posdrift::make_cubic(1.0, 2.0);
    SimConfig cfg = cfg1d(0.05, 0.005, 4, 0.0, 0.0, 73);
    const Trajectory traj = posdrift::generate_reference(cubic, cfg);
    CHECK_THROWS_AS(posdrift::mle_fit(traj, cubic), posdrift::invalid_argument);
}
