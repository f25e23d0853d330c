#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "posdrift/errors.hpp"
#include "posdrift/simulate.hpp"

namespace posdrift {

// Finite-difference velocity reconstructions from positions.
//   midpoint[n]  = (X_{n+1} - X_n) / tau            for n = 0..N-1   ("U at n+1/2")
//   centered(n)  = (midpoint[n] + midpoint[n-1]) / 2 for n = 1..N-1  ("U at n")
// The centered value is defined as the exact average of the two adjacent
// midpoints (one extra rounding); it agrees with (X_{n+1} - X_{n-1}) / (2 tau)
// to within a couple of rounding errors of the midpoint magnitudes.
struct VelocitySeries {
    double tau = 0.0;
    Mat midpoint;  // d x N

    long n_midpoints() const { return midpoint.cols(); }

    Vec centered(long n) const {
        if (n < 1 || n >= midpoint.cols())
            throw invalid_argument("centered velocity undefined at n=" + std::to_string(n) +
                                   " (valid: 1.." + std::to_string(midpoint.cols() - 1) + ")");
        return 0.5 * (midpoint.col(n) + midpoint.col(n - 1));
    }
};

inline VelocitySeries midpoint_velocities(const Trajectory& traj) {
    const long n_pos = traj.positions.cols();
    if (n_pos < 2)
        throw invalid_argument("midpoint_velocities: need at least 2 positions");
    VelocitySeries s;
    s.tau = traj.tau;
    s.midpoint.resize(traj.positions.rows(), n_pos - 1);
    for (long n = 0; n + 1 < n_pos; ++n)
        s.midpoint.col(n) = (traj.positions.col(n + 1) - traj.positions.col(n)) / traj.tau;
    return s;
}

// Max deviation between midpoint[n] and the trapezoid quadrature of the
// fine-grid velocities over [t_n, t_{n+1}], divided by tau.  The integrator
// advances positions with left sums, so the deviation is O(h); it halves
// when h halves and vanishes for straight-line motion.  Test utility only.
inline double local_time_average_check(const Trajectory& traj, const VelocitySeries& series) {
    if (!traj.fine)
        throw invalid_argument("local_time_average_check: trajectory has no fine-grid velocities");
    const Mat& uf = traj.fine->u;
    const double h = traj.fine->h;
    const long N = series.n_midpoints();
    const long J = std::llround(traj.tau / h);
    if (uf.cols() != N * J + 1)
        throw invalid_argument("local_time_average_check: fine grid size mismatch");
    double worst = 0.0;
    Vec quad(traj.positions.rows());
    for (long n = 0; n < N; ++n) {
        quad.setZero();
        for (long j = 0; j < J; ++j)
            quad += 0.5 * (uf.col(n * J + j) + uf.col(n * J + j + 1)) * h;
        const double err = (quad / traj.tau - series.midpoint.col(n)).cwiseAbs().maxCoeff();
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace posdrift
