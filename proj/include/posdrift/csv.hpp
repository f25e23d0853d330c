#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "posdrift/errors.hpp"
#include "posdrift/estimators.hpp"
#include "posdrift/simulate.hpp"

namespace posdrift {

// Doubles are written with 17 significant digits (round-trip exact) so that
// re-reading a CSV reproduces the run bit-for-bit.
inline std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& context) {
    double out = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    while (first != last && (*first == ' ' || *first == '\t')) ++first;
    const auto res = std::from_chars(first, last, out);
    if (res.ec != std::errc() || res.ptr != last)
        throw io_error(context + ": cannot parse number '" + s + "'");
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

// Generic writer: one header row, then string cells.
inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot open '" + path + "' for writing");
    for (std::size_t i = 0; i < header.size(); ++i)
        f << (i ? "," : "") << header[i];
    f << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            f << (i ? "," : "") << row[i];
        f << "\n";
    }
    if (!f) throw io_error("write failed for '" + path + "'");
}

// Trajectory export: header t,x_0..[,u_0..]; one row per observation time.
inline void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
    std::vector<std::string> header;
    header.push_back("t");
    const int d = traj.dim();
    for (int i = 0; i < d; ++i) header.push_back("x_" + std::to_string(i));
    if (traj.true_velocities)
        for (int i = 0; i < d; ++i) header.push_back("u_" + std::to_string(i));
    std::vector<std::vector<std::string>> rows;
    rows.reserve(static_cast<std::size_t>(traj.n_obs()) + 1);
    for (long n = 0; n <= traj.n_obs(); ++n) {
        std::vector<std::string> row;
        row.push_back(format_double(static_cast<double>(n) * traj.tau));
        for (int i = 0; i < d; ++i) row.push_back(format_double(traj.positions(i, n)));
        if (traj.true_velocities)
            for (int i = 0; i < d; ++i)
                row.push_back(format_double((*traj.true_velocities)(i, n)));
        rows.push_back(std::move(row));
    }
    write_csv(path, header, rows);
}

// Trajectory import (the inverse of write_trajectory_csv).  tau is inferred
// from the first two time stamps; the embedded recipe is left mostly blank.
inline Trajectory read_trajectory_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open '" + path + "' for reading");
    std::string line;
    if (!std::getline(f, line)) throw io_error(path + ": empty file");
    const auto header = split_csv_line(line);
    if (header.empty() || header[0] != "t")
        throw io_error(path + ": expected header starting with 't'");
    int d = 0, du = 0;
    for (std::size_t i = 1; i < header.size(); ++i) {
        if (header[i] == "x_" + std::to_string(d)) ++d;
        else if (header[i] == "u_" + std::to_string(du)) ++du;
        else throw io_error(path + ": unexpected column '" + header[i] + "'");
    }
    if (d == 0) throw io_error(path + ": no position columns");
    if (du != 0 && du != d) throw io_error(path + ": velocity columns do not match positions");
    std::vector<double> times;
    std::vector<std::vector<double>> cells;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto parts = split_csv_line(line);
        if (parts.size() != header.size())
            throw io_error(path + ":" + std::to_string(lineno) + ": expected " +
                           std::to_string(header.size()) + " cells, got " +
                           std::to_string(parts.size()));
        std::vector<double> row;
        row.reserve(parts.size());
        for (const auto& p : parts)
            row.push_back(parse_double(p, path + ":" + std::to_string(lineno)));
        times.push_back(row[0]);
        cells.push_back(std::move(row));
    }
    if (times.size() < 2) throw io_error(path + ": need at least 2 rows");
    Trajectory traj;
    traj.tau = times[1] - times[0];
    traj.positions.resize(d, static_cast<long>(cells.size()));
    if (du > 0) traj.true_velocities = Mat(d, static_cast<long>(cells.size()));
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (int i = 0; i < d; ++i) traj.positions(i, static_cast<long>(r)) = cells[r][1 + i];
        if (du > 0)
            for (int i = 0; i < d; ++i)
                (*traj.true_velocities)(i, static_cast<long>(r)) = cells[r][1 + d + i];
    }
    traj.cfg.tau = traj.tau;
    traj.cfg.n_obs = static_cast<long>(cells.size()) - 1;
    return traj;
}

// SGD history export: n,t,theta_0..
inline void write_sgd_history_csv(const std::string& path, const SgdState& state, double tau) {
    std::vector<std::string> header = {"n", "t"};
    const long dt = state.theta.size();
    for (long i = 0; i < dt; ++i) header.push_back("theta_" + std::to_string(i));
    std::vector<std::vector<std::string>> rows;
    rows.reserve(state.history.size());
    for (const auto& [n, theta] : state.history) {
        std::vector<std::string> row = {std::to_string(n),
                                        format_double(static_cast<double>(n) * tau)};
        for (long i = 0; i < dt; ++i) row.push_back(format_double(theta(i)));
        rows.push_back(std::move(row));
    }
    write_csv(path, header, rows);
}

// Kalman history export: n,t,m_0..,Sigma_00.. (row-major covariance cells).
inline void write_kalman_history_csv(const std::string& path, const KalmanState& state,
                                     double tau) {
    std::vector<std::string> header = {"n", "t"};
    const long dt = state.m.size();
    for (long i = 0; i < dt; ++i) header.push_back("m_" + std::to_string(i));
    for (long i = 0; i < dt; ++i)
        for (long j = 0; j < dt; ++j)
            header.push_back("Sigma_" + std::to_string(i) + std::to_string(j));
    std::vector<std::vector<std::string>> rows;
    rows.reserve(state.history.size());
    for (const auto& step : state.history) {
        std::vector<std::string> row = {std::to_string(step.n),
                                        format_double(static_cast<double>(step.n) * tau)};
        for (long i = 0; i < dt; ++i) row.push_back(format_double(step.m(i)));
        for (long i = 0; i < dt; ++i)
            for (long j = 0; j < dt; ++j) row.push_back(format_double(step.Sigma(i, j)));
        rows.push_back(std::move(row));
    }
    write_csv(path, header, rows);
}

}  // namespace posdrift
