#pragma once

#include <stdexcept>
#include <string>

namespace posdrift {

// Base class for everything thrown by this library.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad arguments: shape mismatches, out-of-range indices, invalid configuration values.
class invalid_argument : public error {
public:
    explicit invalid_argument(const std::string& msg) : error(msg) {}
};

// The integrator produced a non-finite state.
class simulation_diverged : public error {
public:
    simulation_diverged(double t_fail, const std::string& msg)
        : error(msg), t_fail(t_fail) {}
    double t_fail;
};

// An estimator produced a non-finite estimate; `step` is the offending iteration index.
class estimation_diverged : public error {
public:
    estimation_diverged(long step, const std::string& msg)
        : error(msg), step(step) {}
    long step;
};

// The Kalman gain's inner matrix F Sigma F^T + (sigma/tau) I is not invertible.
class singular_gain : public error {
public:
    explicit singular_gain(const std::string& msg) : error(msg) {}
};

// The least-squares normal matrix is numerically rank deficient.
class rank_deficient : public error {
public:
    rank_deficient(double condition, const std::string& msg)
        : error(msg), condition(condition) {}
    double condition;
};

// File and serialization problems.
class io_error : public error {
public:
    explicit io_error(const std::string& msg) : error(msg) {}
};

// Config-file problems, carrying the precise line number (0 when not line-specific).
class config_error : public error {
public:
    config_error(std::string file, int line, const std::string& msg)
        : error(line > 0 ? file + ":" + std::to_string(line) + ": " + msg
                         : file + ": " + msg),
          file(std::move(file)), line(line) {}
    std::string file;
    int line;
};

}  // namespace posdrift
