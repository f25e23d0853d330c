#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "posdrift/errors.hpp"

namespace posdrift {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Parametric drift family for the velocity equation
//     du = [ f(x,u) + F(x,u) theta ] dt + sqrt(sigma) dW,   dx = u dt.
// Drift callbacks write into a caller-provided output block so the hot
// integration and estimation loops do not allocate.  Treat instances as
// immutable after construction; callbacks must be pure.
struct ModelSpec {
    int d = 1;        // state dimension
    int d_theta = 1;  // parameter dimension
    std::function<void(const Vec& x, const Vec& u, Vec& out)> f;  // known drift part, d
    std::function<void(const Vec& x, const Vec& u, Mat& out)> F;  // features, d x d_theta
    double sigma = 0.0;                                           // diffusion constant
    std::optional<Vec> theta_star;  // true parameter; required for data generation
    std::string name;
};

// Known part f + features F times theta, with shape checks.  Convenience
// API; performance-critical loops evaluate f and F into workspaces instead.
inline Vec eval_total_drift(const ModelSpec& model, const Vec& x, const Vec& u,
                            const Vec& theta) {
    if (x.size() != model.d || u.size() != model.d)
        throw invalid_argument("eval_total_drift: state dimension mismatch (expected d=" +
                               std::to_string(model.d) + ")");
    if (theta.size() != model.d_theta)
        throw invalid_argument("eval_total_drift: theta has size " +
                               std::to_string(theta.size()) + ", expected " +
                               std::to_string(model.d_theta));
    Vec fval(model.d);
    Mat feats(model.d, model.d_theta);
    model.f(x, u, fval);
    model.F(x, u, feats);
    return fval + feats * theta;
}

// Data-generating drift g(x,u) = f(x,u) + F(x,u) theta_star.
inline Vec eval_data_drift(const ModelSpec& model, const Vec& x, const Vec& u) {
    if (!model.theta_star)
        throw invalid_argument("eval_data_drift: model '" + model.name +
                               "' has no true parameter set");
    return eval_total_drift(model, x, u, *model.theta_star);
}

// Scalar Ornstein-Uhlenbeck velocity with integrated position:
// f = 0, F(x,u) = -u, so g(u) = -theta_star * u.
inline ModelSpec make_ou(double theta_star, double sigma) {
    if (sigma < 0.0) throw invalid_argument("make_ou: sigma must be non-negative");
    ModelSpec m;
    m.d = 1;
    m.d_theta = 1;
    m.sigma = sigma;
    m.name = "ou";
    m.f = [](const Vec&, const Vec&, Vec& out) { out(0) = 0.0; };
    m.F = [](const Vec&, const Vec& u, Mat& out) { out(0, 0) = -u(0); };
    m.theta_star = Vec::Constant(1, theta_star);
    return m;
}

// Scalar cubic (Rayleigh-type) oscillator:
// f(x,u) = -x + u, F(x,u) = -u^3, so g = -x + u - theta_star * u^3.
inline ModelSpec make_cubic(double theta_star, double sigma) {
    if (sigma < 0.0) throw invalid_argument("make_cubic: sigma must be non-negative");
    ModelSpec m;
    m.d = 1;
    m.d_theta = 1;
    m.sigma = sigma;
    m.name = "cubic";
    m.f = [](const Vec& x, const Vec& u, Vec& out) { out(0) = -x(0) + u(0); };
    m.F = [](const Vec&, const Vec& u, Mat& out) { out(0, 0) = -u(0) * u(0) * u(0); };
    m.theta_star = Vec::Constant(1, theta_star);
    return m;
}

// Registry of built-in models addressable from configuration files.
inline ModelSpec model_by_name(const std::string& name, double theta_star, double sigma) {
    if (name == "ou") return make_ou(theta_star, sigma);
    if (name == "cubic") return make_cubic(theta_star, sigma);
    throw invalid_argument("unknown model '" + name + "' (available: ou, cubic)");
}

}  // namespace posdrift
