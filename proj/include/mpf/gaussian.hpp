#pragma once

#include <cmath>
#include <numbers>

#include "mpf/errors.hpp"
#include "mpf/quad.hpp"

namespace mpf {

inline double normal_pdf(double x, double mean, double variance) {
    const double d = x - mean;
    return std::exp(-0.5 * d * d / variance) / std::sqrt(2.0 * std::numbers::pi * variance);
}

inline double normal_log_pdf(double x, double mean, double variance) {
    const double d = x - mean;
    return -0.5 * d * d / variance - 0.5 * std::log(2.0 * std::numbers::pi * variance);
}

/// N(mean, variance) as a field with analytic derivatives.
inline Field1 gaussian_field(double mean, double variance) {
    if (!(variance > 0.0) || !std::isfinite(mean)) {
        throw ValidationError("gaussian_field: variance must be positive and mean finite");
    }
    return Field1(
        [=](double x) { return normal_pdf(x, mean, variance); },
        Hint<1>{mean, std::sqrt(variance)},
        [=](double x) { return -(x - mean) / variance * normal_pdf(x, mean, variance); },
        [=](double x) {
            const double d = x - mean;
            return (d * d / (variance * variance) - 1.0 / variance) * normal_pdf(x, mean, variance);
        });
}

/// Product of two independent normal densities on R^2.
inline Field2 gaussian_field2(const Eigen::Vector2d& mean, const Eigen::Vector2d& variance) {
    auto f = [=](const Eigen::Vector2d& x) {
        return normal_pdf(x(0), mean(0), variance(0)) * normal_pdf(x(1), mean(1), variance(1));
    };
    return Field2(
        f, Hint<2>{mean, variance.cwiseSqrt()},
        [=](const Eigen::Vector2d& x) -> Eigen::Vector2d {
            return (-(x - mean).cwiseQuotient(variance)) * f(x);
        },
        [=](const Eigen::Vector2d& x) -> Eigen::Matrix2d {
            const Eigen::Vector2d g = -(x - mean).cwiseQuotient(variance);
            Eigen::Matrix2d h = g * g.transpose();
            h(0, 0) -= 1.0 / variance(0);
            h(1, 1) -= 1.0 / variance(1);
            return h * f(x);
        });
}

}  // namespace mpf
