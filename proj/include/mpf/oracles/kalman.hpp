#pragma once

// Closed-form references for linear-Gaussian systems (scalar state).

#include <cmath>
#include <vector>

#include "mpf/continuous_filter.hpp"
#include "mpf/dynamics.hpp"
#include "mpf/errors.hpp"
#include "mpf/trajectory.hpp"

namespace mpf::oracles {

struct GaussianState {
    double mean = 0.0;
    double variance = 1.0;
};

inline const LinearGaussian& require_linear(const DiffusionModel& model) {
    if (!model.linear) throw ValidationError("kalman: state model is not linear-Gaussian");
    return *model.linear;
}

/// Exact moments of dX = F X dt + sigma dW over an interval of length dt.
inline GaussianState kalman_propagate(const GaussianState& s, const LinearGaussian& lin, double dt) {
    const double f = lin.drift_coefficient, a = lin.diffusion();
    const double e = std::exp(f * dt);
    const double growth = std::abs(f * dt) < 1e-8 ? dt * (1.0 + f * dt) : (e * e - 1.0) / (2.0 * f);
    return {e * s.mean, e * e * s.variance + a * growth};
}

/// Conditioning on z = slope x + offset + N(0, r).
inline GaussianState kalman_update(const GaussianState& s, double slope, double offset, double r, double z) {
    const double innov = slope * slope * s.variance + r;
    const double gain = s.variance * slope / innov;
    return {s.mean + gain * (z - slope * s.mean - offset), (1.0 - gain * slope) * s.variance};
}

/// Discrete-time Kalman filter; records the prior at t0 and the posterior at
/// every observation time.
inline FilterTrajectory kalman_discrete(const DiffusionModel& model, const DiscreteObsModel& obs,
                                        const std::vector<double>& observations, GaussianState s0, double t0 = 0.0) {
    const LinearGaussian& lin = require_linear(model);
    obs.validate();
    if (!obs.affine) throw ValidationError("kalman: observation map is not affine");
    if (observations.size() != obs.times.size()) throw ValidationError("kalman: observation count mismatch");
    FilterTrajectory traj;
    traj.engine = "kalman";
    traj.record(t0, s0.mean, s0.variance);
    GaussianState s = s0;
    double t = t0;
    for (std::size_t n = 0; n < obs.times.size(); ++n) {
        s = kalman_propagate(s, lin, obs.times[n] - t);
        t = obs.times[n];
        s = kalman_update(s, obs.affine->first, obs.affine->second, obs.noise_variance, observations[n]);
        traj.record(t, s.mean, s.variance);
    }
    return traj;
}

/// Stationary Riccati root of dP/dt = 2 F P + a - H^2 P^2.
inline double riccati_fixed_point(double f, double a, double h) {
    if (h == 0.0) {
        if (!(f < 0.0)) throw ValidationError("riccati: no stationary variance without observations and F >= 0");
        return -a / (2.0 * f);
    }
    return (f + std::sqrt(f * f + a * h * h)) / (h * h);
}

/// Closed-form P(t) of the scalar Riccati equation from P(0) = p0.
inline double riccati_solution(double f, double a, double h, double p0, double t) {
    if (h == 0.0) {
        const double e = std::exp(2.0 * f * t);
        return std::abs(f) < 1e-12 ? p0 + a * t : e * p0 + a * (e - 1.0) / (2.0 * f);
    }
    const double root = std::sqrt(f * f + a * h * h);
    const double hi = (f + root) / (h * h), lo = (f - root) / (h * h);
    const double ratio = (p0 - hi) / (p0 - lo) * std::exp(-2.0 * root * t);
    return (hi - lo * ratio) / (1.0 - ratio);
}

/// Kalman–Bucy filter along an observation path. The variance follows the
/// closed-form Riccati solution; the mean is stepped with the gain at the
/// interval midpoint.
inline FilterTrajectory kalman_bucy(const DiffusionModel& model, const ContinuousObsModel& obs, const PathBundle& path,
                                    GaussianState s0, int record_every = 1) {
    const LinearGaussian& lin = require_linear(model);
    if (obs.d() != 1 || !obs.channels[0].slope) throw ValidationError("kalman_bucy: need one linear sensor");
    const double h = *obs.channels[0].slope, f = lin.drift_coefficient, a = lin.diffusion();
    FilterTrajectory traj;
    traj.engine = "kalman";
    double m = s0.mean;
    traj.record(path.t[0], m, s0.variance);
    const double dt = path.dt;
    for (std::size_t n = 0; n < path.steps(); ++n) {
        const double pm = riccati_solution(f, a, h, s0.variance, path.t[n] + 0.5 * dt);
        const double dy = path.y(0, static_cast<Eigen::Index>(n + 1)) - path.y(0, static_cast<Eigen::Index>(n));
        // Implicit in the mean: (1 - (F - P H^2) dt/2) m' = (1 + (F - P H^2) dt/2) m + P H dY.
        const double k = (f - pm * h * h) * 0.5 * dt;
        m = ((1.0 + k) * m + pm * h * dy) / (1.0 - k);
        if ((n + 1) % static_cast<std::size_t>(record_every) == 0 || n + 1 == path.steps()) {
            traj.record(path.t[n + 1], m, riccati_solution(f, a, h, s0.variance, path.t[n + 1]));
        }
    }
    return traj;
}

}  // namespace mpf::oracles
