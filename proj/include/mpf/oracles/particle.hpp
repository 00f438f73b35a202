#pragma once

// Bootstrap particle filter with systematic resampling (scalar state).

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpf/continuous_filter.hpp"
#include "mpf/dynamics.hpp"
#include "mpf/errors.hpp"
#include "mpf/families.hpp"
#include "mpf/rng.hpp"
#include "mpf/trajectory.hpp"

namespace mpf::oracles {

/// Initial law as a finite Gaussian mixture.
struct ParticlePrior {
    std::vector<GaussianComponent> components;
    std::vector<double> weights;

    static ParticlePrior gaussian(double mean, double variance) { return {{{mean, variance}}, {1.0}}; }
};

struct ParticleEnsemble {
    std::vector<double> x;
    std::vector<double> w;

    double ess() const {
        double s = 0.0;
        for (double v : w) s += v * v;
        return 1.0 / s;
    }

    /// Weighted mean, variance and the standard error of the mean.
    void moments(double& mean, double& var, double& se) const {
        double m = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) m += w[i] * x[i];
        double v = 0.0, s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - m;
            v += w[i] * d * d;
            s += w[i] * w[i] * d * d;
        }
        mean = m;
        var = v;
        se = std::sqrt(s);
    }
};

class ParticleFilter {
public:
    static constexpr int kMinParticles = 100;

    ParticleFilter(DiffusionModel model, int n, std::uint64_t seed, std::string stream = "particle")
        : model_(std::move(model)), n_(n), rng_(seed, stream) {
        if (n < kMinParticles) throw ValidationError("particle filter: need at least 100 particles");
        fast_ = model_.linear.has_value();
        if (fast_) {
            lin_f_ = model_.linear->drift_coefficient;
            lin_s_ = model_.linear->sigma * std::sqrt(model_.linear->noise_cov);
        }
    }

    const ParticleEnsemble& ensemble() const { return ens_; }
    int resamples() const { return resamples_; }

    void initialize(const ParticlePrior& prior) {
        if (prior.components.empty() || prior.components.size() != prior.weights.size()) {
            throw ValidationError("particle filter: prior components and weights disagree");
        }
        std::vector<double> cdf(prior.weights.size());
        double acc = 0.0;
        for (std::size_t j = 0; j < cdf.size(); ++j) cdf[j] = (acc += prior.weights[j]);
        ens_.x.resize(static_cast<std::size_t>(n_));
        ens_.w.assign(static_cast<std::size_t>(n_), 1.0 / n_);
        for (int i = 0; i < n_; ++i) {
            const double u = rng_.uniform(counter_, 3 * static_cast<std::uint64_t>(i)) * acc;
            std::size_t j = 0;
            while (j + 1 < cdf.size() && u > cdf[j]) ++j;
            const auto& c = prior.components[j];
            ens_.x[static_cast<std::size_t>(i)] = c.mean + std::sqrt(c.variance) * rng_.normal(counter_, 3 * static_cast<std::uint64_t>(i) + 1);
        }
        ++counter_;
    }

    /// Euler–Maruyama move of every particle over dt starting at time t.
    void propagate(double t, double dt) {
        const double sq = std::sqrt(dt);
        auto& x = ens_.x;
        const std::size_t n = x.size();
        std::size_t i = 0;
        if (fast_) {
            const double k = 1.0 + lin_f_ * dt, s = lin_s_ * sq;
            for (; i + 1 < n; i += 2) {
                double a, b;
                rng_.normal_pair(counter_, i / 2, a, b);
                x[i] = k * x[i] + s * a;
                x[i + 1] = k * x[i + 1] + s * b;
            }
            if (i < n) x[i] = k * x[i] + s * rng_.normal(counter_, n);
        } else {
            const double sq_q = std::sqrt(model_.q(t)) * sq;
            for (; i < n; ++i) {
                const double xi = x[i];
                x[i] = xi + model_.f(t, xi) * dt + model_.s(t, xi) * sq_q * rng_.normal(counter_, i);
            }
        }
        for (double v : x) {
            if (!std::isfinite(v) || std::abs(v) > kExplosionBound) throw ExplosionError("particle filter: particle exploded");
        }
        ++counter_;
    }

    /// Multiply weights by exp(loglik(x)) and renormalise.
    template <class LogLik>
    void reweight(LogLik&& loglik) {
        auto& w = ens_.w;
        const auto& x = ens_.x;
        std::vector<double>& lw = scratch_;
        lw.resize(x.size());
        double top = -INFINITY;
        for (std::size_t i = 0; i < x.size(); ++i) {
            lw[i] = w[i] > 0.0 ? std::log(w[i]) + loglik(x[i]) : -INFINITY;
            top = std::max(top, lw[i]);
        }
        if (!std::isfinite(top)) throw DegenerateError("particle filter: all weights vanished");
        double total = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) total += (w[i] = std::exp(lw[i] - top));
        if (!(total > 0.0)) throw DegenerateError("particle filter: all weights vanished");
        for (double& v : w) v /= total;
    }

    /// Systematic resampling when ESS < N/2; returns true when it resampled.
    bool maybe_resample() {
        if (ens_.ess() >= 0.5 * n_) return false;
        const double u0 = rng_.uniform(counter_, 0) / n_;
        ++counter_;
        std::vector<double> out(static_cast<std::size_t>(n_));
        double c = ens_.w[0];
        std::size_t j = 0;
        for (int i = 0; i < n_; ++i) {
            const double u = u0 + static_cast<double>(i) / n_;
            while (u > c && j + 1 < ens_.x.size()) c += ens_.w[++j];
            out[static_cast<std::size_t>(i)] = ens_.x[j];
        }
        ens_.x = std::move(out);
        ens_.w.assign(static_cast<std::size_t>(n_), 1.0 / n_);
        ++resamples_;
        return true;
    }

    void record(FilterTrajectory& traj, double t) const {
        double m, v, se;
        ens_.moments(m, v, se);
        traj.record(t, m, v, FilterTrajectory::kNaN, ens_.ess(), se);
    }

private:
    DiffusionModel model_;
    int n_;
    CounterRng rng_;
    std::uint64_t counter_ = 0;
    ParticleEnsemble ens_;
    std::vector<double> scratch_;
    int resamples_ = 0;
    bool fast_ = false;
    double lin_f_ = 0.0, lin_s_ = 0.0;
};

/// Continuous observations along a path; records every `record_every` steps.
inline FilterTrajectory particle_filter_continuous(const DiffusionModel& model, const ContinuousObsModel& obs,
                                                   const ParticlePrior& prior, const PathBundle& path, int n,
                                                   std::uint64_t seed, int record_every = 1) {
    ParticleFilter pf(model, n, seed);
    pf.initialize(prior);
    FilterTrajectory traj;
    traj.engine = "particle";
    pf.record(traj, path.t[0]);
    const double dt = path.dt;
    const bool linear = obs.d() == 1 && obs.channels[0].slope.has_value();
    const double slope = linear ? *obs.channels[0].slope : 0.0;
    for (std::size_t s = 0; s < path.steps(); ++s) {
        const double t = path.t[s];
        pf.propagate(t, dt);
        const Eigen::VectorXd dy = path.dy(s);
        if (linear) {
            const double d0 = dy(0);
            pf.reweight([=](double x) {
                const double b = slope * x;
                return b * d0 - 0.5 * b * b * dt;
            });
        } else {
            pf.reweight([&](double x) {
                double l = 0.0;
                for (int k = 0; k < obs.d(); ++k) {
                    const double b = obs.b(k, t, x);
                    l += b * dy(k) - 0.5 * b * b * dt;
                }
                return l;
            });
        }
        if (pf.maybe_resample()) traj.log(path.t[s + 1], "resample");
        if ((s + 1) % static_cast<std::size_t>(record_every) == 0 || s + 1 == path.steps()) pf.record(traj, path.t[s + 1]);
    }
    return traj;
}

/// Discrete observations; Euler–Maruyama with inner step at most `em_dt`.
inline FilterTrajectory particle_filter_discrete(const DiffusionModel& model, const DiscreteObsModel& obs,
                                                 const std::vector<double>& observations, const ParticlePrior& prior,
                                                 int n, std::uint64_t seed, double em_dt = 1e-3, double t0 = 0.0) {
    obs.validate();
    if (observations.size() != obs.times.size()) throw ValidationError("particle filter: observation count mismatch");
    if (!(em_dt > 0.0)) throw ValidationError("particle filter: Euler step must be positive");
    ParticleFilter pf(model, n, seed);
    pf.initialize(prior);
    FilterTrajectory traj;
    traj.engine = "particle";
    pf.record(traj, t0);
    double t = t0;
    const auto map = obs.map;
    const double r = obs.noise_variance;
    for (std::size_t k = 0; k < obs.times.size(); ++k) {
        const double span = obs.times[k] - t;
        const int steps = std::max(1, static_cast<int>(std::ceil(span / em_dt - 1e-9)));
        for (int s = 0; s < steps; ++s) pf.propagate(t + s * span / steps, span / steps);
        t = obs.times[k];
        const double z = observations[k];
        pf.reweight([&](double x) {
            const double e = z - (*map)(x);
            return -0.5 * e * e / r;
        });
        pf.record(traj, t);
        if (pf.maybe_resample()) traj.log(t, "resample");
    }
    return traj;
}

}  // namespace mpf::oracles
