#pragma once

// Continuous-time mixture projection filter: the Stratonovich form of the
// Kushner–Stratonovich equation projected onto the mixture family.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mpf/discrete_filter.hpp"
#include "mpf/dynamics.hpp"
#include "mpf/errors.hpp"
#include "mpf/families.hpp"
#include "mpf/rng.hpp"
#include "mpf/trajectory.hpp"

namespace mpf {

/// Tensors of the projected SDE. With p = theta_hat^T q:
///   drift  = h^{-1} [A th - 1/2 (D th - (delta.th) G th)]
///   diff_k = h^{-1} [C_k th - (beta_k.th) G th]
/// The stored A, C, D, G already carry the h^{-1} factor.
struct SdeCoefficients {
    Eigen::MatrixXd A, D, G;          ///< m x (m+1), premultiplied by h^{-1}
    std::vector<Eigen::MatrixXd> C;   ///< d matrices m x (m+1), premultiplied
    std::vector<Eigen::VectorXd> beta;  ///< d vectors of length m+1
    Eigen::VectorXd delta;            ///< length m+1
    double t = 0.0;
    int generation = 0;

    int m() const { return static_cast<int>(A.rows()); }
    int d() const { return static_cast<int>(C.size()); }

    Eigen::VectorXd drift(const Eigen::VectorXd& theta) const {
        const Eigen::VectorXd th = affine_hat(theta);
        const Eigen::VectorXd g = G * th;
        return A * th - 0.5 * (D * th - delta.dot(th) * g);
    }

    Eigen::MatrixXd diffusion(const Eigen::VectorXd& theta) const {
        const Eigen::VectorXd th = affine_hat(theta);
        const Eigen::VectorXd g = G * th;
        Eigen::MatrixXd out(m(), d());
        for (int k = 0; k < d(); ++k) out.col(k) = C[static_cast<std::size_t>(k)] * th - beta[static_cast<std::size_t>(k)].dot(th) * g;
        return out;
    }
};

namespace detail {

inline Eigen::MatrixXd sensor_on_nodes(const MixtureFamily& fam, const ContinuousObsModel& obs, double t) {
    const Eigen::VectorXd x = fam.nodes();
    Eigen::MatrixXd b(x.size(), obs.d());
    for (int k = 0; k < obs.d(); ++k) {
        for (Eigen::Index i = 0; i < x.size(); ++i) b(i, k) = obs.b(k, t, x(i));
    }
    return b;
}

inline void require_finite_entry(const Eigen::MatrixXd& a, const std::string& name) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            if (!std::isfinite(a(i, j))) {
                throw DomainError("divergent tensor entry " + name + "(" + std::to_string(i) + ", " +
                                  std::to_string(j) + ")");
            }
        }
    }
}

}  // namespace detail

inline SdeCoefficients assemble_sde_coefficients(const MixtureFamily& fam, const DiffusionModel& model,
                                                 const ContinuousObsModel& obs, double t = 0.0) {
    if (obs.d() < 1) throw ValidationError("continuous filter: need at least one observation channel");
    const auto w = fam.weights();
    const Eigen::MatrixXd& q = fam.values();
    const Eigen::MatrixXd u = fam.tangents_on_nodes();
    const Eigen::MatrixXd wu = w.asDiagonal() * u;
    const Eigen::MatrixXd b = detail::sensor_on_nodes(fam, obs, t);
    const Eigen::VectorXd bsq = b.rowwise().squaredNorm();
    const MetricMatrix& h = fam.metric();

    SdeCoefficients s;
    s.t = t;
    s.generation = fam.generation();
    const Eigen::MatrixXd a = detail::backward_on_tangents(fam, model, t).transpose() * w.asDiagonal() * q;
    detail::require_finite_entry(a, "A");
    s.A = h.solve(a);
    const Eigen::MatrixXd dm = wu.transpose() * bsq.asDiagonal() * q;
    detail::require_finite_entry(dm, "D");
    s.D = h.solve(dm);
    s.G = h.solve(Eigen::MatrixXd(wu.transpose() * q));
    s.delta = q.transpose() * w.cwiseProduct(bsq);
    detail::require_finite_entry(s.delta, "delta");
    for (int k = 0; k < obs.d(); ++k) {
        const Eigen::MatrixXd ck = wu.transpose() * b.col(k).asDiagonal() * q;
        detail::require_finite_entry(ck, "C" + std::to_string(k + 1));
        s.C.push_back(h.solve(ck));
        Eigen::VectorXd bk = q.transpose() * w.cwiseProduct(b.col(k));
        detail::require_finite_entry(bk, "beta" + std::to_string(k + 1));
        s.beta.push_back(std::move(bk));
    }
    return s;
}

struct StepOutcome {
    Eigen::VectorXd theta;
    double clip_excess = 0.0;
};

/// Heun predictor–corrector for the Stratonovich SDE, then simplex clipping.
inline StepOutcome stratonovich_step(const Eigen::VectorXd& theta, const SdeCoefficients& co,
                                     const Eigen::VectorXd& dy, double dt, double margin = kSimplexMargin,
                                     double tolerance = kClipTolerance) {
    if (!(dt > 0.0)) throw ValidationError("stratonovich_step: dt must be positive");
    if (dy.size() != co.d()) throw ValidationError("stratonovich_step: observation increment has wrong dimension");
    const Eigen::VectorXd mu0 = co.drift(theta);
    const Eigen::MatrixXd s0 = co.diffusion(theta);
    const Eigen::VectorXd pred = theta + mu0 * dt + s0 * dy;
    if (!pred.allFinite()) throw NumericError("stratonovich_step: non-finite predictor");
    const Eigen::VectorXd next =
        theta + 0.5 * (mu0 + co.drift(pred)) * dt + 0.5 * (s0 + co.diffusion(pred)) * dy;
    if (!next.allFinite()) throw NumericError("stratonovich_step: non-finite update");
    const ClipOutcome c = clip_to_simplex(next, margin, tolerance);
    return {c.theta, c.excess};
}

struct PathBundle {
    double dt = 0.0;
    std::vector<double> t;
    std::vector<double> x;
    Eigen::MatrixXd y;  ///< d x (steps + 1), y.col(0) = 0
    std::uint64_t seed = 0;

    std::size_t steps() const { return t.empty() ? 0 : t.size() - 1; }
    Eigen::VectorXd dy(std::size_t step) const {
        return y.col(static_cast<Eigen::Index>(step + 1)) - y.col(static_cast<Eigen::Index>(step));
    }
};

inline constexpr double kExplosionBound = 1e6;

/// Euler–Maruyama for the state and observation increments
/// dY = b(t, X_t) dt + sqrt(dt) xi.
inline PathBundle simulate_truth_and_observations(const DiffusionModel& model, const ContinuousObsModel& obs,
                                                  double x0, double horizon, double dt, std::uint64_t seed) {
    if (!(horizon > 0.0) || !(dt > 0.0)) throw ValidationError("simulate: horizon and dt must be positive");
    const double ratio = horizon / dt;
    const auto steps = static_cast<std::size_t>(std::llround(ratio));
    if (steps == 0 || std::abs(ratio - static_cast<double>(steps)) > 1e-9 * ratio) {
        throw ValidationError("simulate: dt must divide the horizon");
    }
    const CounterRng rng(seed, "truth");
    PathBundle p;
    p.dt = dt;
    p.seed = seed;
    p.t.resize(steps + 1);
    p.x.resize(steps + 1);
    p.y = Eigen::MatrixXd::Zero(obs.d(), static_cast<Eigen::Index>(steps + 1));
    p.t[0] = 0.0;
    p.x[0] = x0;
    const double sq = std::sqrt(dt);
    for (std::size_t n = 0; n < steps; ++n) {
        const double t = dt * static_cast<double>(n);
        const double x = p.x[n];
        const double dw = std::sqrt(model.q(t)) * sq * rng.normal(n, 0);
        for (int k = 0; k < obs.d(); ++k) {
            const double dv = sq * rng.normal(n, static_cast<std::uint64_t>(k + 1));
            p.y(k, static_cast<Eigen::Index>(n + 1)) = p.y(k, static_cast<Eigen::Index>(n)) + obs.b(k, t, x) * dt + dv;
        }
        const double xn = x + model.f(t, x) * dt + model.s(t, x) * dw;
        if (!std::isfinite(xn) || std::abs(xn) > kExplosionBound) {
            throw ExplosionError("simulate: state path exploded at step " + std::to_string(n + 1));
        }
        p.t[n + 1] = dt * static_cast<double>(n + 1);
        p.x[n + 1] = xn;
    }
    return p;
}

struct ProjectionResidual {
    double drift = 0.0;
    Eigen::VectorXd diffusion;
};

/// L2 residuals of (L* p - gamma0(p)) and gamma_k(p) against their
/// projections on the tangent space at p = p(., theta).
inline ProjectionResidual projection_residual(const MixtureFamily& fam, const Eigen::VectorXd& theta,
                                              const DiffusionModel& model, const ContinuousObsModel& obs,
                                              double t = 0.0) {
    const Eigen::VectorXd th = extend_coords(theta, true);
    const auto w = fam.weights();
    const Eigen::VectorXd p = fam.values() * th;
    const Eigen::MatrixXd b = detail::sensor_on_nodes(fam, obs, t);
    const Eigen::VectorXd bsq = b.rowwise().squaredNorm();
    const double ebsq = w.dot(bsq.cwiseProduct(p));
    const Eigen::VectorXd g0 = 0.5 * (bsq.array() - ebsq).matrix().cwiseProduct(p);
    ProjectionResidual r;
    r.drift = tangent_residual(fam, detail::forward_on_mixture(fam, th, model, t) - g0);
    r.diffusion.resize(obs.d());
    for (int k = 0; k < obs.d(); ++k) {
        const double ek = w.dot(b.col(k).cwiseProduct(p));
        r.diffusion(k) = tangent_residual(fam, (b.col(k).array() - ek).matrix().cwiseProduct(p));
    }
    return r;
}

struct ContinuousProblem {
    DiffusionModel model;
    ContinuousObsModel obs;
    MixtureFamily family;
    Eigen::VectorXd theta0;
    PathBundle path;
    /// Record moments every this many steps (the final step is always recorded).
    int record_every = 1;
    bool record_residual = true;
    double clip_margin = kSimplexMargin;
    double clip_tolerance = kClipTolerance;
};

/// Step theta along the observation path with the Heun scheme.
inline FilterTrajectory run_continuous_filter(const ContinuousProblem& prob) {
    if (prob.path.steps() == 0) throw ValidationError("continuous filter: empty observation path");
    if (prob.path.y.rows() != prob.obs.d()) throw ValidationError("continuous filter: path has wrong channel count");
    if (prob.record_every < 1) throw ValidationError("continuous filter: record_every must be >= 1");
    if (prob.theta0.size() != prob.family.m()) throw ValidationError("continuous filter: theta dimension does not match basis");
    extend_coords(prob.theta0);
    FilterTrajectory traj;
    traj.engine = "mpf";
    Eigen::VectorXd theta = prob.theta0;
    const bool invariant = prob.model.time_invariant && prob.obs.time_invariant;
    std::optional<SdeCoefficients> cached;
    auto snapshot = [&](double t) {
        const auto [mean, var] = prob.family.moments(extend_coords(theta, true));
        const double res = prob.record_residual
                               ? projection_residual(prob.family, theta, prob.model, prob.obs, t).drift
                               : FilterTrajectory::kNaN;
        traj.record(t, mean, var, res);
        traj.record_state(theta, prob.family.generation());
    };
    run_guarded(traj, [&] {
        snapshot(prob.path.t[0]);
        const double dt = prob.path.dt;
        for (std::size_t n = 0; n < prob.path.steps(); ++n) {
            const double t = prob.path.t[n];
            if (!invariant || !cached) cached = assemble_sde_coefficients(prob.family, prob.model, prob.obs, t);
            const StepOutcome out =
                stratonovich_step(theta, *cached, prob.path.dy(n), dt, prob.clip_margin, prob.clip_tolerance);
            theta = out.theta;
            if (out.clip_excess > 0.0) traj.log(prob.path.t[n + 1], "clip", "excess " + std::to_string(out.clip_excess));
            if ((n + 1) % static_cast<std::size_t>(prob.record_every) == 0 || n + 1 == prob.path.steps()) {
                snapshot(prob.path.t[n + 1]);
            }
        }
    });
    return traj;
}

}  // namespace mpf
