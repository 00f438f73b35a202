#pragma once

// Mixture projection filter with discrete-time observations: an affine ODE
// for the weights between observations and an exact Bayes correction that
// updates the basis at each observation.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "mpf/dynamics.hpp"
#include "mpf/errors.hpp"
#include "mpf/families.hpp"
#include "mpf/trajectory.hpp"

namespace mpf {

/// dtheta/dt = B theta_hat = M theta + c.
struct PredictionGenerator {
    Eigen::MatrixXd B;  ///< m x (m+1)
    Eigen::MatrixXd M;  ///< m x m
    Eigen::VectorXd c;  ///< m
    int generation = 0;
    double t = 0.0;

    int m() const { return static_cast<int>(M.rows()); }
    Eigen::VectorXd rate(const Eigen::VectorXd& theta) const { return M * theta + c; }

    static PredictionGenerator from_B(Eigen::MatrixXd B, int generation = 0, double t = 0.0) {
        const Eigen::Index m = B.rows();
        if (B.cols() != m + 1) throw ValidationError("prediction generator: B must be m x (m+1)");
        PredictionGenerator g;
        g.c = B.col(m);
        g.M = B.leftCols(m) - g.c.replicate(1, m);
        g.B = std::move(B);
        g.generation = generation;
        g.t = t;
        return g;
    }
};

namespace detail {

inline void require_finite(const Eigen::MatrixXd& a, const char* what) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            if (!std::isfinite(a(i, j))) {
                throw DomainError(std::string(what) + ": entry (" + std::to_string(i) + ", " + std::to_string(j) +
                                  ") is not finite");
            }
        }
    }
}

/// f and a on the family's quadrature nodes.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> drift_and_diffusion(const MixtureFamily& fam,
                                                                       const DiffusionModel& model, double t) {
    const Eigen::VectorXd x = fam.nodes();
    Eigen::VectorXd f(x.size()), a(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        f(i) = model.f(t, x(i));
        a(i) = model.a(t, x(i));
    }
    return {f, a};
}

/// L u_j on the family nodes (nodes x m).
inline Eigen::MatrixXd backward_on_tangents(const MixtureFamily& fam, const DiffusionModel& model, double t) {
    const auto [f, a] = drift_and_diffusion(fam, model, t);
    const Eigen::MatrixXd u1 = fam.tangents_of(fam.first_derivatives());
    const Eigen::MatrixXd u2 = fam.tangents_of(fam.second_derivatives());
    return f.asDiagonal() * u1 + (0.5 * a).asDiagonal() * u2;
}

/// L* p on the family nodes for p = theta_hat^T q.
inline Eigen::VectorXd forward_on_mixture(const MixtureFamily& fam, const Eigen::VectorXd& theta_hat,
                                          const DiffusionModel& model, double t) {
    const Eigen::VectorXd x = fam.nodes();
    const Eigen::VectorXd p = fam.values() * theta_hat;
    const Eigen::VectorXd p1 = fam.first_derivatives() * theta_hat;
    const Eigen::VectorXd p2 = fam.second_derivatives() * theta_hat;
    Eigen::VectorXd out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) out(i) = forward_operator_at(model, t, x(i), Jet{p(i), p1(i), p2(i)});
    return out;
}

}  // namespace detail

/// B = h^{-1} A with A_jk = <q_k, L u_j>, assembled through the backward
/// operator on the tangent vectors.
inline PredictionGenerator assemble_prediction_generator(const MixtureFamily& fam, const DiffusionModel& model,
                                                         double t = 0.0) {
    const Eigen::MatrixXd lu = detail::backward_on_tangents(fam, model, t);
    const Eigen::MatrixXd a = lu.transpose() * fam.weights().asDiagonal() * fam.values();
    detail::require_finite(a, "prediction generator");
    return PredictionGenerator::from_B(fam.metric().solve(a), fam.generation(), t);
}

/// Same generator assembled the other way round, A_jk = <L* q_k, u_j>, with
/// L* q_k from the finite-difference grid operator.
inline PredictionGenerator assemble_prediction_generator_forward(const MixtureFamily& fam,
                                                                 const DiffusionModel& model, double t,
                                                                 double lower, double upper, int n) {
    const int k = fam.size();
    const double dx = (upper - lower) / (n - 1);
    Eigen::MatrixXd lq(n, k), u(n, fam.m());
    for (int j = 0; j < k; ++j) {
        GridField g = GridField::sample(fam.component(j).field(), lower, upper, n);
        lq.col(j) = forward_operator(model, g, t).values;
        if (j < fam.m()) u.col(j) = g.values;
    }
    const Eigen::VectorXd last = GridField::sample(fam.component(fam.m()).field(), lower, upper, n).values;
    u.colwise() -= last;
    const Eigen::MatrixXd a = dx * u.transpose() * lq;
    detail::require_finite(a, "prediction generator");
    return PredictionGenerator::from_B(fam.metric().solve(a), fam.generation(), t);
}

inline constexpr double kSimplexMargin = 1e-10;
inline constexpr double kClipTolerance = 1e-6;

struct ClipOutcome {
    Eigen::VectorXd theta;
    double excess = 0.0;  ///< largest violation of the margin, 0 if none
    bool clipped() const { return excess > 0.0; }
};

/// Pull theta into {theta_i >= margin, sum theta <= 1 - margin}. Violations
/// larger than `tolerance` mean the density left the family.
inline ClipOutcome clip_to_simplex(const Eigen::VectorXd& theta, double margin = kSimplexMargin,
                                   double tolerance = kClipTolerance) {
    if (!theta.allFinite()) throw NumericError("mixture coordinates are not finite");
    const Eigen::Index m = theta.size();
    const double sum = theta.sum();
    double excess = std::max(margin - theta.minCoeff(), sum - (1.0 - margin));
    if (excess <= 0.0) return {theta, 0.0};
    if (excess > tolerance + margin) {
        throw ManifoldExitError("mixture weights left the simplex by " + std::to_string(excess - margin) +
                                " (theta sum " + std::to_string(sum) + ", min " + std::to_string(theta.minCoeff()) +
                                ")");
    }
    Eigen::VectorXd out = theta.cwiseMax(margin);
    const double total = out.sum();
    const double room = 1.0 - margin - static_cast<double>(m) * margin;
    if (total > 1.0 - margin) {
        out = (margin + (out.array() - margin) * (room / (total - static_cast<double>(m) * margin))).matrix();
    }
    return {out, excess};
}

enum class PredictMethod { exact, rk4 };

struct IntegratorConfig {
    PredictMethod method = PredictMethod::exact;
    /// Inner step of the RK4 path as a fraction of the interval.
    double delta_fraction = 1e-3;
    std::optional<double> delta;
    double clip_margin = kSimplexMargin;
    double clip_tolerance = kClipTolerance;
};

/// e^{M dt} theta0 + M^{-1}(e^{M dt} - I) c, via the exponential of the
/// augmented matrix [[M, c], [0, 0]] dt (well defined for singular M).
inline Eigen::MatrixXd affine_propagator(const PredictionGenerator& gen, double dt) {
    const Eigen::Index m = gen.m();
    Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(m + 1, m + 1);
    aug.topLeftCorner(m, m) = gen.M * dt;
    aug.topRightCorner(m, 1) = gen.c * dt;
    return aug.exp();
}

inline Eigen::VectorXd apply_propagator(const Eigen::MatrixXd& e, const Eigen::VectorXd& theta0) {
    const Eigen::Index m = theta0.size();
    return e.topLeftCorner(m, m) * theta0 + e.topRightCorner(m, 1);
}

namespace detail {

inline Eigen::VectorXd rk4(const std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>& rate,
                           Eigen::VectorXd y, double t0, double dt, double delta) {
    const int steps = std::max(1, static_cast<int>(std::ceil(dt / delta - 1e-9)));
    const double h = dt / steps;
    for (int s = 0; s < steps; ++s) {
        const double t = t0 + s * h;
        const Eigen::VectorXd k1 = rate(t, y);
        const Eigen::VectorXd k2 = rate(t + 0.5 * h, y + 0.5 * h * k1);
        const Eigen::VectorXd k3 = rate(t + 0.5 * h, y + 0.5 * h * k2);
        const Eigen::VectorXd k4 = rate(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return y;
}

inline double inner_step(double dt, const IntegratorConfig& cfg) {
    const double d = cfg.delta ? *cfg.delta : cfg.delta_fraction * dt;
    if (!(d > 0.0)) throw ValidationError("integrator: inner step must be positive");
    return d;
}

}  // namespace detail

/// Solve the prediction ODE over dt with a fixed generator.
inline ClipOutcome predict(const Eigen::VectorXd& theta0, const PredictionGenerator& gen, double dt,
                           const IntegratorConfig& cfg = {}) {
    if (!(dt > 0.0)) throw ValidationError("predict: dt must be positive");
    if (theta0.size() != gen.m()) throw ValidationError("predict: theta dimension does not match generator");
    Eigen::VectorXd out;
    if (cfg.method == PredictMethod::exact) {
        out = apply_propagator(affine_propagator(gen, dt), theta0);
    } else {
        out = detail::rk4([&](double, const Eigen::VectorXd& y) { return gen.rate(y); }, theta0, 0.0, dt,
                          detail::inner_step(dt, cfg));
    }
    return clip_to_simplex(out, cfg.clip_margin, cfg.clip_tolerance);
}

/// Time-varying prediction: classical RK4 with the generator reassembled at
/// every stage time.
inline ClipOutcome predict(const Eigen::VectorXd& theta0, const std::function<PredictionGenerator(double)>& gen_at,
                           double t0, double dt, const IntegratorConfig& cfg = {}) {
    if (!(dt > 0.0)) throw ValidationError("predict: dt must be positive");
    const Eigen::VectorXd out = detail::rk4([&](double t, const Eigen::VectorXd& y) { return gen_at(t).rate(y); },
                                            theta0, t0, dt, detail::inner_step(dt, cfg));
    return clip_to_simplex(out, cfg.clip_margin, cfg.clip_tolerance);
}

struct Correction {
    Eigen::VectorXd theta;
    MixtureFamily family;
    Eigen::VectorXd masses;
};

/// Bayes correction at an observation: every basis density is multiplied by
/// the likelihood and renormalised, and the weights absorb the normalisers.
inline Correction correct(const Eigen::VectorXd& theta_prior, const MixtureFamily& fam, double z,
                          const DiscreteObsModel& obs, WeightRule rule = WeightRule::exact) {
    if (theta_prior.size() != fam.m()) throw ValidationError("correct: theta dimension does not match family");
    const Eigen::VectorXd hat = extend_coords(theta_prior, true);
    BasisUpdate up = bayes_update_basis(fam, likelihood(z, obs));
    Eigen::VectorXd theta = posterior_weights(hat, up.normalizers, rule);
    return {std::move(theta), std::move(up.family), std::move(up.masses)};
}

/// Component of v (sampled on the family nodes) orthogonal to the tangent
/// space, in L2 norm.
inline double tangent_residual(const MixtureFamily& fam, const Eigen::VectorXd& v) {
    const Eigen::MatrixXd u = fam.tangents_on_nodes();
    const auto w = fam.weights();
    const Eigen::VectorXd c = fam.metric().solve(Eigen::VectorXd(u.transpose() * w.cwiseProduct(v)));
    const Eigen::VectorXd r = v - u * c;
    return std::sqrt(std::max(0.0, w.dot(r.cwiseProduct(r))));
}

/// ||L* p - Pi_theta L* p|| at p = p(., theta).
inline double prediction_residual(const MixtureFamily& fam, const Eigen::VectorXd& theta, const DiffusionModel& model,
                                  double t) {
    return tangent_residual(fam, detail::forward_on_mixture(fam, extend_coords(theta, true), model, t));
}

/// State of a discrete-time run: the current family, weights and time.
class DiscreteStepper {
public:
    DiscreteStepper(MixtureFamily fam, Eigen::VectorXd theta, double t0, DiffusionModel model,
                    IntegratorConfig cfg = {})
        : fam_(std::move(fam)), theta_(std::move(theta)), t_(t0), model_(std::move(model)), cfg_(cfg) {
        extend_coords(theta_);
        if (theta_.size() != fam_.m()) throw ValidationError("filter: theta dimension does not match basis");
    }

    const MixtureFamily& family() const { return fam_; }
    const Eigen::VectorXd& theta() const { return theta_; }
    double time() const { return t_; }
    std::pair<double, double> moments() const { return fam_.moments(extend_coords(theta_, true)); }
    Field1 density() const { return mixture_density(fam_, theta_); }
    double residual() const { return prediction_residual(fam_, theta_, model_, t_); }

    const PredictionGenerator& generator() {
        if (!gen_ || gen_->generation != fam_.generation() || (!model_.time_invariant && gen_->t != t_)) {
            gen_ = assemble_prediction_generator(fam_, model_, t_);
            propagator_.reset();
        }
        return *gen_;
    }

    /// Advance to t1; returns true when the result had to be clipped.
    bool predict_to(double t1) {
        const double dt = t1 - t_;
        if (dt < 0.0) throw ValidationError("filter: observation times must not decrease");
        if (dt == 0.0) return false;
        ClipOutcome out;
        if (!model_.time_invariant) {
            out = predict(theta_, [this](double t) { return assemble_prediction_generator(fam_, model_, t); }, t_, dt,
                          cfg_);
        } else if (cfg_.method == PredictMethod::exact) {
            const PredictionGenerator& gen = generator();
            if (!propagator_ || propagator_->first != dt) propagator_.emplace(dt, affine_propagator(gen, dt));
            out = clip_to_simplex(apply_propagator(propagator_->second, theta_), cfg_.clip_margin,
                                  cfg_.clip_tolerance);
        } else {
            out = predict(theta_, generator(), dt, cfg_);
        }
        theta_ = std::move(out.theta);
        t_ = t1;
        return out.clipped();
    }

    /// Bayes correction at the current time; returns true when clipped.
    bool correct(double z, const DiscreteObsModel& obs, WeightRule rule = WeightRule::exact) {
        Correction c = mpf::correct(theta_, fam_, z, obs, rule);
        fam_ = std::move(c.family);
        const ClipOutcome out = clip_to_simplex(c.theta, cfg_.clip_margin, cfg_.clip_tolerance);
        theta_ = out.theta;
        return out.clipped();
    }

private:
    MixtureFamily fam_;
    Eigen::VectorXd theta_;
    double t_;
    DiffusionModel model_;
    IntegratorConfig cfg_;
    std::optional<PredictionGenerator> gen_;
    std::optional<std::pair<double, Eigen::MatrixXd>> propagator_;
};

struct DiscreteProblem {
    DiffusionModel model;
    DiscreteObsModel obs;             ///< observation times live here
    std::vector<double> observations; ///< z_n, one per observation time
    MixtureFamily family;
    Eigen::VectorXd theta0;
    double t0 = 0.0;
    /// Prediction-only horizon used when there are no observations.
    double horizon = 0.0;
    IntegratorConfig integrator{};
    WeightRule weights = WeightRule::exact;
    /// Records per inter-observation interval (prediction sub-steps).
    int substeps = 1;
    bool record_residual = true;
};

/// Alternate prediction and correction over the observation schedule. The
/// last family and coordinates go to `final_state` when it is given.
inline FilterTrajectory run_discrete_filter(const DiscreteProblem& prob,
                                            std::optional<std::pair<MixtureFamily, Eigen::VectorXd>>* final_state = nullptr) {
    prob.obs.validate();
    if (prob.observations.size() != prob.obs.times.size()) {
        throw ValidationError("discrete filter: " + std::to_string(prob.observations.size()) + " observations for " +
                              std::to_string(prob.obs.times.size()) + " observation times");
    }
    if (prob.substeps < 1) throw ValidationError("discrete filter: substeps must be >= 1");
    if (!prob.obs.times.empty() && !(prob.obs.times.front() > prob.t0)) {
        throw ValidationError("discrete filter: first observation time must follow t0");
    }
    FilterTrajectory traj;
    traj.engine = "mpf";
    DiscreteStepper st(prob.family, prob.theta0, prob.t0, prob.model, prob.integrator);
    auto snapshot = [&] {
        const auto [mean, var] = st.moments();
        traj.record(st.time(), mean, var, prob.record_residual ? st.residual() : FilterTrajectory::kNaN);
        traj.record_state(st.theta(), st.family().generation());
    };
    auto advance = [&](double t1) {
        const double start = st.time();
        for (int s = 1; s <= prob.substeps; ++s) {
            const double ts = s == prob.substeps ? t1 : start + (t1 - start) * s / prob.substeps;
            if (st.predict_to(ts)) traj.log(ts, "clip", "prediction");
            if (s < prob.substeps) snapshot();
        }
    };
    run_guarded(traj, [&] {
        snapshot();
        for (std::size_t n = 0; n < prob.obs.times.size(); ++n) {
            const double tn = prob.obs.times[n];
            advance(tn);
            try {
                if (st.correct(prob.observations[n], prob.obs, prob.weights)) traj.log(tn, "clip", "correction");
            } catch (const StarvationError& e) {
                traj.log(tn, "starvation", e.what());
                throw;
            }
            snapshot();
        }
        if (prob.obs.times.empty() && prob.horizon > prob.t0) {
            advance(prob.horizon);
            snapshot();
        }
    });
    if (final_state) final_state->emplace(st.family(), st.theta());
    return traj;
}

}  // namespace mpf
