#pragma once

// Filtering-system definitions for a scalar state: the diffusion, discrete
// and continuous observation models, the backward/forward diffusion
// operators, likelihoods and the centred gamma fields.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mpf/errors.hpp"
#include "mpf/families.hpp"
#include "mpf/quad.hpp"

namespace mpf {

using TimeFn = std::function<double(double t, double x)>;

/// f = F x with constant sigma and Q (scalar state).
struct LinearGaussian {
    double drift_coefficient = 0.0;
    double sigma = 0.0;
    double noise_cov = 1.0;
    double diffusion() const { return sigma * sigma * noise_cov; }
};

/// dX = f_t(X) dt + sigma_t(X) dW with Var(dW) = Q_t dt.
struct DiffusionModel {
    static constexpr double kStep = 1e-5;

    TimeFn drift;
    TimeFn drift_dx;   ///< optional
    TimeFn sigma;
    TimeFn sigma_dx;   ///< optional
    TimeFn sigma_dxx;  ///< optional
    std::function<double(double t)> noise_cov;  ///< optional, defaults to 1
    bool time_invariant = true;
    std::optional<LinearGaussian> linear;
    std::string name;

    double f(double t, double x) const { return drift(t, x); }

    double f_x(double t, double x) const {
        if (drift_dx) return drift_dx(t, x);
        const double h = kStep * std::max(1.0, std::abs(x));
        return (drift(t, x + h) - drift(t, x - h)) / (2.0 * h);
    }

    double q(double t) const { return noise_cov ? noise_cov(t) : 1.0; }
    double s(double t, double x) const { return sigma(t, x); }

    double s_x(double t, double x) const {
        if (sigma_dx) return sigma_dx(t, x);
        const double h = kStep * std::max(1.0, std::abs(x));
        return (sigma(t, x + h) - sigma(t, x - h)) / (2.0 * h);
    }

    double s_xx(double t, double x) const {
        if (sigma_dxx) return sigma_dxx(t, x);
        if (sigma_dx) {
            const double h = kStep * std::max(1.0, std::abs(x));
            return (sigma_dx(t, x + h) - sigma_dx(t, x - h)) / (2.0 * h);
        }
        const double h = 1e-4 * std::max(1.0, std::abs(x));
        return (sigma(t, x + h) - 2.0 * sigma(t, x) + sigma(t, x - h)) / (h * h);
    }

    /// a = sigma Q sigma^T and its spatial derivatives.
    double a(double t, double x) const {
        const double sv = sigma(t, x);
        return sv * sv * q(t);
    }
    double a_x(double t, double x) const { return 2.0 * s(t, x) * s_x(t, x) * q(t); }
    double a_xx(double t, double x) const {
        const double sx = s_x(t, x);
        return 2.0 * (sx * sx + s(t, x) * s_xx(t, x)) * q(t);
    }

    static DiffusionModel zero() { return linear_model(0.0, 0.0, "zero"); }

    /// f = F x, sigma constant.
    static DiffusionModel linear_model(double drift_coefficient, double sigma_value, std::string name = "linear") {
        DiffusionModel m;
        m.drift = [drift_coefficient](double, double x) { return drift_coefficient * x; };
        m.drift_dx = [drift_coefficient](double, double) { return drift_coefficient; };
        m.sigma = [sigma_value](double, double) { return sigma_value; };
        m.sigma_dx = [](double, double) { return 0.0; };
        m.sigma_dxx = [](double, double) { return 0.0; };
        m.linear = LinearGaussian{drift_coefficient, sigma_value, 1.0};
        m.name = std::move(name);
        return m;
    }
};

/// Ornstein–Uhlenbeck: f = -alpha x, constant sigma.
inline DiffusionModel linear_ou(double alpha, double sigma) {
    return DiffusionModel::linear_model(-alpha, sigma, "linear-ou");
}

/// Double-well drift f = x - x^3 with constant sigma.
inline DiffusionModel bimodal_drift(double sigma) {
    DiffusionModel m;
    m.drift = [](double, double x) { return x - x * x * x; };
    m.drift_dx = [](double, double x) { return 1.0 - 3.0 * x * x; };
    m.sigma = [sigma](double, double) { return sigma; };
    m.sigma_dx = [](double, double) { return 0.0; };
    m.sigma_dxx = [](double, double) { return 0.0; };
    m.name = "bimodal-drift";
    return m;
}

/// Observation map h(x) = slope * x + offset.
inline std::shared_ptr<const Field1> affine_map(double slope, double offset = 0.0) {
    return std::make_shared<const Field1>([=](double x) { return slope * x + offset; }, Hint<1>{},
                                          [=](double) { return slope; }, [](double) { return 0.0; });
}

inline std::shared_ptr<const Field1> cubic_map() {
    return std::make_shared<const Field1>([](double x) { return x * x * x; }, Hint<1>{},
                                          [](double x) { return 3.0 * x * x; }, [](double x) { return 6.0 * x; });
}

/// Z_n = h(X_{t_n}) + V_n, V_n ~ N(0, r).
struct DiscreteObsModel {
    std::shared_ptr<const Field1> map = affine_map(1.0);
    double noise_variance = 1.0;
    std::vector<double> times;
    std::optional<std::pair<double, double>> affine = std::pair{1.0, 0.0};

    void validate() const {
        if (!map) throw ValidationError("observation model: missing observation map");
        if (!(noise_variance > 0.0)) throw ValidationError("observation model: noise variance must be positive");
        for (std::size_t i = 1; i < times.size(); ++i) {
            if (!(times[i] > times[i - 1])) {
                throw ValidationError("observation model: times must be strictly increasing (index " +
                                      std::to_string(i) + ")");
            }
        }
    }

    static DiscreteObsModel linear(double slope, double r, std::vector<double> times = {}) {
        DiscreteObsModel m;
        m.map = affine_map(slope);
        m.affine = std::pair{slope, 0.0};
        m.noise_variance = r;
        m.times = std::move(times);
        return m;
    }

    static DiscreteObsModel cubic(double r, std::vector<double> times = {}) {
        DiscreteObsModel m;
        m.map = cubic_map();
        m.affine.reset();
        m.noise_variance = r;
        m.times = std::move(times);
        return m;
    }
};

/// One channel of dY = b_t(X) dt + dV.
struct Sensor {
    TimeFn b;
    std::optional<double> slope;  ///< b = slope * x
};

/// dY = b_t(X) dt + dV with R = I.
struct ContinuousObsModel {
    std::vector<Sensor> channels;
    bool time_invariant = true;

    int d() const { return static_cast<int>(channels.size()); }
    double b(int k, double t, double x) const { return channels[static_cast<std::size_t>(k)].b(t, x); }
    double b_sq(double t, double x) const {
        double s = 0.0;
        for (const auto& c : channels) {
            const double v = c.b(t, x);
            s += v * v;
        }
        return s;
    }
    bool is_linear() const {
        return std::all_of(channels.begin(), channels.end(), [](const Sensor& c) { return c.slope.has_value(); });
    }

    static ContinuousObsModel linear(double slope) {
        return {{Sensor{[slope](double, double x) { return slope * x; }, slope}}, true};
    }
    static ContinuousObsModel cubic() { return {{Sensor{[](double, double x) { return x * x * x; }, std::nullopt}}, true}; }
    static ContinuousObsModel constant(double c) { return {{Sensor{[c](double, double) { return c; }, std::nullopt}}, true}; }
    static ContinuousObsModel none() { return constant(0.0); }
};

enum class DerivativePolicy { allow_finite_differences, analytic_only };

/// L_t phi = f phi' + 1/2 a phi''.
inline Field1 backward_operator(const DiffusionModel& model, const Field1& phi, double t,
                                DerivativePolicy policy = DerivativePolicy::allow_finite_differences) {
    if (policy == DerivativePolicy::analytic_only && (!phi.has_gradient() || !phi.has_hessian())) {
        throw CapabilityError("backward_operator: field lacks analytic derivatives and finite differences are disabled");
    }
    return Field1([model, phi, t](double x) {
        return model.f(t, x) * phi.gradient(x) + 0.5 * model.a(t, x) * phi.hessian(x);
    }, phi.hint());
}

/// L*_t phi = -(f phi)' + 1/2 (a phi)'' evaluated pointwise from a jet of phi.
inline double forward_operator_at(const DiffusionModel& model, double t, double x, const Jet& phi) {
    const double fv = model.f(t, x), fx = model.f_x(t, x);
    const double av = model.a(t, x), ax = model.a_x(t, x), axx = model.a_xx(t, x);
    return -(fx * phi.value + fv * phi.d1) + 0.5 * (axx * phi.value + 2.0 * ax * phi.d1 + av * phi.d2);
}

/// L_t phi evaluated pointwise from a jet of phi.
inline double backward_operator_at(const DiffusionModel& model, double t, double x, const Jet& phi) {
    return model.f(t, x) * phi.d1 + 0.5 * model.a(t, x) * phi.d2;
}

/// Density sampled on a uniform grid. Boundaries are closed (zero flux), so
/// the divergence-form operator conserves sum(values) * dx exactly.
struct GridField {
    double lower = 0.0;
    double dx = 0.0;
    Eigen::VectorXd values;

    static constexpr int kMinNodes = 64;

    Eigen::Index size() const { return values.size(); }
    double x(Eigen::Index i) const { return lower + dx * static_cast<double>(i); }
    double upper() const { return x(values.size() - 1); }
    double mass() const { return values.sum() * dx; }

    static GridField sample(const Field1& f, double lower, double upper, int n) {
        if (n < kMinNodes) throw ValidationError("grid: need at least 64 interior nodes");
        GridField g{lower, (upper - lower) / (n - 1), Eigen::VectorXd(n)};
        for (int i = 0; i < n; ++i) g.values(i) = f(g.x(i));
        return g;
    }

    void validate() const {
        if (values.size() < kMinNodes) {
            throw ValidationError("grid too coarse: " + std::to_string(values.size()) +
                                  " interior nodes, need at least 64");
        }
        if (!(dx > 0.0) || !std::isfinite(lower)) throw ValidationError("grid: spacing must be positive");
    }
};

/// Tridiagonal matrix stored by diagonals.
struct Tridiagonal {
    Eigen::VectorXd sub, diag, sup;  ///< sub(i) multiplies v(i-1), sup(i) multiplies v(i+1)

    Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
        const Eigen::Index n = diag.size();
        Eigen::VectorXd out(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            double s = diag(i) * v(i);
            if (i > 0) s += sub(i) * v(i - 1);
            if (i + 1 < n) s += sup(i) * v(i + 1);
            out(i) = s;
        }
        return out;
    }
};

/// Divergence-form central-difference discretisation of L*_t on a grid:
/// flux J_{i+1/2} = (f_i p_i + f_{i+1} p_{i+1})/2 - (a_{i+1} p_{i+1} - a_i p_i)/(2 dx),
/// zero flux through both ends.
inline Tridiagonal forward_operator_matrix(const DiffusionModel& model, double lower, double dx, Eigen::Index n,
                                           double t) {
    Eigen::VectorXd f(n), a(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = lower + dx * static_cast<double>(i);
        f(i) = model.f(t, x);
        a(i) = model.a(t, x);
    }
    Tridiagonal op{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
    const double k = 0.5 / dx;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (i + 1 < n) {
            op.diag(i) -= (0.5 * f(i) + k * a(i)) / dx;
            op.sup(i) = -(0.5 * f(i + 1) - k * a(i + 1)) / dx;
        }
        if (i > 0) {
            op.diag(i) += (0.5 * f(i) - k * a(i)) / dx;
            op.sub(i) = (0.5 * f(i - 1) + k * a(i - 1)) / dx;
        }
    }
    return op;
}

inline GridField forward_operator(const DiffusionModel& model, const GridField& p, double t) {
    p.validate();
    const Tridiagonal op = forward_operator_matrix(model, p.lower, p.dx, p.size(), t);
    return {p.lower, p.dx, op.apply(p.values)};
}

/// Psi(x) = exp(-(z - h(x))^2 / (2 r)).
inline Likelihood likelihood(double z, const DiscreteObsModel& obs) {
    if (!std::isfinite(z)) throw ValidationError("likelihood: observation must be finite");
    obs.validate();
    auto map = obs.map;
    const double r = obs.noise_variance;
    auto value = [map, z, r](double x) {
        const double e = z - (*map)(x);
        return std::exp(-0.5 * e * e / r);
    };
    auto grad = [map, z, r](double x) {
        const double e = z - (*map)(x);
        return std::exp(-0.5 * e * e / r) * e * map->gradient(x) / r;
    };
    auto hess = [map, z, r](double x) {
        const double e = z - (*map)(x);
        const double h1 = map->gradient(x);
        const double l1 = e * h1 / r;
        return std::exp(-0.5 * e * e / r) * (l1 * l1 + (-h1 * h1 + e * map->hessian(x)) / r);
    };
    Hint<1> hint{};
    if (obs.affine && obs.affine->first != 0.0) {
        hint = {(z - obs.affine->second) / obs.affine->first, std::sqrt(r) / std::abs(obs.affine->first)};
    }
    Likelihood out{Field1(value, hint, grad, hess), Likelihood::GaussianForm{z, r, map, obs.affine}};
    return out;
}

namespace detail {

inline double expectation(const Field1& p, const std::function<double(double)>& g, const QuadSpec1& spec,
                          const char* what) {
    const Rule1 rule = make_rule(spec, p.hint());
    double s = 0.0;
    for (std::size_t k = 0; k < rule.size(); ++k) s += rule.weights[k] * g(rule.nodes[k]) * p(rule.nodes[k]);
    if (!std::isfinite(s)) throw DomainError(std::string("divergent expectation of ") + what);
    return s;
}

}  // namespace detail

/// gamma^0_t(p) = 1/2 (|b_t|^2 - E_p |b_t|^2) p.
inline Field1 gamma0(const Field1& p, const ContinuousObsModel& obs, double t, const QuadSpec1& spec = {}) {
    const double e = detail::expectation(p, [&](double x) { return obs.b_sq(t, x); }, spec, "|b|^2");
    return Field1([p, obs, t, e](double x) { return 0.5 * (obs.b_sq(t, x) - e) * p(x); }, p.hint());
}

/// gamma^k_t(p) = (b^k_t - E_p b^k_t) p, k zero-based.
inline Field1 gammak(const Field1& p, const ContinuousObsModel& obs, int k, double t, const QuadSpec1& spec = {}) {
    if (k < 0 || k >= obs.d()) throw ValidationError("gammak: channel index out of range");
    const double e = detail::expectation(p, [&](double x) { return obs.b(k, t, x); }, spec, "b^k");
    return Field1([p, obs, k, t, e](double x) { return (obs.b(k, t, x) - e) * p(x); }, p.hint());
}

/// Empirical constants for the Lipschitz, non-explosion and growth conditions
/// over [-radius, radius]. Diagnostic only.
struct AssumptionReport {
    double lipschitz = 0.0;        ///< K_R
    double non_explosion = 0.0;    ///< K
    double growth_constant = 0.0;  ///< K in |b| <= K (1 + |x|^r)
    int growth_order = 0;          ///< r
};

inline AssumptionReport check_assumptions(const DiffusionModel& model, const ContinuousObsModel& obs, double radius,
                                          int samples = 2001, double t = 0.0) {
    if (!(radius > 0.0) || samples < 3) throw ValidationError("check_assumptions: bad sampling domain");
    AssumptionReport rep;
    const double dx = 2.0 * radius / (samples - 1);
    double prev_f = model.f(t, -radius), prev_a = model.a(t, -radius);
    for (int i = 0; i < samples; ++i) {
        const double x = -radius + dx * i;
        const double fv = model.f(t, x), av = model.a(t, x);
        if (i > 0) {
            rep.lipschitz = std::max({rep.lipschitz, std::abs(fv - prev_f) / dx, std::abs(av - prev_a) / dx});
        }
        prev_f = fv;
        prev_a = av;
        rep.non_explosion = std::max({rep.non_explosion, x * fv / (1.0 + x * x), av / (1.0 + x * x)});
    }
    const double b_edge = std::sqrt(std::max(obs.b_sq(t, radius), obs.b_sq(t, -radius)));
    const double b_mid = std::sqrt(std::max(obs.b_sq(t, 0.5 * radius), obs.b_sq(t, -0.5 * radius)));
    if (b_edge > 0.0 && b_mid > 0.0 && radius > 2.0) {
        rep.growth_order = std::max(0, static_cast<int>(std::lround(std::log(b_edge / b_mid) / std::log(2.0))));
    }
    for (int i = 0; i < samples; ++i) {
        const double x = -radius + dx * i;
        rep.growth_constant = std::max(rep.growth_constant,
                                       std::sqrt(obs.b_sq(t, x)) / (1.0 + std::pow(std::abs(x), rep.growth_order)));
    }
    return rep;
}

}  // namespace mpf
