#pragma once

// Dense-grid reference solvers for the Fokker–Planck and Kushner–Stratonovich
// equations on a bounded interval with closed (zero-flux) ends.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpf/continuous_filter.hpp"
#include "mpf/dynamics.hpp"
#include "mpf/errors.hpp"
#include "mpf/trajectory.hpp"

namespace mpf::oracles {

enum class GridScheme { explicit_euler, crank_nicolson };

inline constexpr double kCflLimit = 0.45;

/// Values >= 0 on a uniform grid; normalised densities have
/// sum(values) * dx = 1.
struct GridDensity {
    GridField grid;
    bool normalized = false;

    static GridDensity from_field(const Field1& f, double lower, double upper, int n) {
        GridDensity g{GridField::sample(f, lower, upper, n), false};
        g.normalize();
        return g;
    }

    double mass() const { return grid.mass(); }

    void normalize() {
        const double m = grid.mass();
        if (!(m > 0.0) || !std::isfinite(m)) throw DegenerateError("grid density: mass vanished");
        grid.values /= m;
        normalized = true;
    }

    std::pair<double, double> moments() const {
        double m0 = 0.0, m1 = 0.0, m2 = 0.0;
        for (Eigen::Index i = 0; i < grid.size(); ++i) {
            const double x = grid.x(i), v = grid.values(i);
            m0 += v;
            m1 += v * x;
            m2 += v * x * x;
        }
        const double mean = m1 / m0;
        return {mean, m2 / m0 - mean * mean};
    }

    /// Piecewise-linear interpolant, zero outside the grid.
    Field1 field() const {
        const GridField g = grid;
        return Field1(
            [g](double x) {
                const double s = (x - g.lower) / g.dx;
                if (s < 0.0 || s > static_cast<double>(g.size() - 1)) return 0.0;
                const auto i = std::min(static_cast<Eigen::Index>(s), g.size() - 2);
                const double frac = s - static_cast<double>(i);
                return (1.0 - frac) * g.values(i) + frac * g.values(i + 1);
            },
            Hint<1>{0.5 * (g.lower + g.upper()), (g.upper() - g.lower) / 20.0});
    }

    /// L2 distance to a field, by the grid's own trapezoid rule.
    double l2_distance_to(const Field1& f) const {
        double s = 0.0;
        for (Eigen::Index i = 0; i < grid.size(); ++i) {
            const double d = grid.values(i) - f(grid.x(i));
            const double w = (i == 0 || i == grid.size() - 1) ? 0.5 : 1.0;
            s += w * d * d;
        }
        return std::sqrt(s * grid.dx);
    }
};

namespace detail {

/// Solve (I - k L) y = rhs for tridiagonal L (Thomas algorithm).
inline Eigen::VectorXd thomas_implicit(const Tridiagonal& op, double k, const Eigen::VectorXd& rhs) {
    const Eigen::Index n = rhs.size();
    Eigen::VectorXd cp(n), dp(n);
    double b = 1.0 - k * op.diag(0);
    if (b == 0.0) throw NumericError("grid solver: singular implicit system");
    cp(0) = -k * op.sup(0) / b;
    dp(0) = rhs(0) / b;
    for (Eigen::Index i = 1; i < n; ++i) {
        const double a = -k * op.sub(i);
        b = 1.0 - k * op.diag(i) - a * cp(i - 1);
        if (b == 0.0) throw NumericError("grid solver: singular implicit system");
        cp(i) = i + 1 < n ? -k * op.sup(i) / b : 0.0;
        dp(i) = (rhs(i) - a * dp(i - 1)) / b;
    }
    Eigen::VectorXd y(n);
    y(n - 1) = dp(n - 1);
    for (Eigen::Index i = n - 2; i >= 0; --i) y(i) = dp(i) - cp(i) * y(i + 1);
    return y;
}

struct FpStepper {
    const DiffusionModel& model;
    GridScheme scheme;
    double dt;
    bool invariant;
    std::optional<Tridiagonal> cached;

    const Tridiagonal& op(const GridField& g, double t) {
        if (!invariant || !cached) cached = forward_operator_matrix(model, g.lower, g.dx, g.size(), t);
        return *cached;
    }

    void check_cfl(const GridField& g, double t) const {
        double amax = 0.0;
        for (Eigen::Index i = 0; i < g.size(); ++i) amax = std::max(amax, model.a(t, g.x(i)));
        if (amax * dt / (g.dx * g.dx) > kCflLimit) {
            throw ValidationError("grid solver: explicit step violates CFL (a dt / dx^2 = " +
                                  std::to_string(amax * dt / (g.dx * g.dx)) + " > 0.45)");
        }
    }

    /// One step from t to t + h; returns the number of floored nodes.
    int step(GridField& g, double t, double h) {
        if (scheme == GridScheme::explicit_euler) {
            const Tridiagonal& l = op(g, t);
            g.values += h * l.apply(g.values);
        } else {
            const Tridiagonal& l = op(g, t + 0.5 * h);
            const Eigen::VectorXd rhs = g.values + 0.5 * h * l.apply(g.values);
            g.values = thomas_implicit(l, 0.5 * h, rhs);
        }
        int floored = 0;
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            if (g.values(i) < 0.0) {
                g.values(i) = 0.0;
                ++floored;
            }
        }
        if (!g.values.allFinite()) throw NumericError("grid solver: non-finite density");
        return floored;
    }
};

}  // namespace detail

struct GridRun {
    GridDensity density;
    int floor_events = 0;
};

/// Evolve p0 from t0 to t1 under dp/dt = L* p.
inline GridRun grid_fokker_planck_solve(const DiffusionModel& model, const GridDensity& p0, double t0, double t1,
                                        double dt, GridScheme scheme = GridScheme::crank_nicolson) {
    p0.grid.validate();
    if (!(t1 >= t0) || !(dt > 0.0)) throw ValidationError("grid solver: need t1 >= t0 and dt > 0");
    GridRun run{p0, 0};
    if (t1 == t0) return run;
    const int steps = std::max(1, static_cast<int>(std::ceil((t1 - t0) / dt - 1e-9)));
    const double h = (t1 - t0) / steps;
    detail::FpStepper st{model, scheme, h, model.time_invariant, std::nullopt};
    if (scheme == GridScheme::explicit_euler) st.check_cfl(run.density.grid, t0);
    const double mass0 = run.density.mass();
    for (int s = 0; s < steps; ++s) {
        const int floored = st.step(run.density.grid, t0 + s * h, h);
        if (floored > 0) {
            ++run.floor_events;
            run.density.grid.values *= mass0 / run.density.mass();
        }
    }
    return run;
}

/// Splitting scheme: a Fokker–Planck step followed by the multiplicative
/// update p <- p exp(b.dY - |b|^2 dt / 2), renormalised, in log form.
inline FilterTrajectory grid_kushner_solve(const DiffusionModel& model, const ContinuousObsModel& obs,
                                           const GridDensity& p0, const PathBundle& path,
                                           GridScheme scheme = GridScheme::crank_nicolson, int record_every = 1,
                                           GridDensity* final_density = nullptr) {
    p0.grid.validate();
    if (path.y.rows() != obs.d()) throw ValidationError("grid kushner: path has wrong channel count");
    GridDensity p = p0;
    p.normalize();
    const double dt = path.dt;
    detail::FpStepper st{model, scheme, dt, model.time_invariant, std::nullopt};
    if (scheme == GridScheme::explicit_euler) st.check_cfl(p.grid, path.t[0]);
    FilterTrajectory traj;
    traj.engine = "grid";
    {
        const auto [m, v] = p.moments();
        traj.record(path.t[0], m, v);
    }
    const Eigen::Index n = p.grid.size();
    Eigen::MatrixXd b(n, obs.d());
    const bool invariant = obs.time_invariant;
    bool b_ready = false;
    Eigen::VectorXd logw(n);
    for (std::size_t s = 0; s < path.steps(); ++s) {
        const double t = path.t[s];
        if (!invariant || !b_ready) {
            for (int k = 0; k < obs.d(); ++k) {
                for (Eigen::Index i = 0; i < n; ++i) b(i, k) = obs.b(k, t, p.grid.x(i));
            }
            b_ready = true;
        }
        if (st.step(p.grid, t, dt) > 0) traj.log(path.t[s + 1], "floor");
        const Eigen::VectorXd dy = path.dy(s);
        for (Eigen::Index i = 0; i < n; ++i) logw(i) = b.row(i).dot(dy) - 0.5 * b.row(i).squaredNorm() * dt;
        const double top = logw.maxCoeff();
        p.grid.values = p.grid.values.cwiseProduct((logw.array() - top).exp().matrix());
        p.normalize();
        if ((s + 1) % static_cast<std::size_t>(record_every) == 0 || s + 1 == path.steps()) {
            const auto [m, v] = p.moments();
            traj.record(path.t[s + 1], m, v);
        }
    }
    if (final_density) *final_density = p;
    return traj;
}

}  // namespace mpf::oracles
