#pragma once

// Galerkin filters on the mixture family: trial functions
// phi_i = q_i - q_{m+1} (i <= m) and phi_{m+1} = q_{m+1} with coefficients
// (theta, 1), test functions phi_1..phi_m. Assembled on a separate
// trapezoid grid with its own operator code and linear solver.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "mpf/dynamics.hpp"
#include "mpf/errors.hpp"
#include "mpf/families.hpp"

namespace mpf::oracles {

class GalerkinOracle {
public:
    /// Nodes per narrowest standard deviation and half-width in standard
    /// deviations of the trapezoid grid.
    static constexpr double kPerSd = 10.0;
    static constexpr double kReach = 14.0;
    static constexpr int kMaxNodes = 60001;

    explicit GalerkinOracle(const MixtureFamily& fam) : m_(fam.m()) {
        double lo = 1e300, hi = -1e300, narrow = 1e300;
        for (const auto& c : fam.components()) {
            const Hint<1> h = c.hint();
            lo = std::min(lo, h.center - kReach * h.scale);
            hi = std::max(hi, h.center + kReach * h.scale);
            narrow = std::min(narrow, h.scale);
        }
        const int n = std::min(kMaxNodes, static_cast<int>(std::ceil((hi - lo) / narrow * kPerSd)) + 1);
        dx_ = (hi - lo) / (n - 1);
        x_.resize(n);
        w_ = Eigen::VectorXd::Constant(n, dx_);
        w_(0) = w_(n - 1) = 0.5 * dx_;
        const int k = fam.size();
        phi_.resize(n, k);
        dphi_.resize(n, k);
        ddphi_.resize(n, k);
        for (int i = 0; i < n; ++i) {
            x_(i) = lo + dx_ * i;
            for (int j = 0; j < k; ++j) {
                const Jet q = fam.component(j).jet(x_(i));
                phi_(i, j) = q.value;
                dphi_(i, j) = q.d1;
                ddphi_(i, j) = q.d2;
            }
        }
        // Trial functions: subtract the last component from the first m.
        for (int j = 0; j < m_; ++j) {
            phi_.col(j) -= phi_.col(m_);
            dphi_.col(j) -= dphi_.col(m_);
            ddphi_.col(j) -= ddphi_.col(m_);
        }
        const Eigen::MatrixXd test = phi_.leftCols(m_);
        gram_ = test.transpose() * w_.asDiagonal() * test;
        qr_.compute(gram_);
        if (qr_.rank() < m_) throw DegenerateError("galerkin: singular mass matrix");
    }

    int m() const { return m_; }
    const Eigen::MatrixXd& mass_matrix() const { return gram_; }

    /// K_ji = <L* phi_i, phi_j>, j = 1..m, i = 1..m+1.
    Eigen::MatrixXd stiffness(const DiffusionModel& model, double t) const {
        const Eigen::MatrixXd lphi = forward(model, t);
        return phi_.leftCols(m_).transpose() * w_.asDiagonal() * lphi;
    }

    /// The Galerkin ODE d theta/dt = G^{-1}(K_{1:m} theta + K_{m+1}),
    /// rewritten as an m x (m+1) matrix acting on (theta, 1 - sum theta).
    Eigen::MatrixXd prediction_generator(const DiffusionModel& model, double t) const {
        const Eigen::MatrixXd k = stiffness(model, t);
        const Eigen::MatrixXd sol = qr_.solve(k);
        Eigen::MatrixXd b(m_, m_ + 1);
        for (int i = 0; i < m_; ++i) b.col(i) = sol.col(i) + sol.col(m_);
        b.col(m_) = sol.col(m_);
        return b;
    }

    /// One Euler–Maruyama step of the projected Itô equation
    /// dp = L* p dt + sum_k (b_k - E b_k) p (dY_k - E b_k dt).
    Eigen::VectorXd ito_step(const Eigen::VectorXd& theta, const DiffusionModel& model, const ContinuousObsModel& obs,
                             const Eigen::VectorXd& dy, double dt, double t) const {
        if (theta.size() != m_) throw ValidationError("galerkin: theta has wrong dimension");
        if (dy.size() != obs.d()) throw ValidationError("galerkin: observation increment has wrong dimension");
        Eigen::VectorXd c(m_ + 1);
        c.head(m_) = theta;
        c(m_) = 1.0;
        const Eigen::VectorXd p = phi_ * c;
        const Eigen::VectorXd lp = forward(model, t) * c;
        const Eigen::MatrixXd test = phi_.leftCols(m_);
        Eigen::VectorXd rhs = test.transpose() * w_.cwiseProduct(lp) * dt;
        for (int k = 0; k < obs.d(); ++k) {
            Eigen::VectorXd bk(x_.size());
            for (Eigen::Index i = 0; i < x_.size(); ++i) bk(i) = obs.b(k, t, x_(i));
            const double e = w_.dot(bk.cwiseProduct(p));
            const Eigen::VectorXd gk = (bk.array() - e).matrix().cwiseProduct(p);
            rhs += test.transpose() * w_.cwiseProduct(gk) * (dy(k) - e * dt);
        }
        const Eigen::VectorXd next = theta + qr_.solve(rhs);
        if (!next.allFinite()) throw NumericError("galerkin: non-finite Itô step");
        return next;
    }

private:
    /// L* phi_i on the grid for every trial function.
    Eigen::MatrixXd forward(const DiffusionModel& model, double t) const {
        const Eigen::Index n = x_.size();
        Eigen::MatrixXd out(n, m_ + 1);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double x = x_(i);
            const double f = model.f(t, x), fx = model.f_x(t, x);
            const double a = model.a(t, x), ax = model.a_x(t, x), axx = model.a_xx(t, x);
            for (int j = 0; j <= m_; ++j) {
                const double v = phi_(i, j), d1 = dphi_(i, j), d2 = ddphi_(i, j);
                out(i, j) = -fx * v - f * d1 + 0.5 * axx * v + ax * d1 + 0.5 * a * d2;
            }
        }
        return out;
    }

    int m_;
    double dx_ = 0.0;
    Eigen::VectorXd x_, w_;
    Eigen::MatrixXd phi_, dphi_, ddphi_;
    Eigen::MatrixXd gram_;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

inline Eigen::MatrixXd galerkin_prediction_generator(const MixtureFamily& fam, const DiffusionModel& model,
                                                     double t = 0.0) {
    return GalerkinOracle(fam).prediction_generator(model, t);
}

inline Eigen::VectorXd galerkin_ito_continuous_step(const Eigen::VectorXd& theta, const MixtureFamily& fam,
                                                    const DiffusionModel& model, const ContinuousObsModel& obs,
                                                    const Eigen::VectorXd& dy, double dt, double t = 0.0) {
    return GalerkinOracle(fam).ito_step(theta, model, obs, dy, dt, t);
}

}  // namespace mpf::oracles
