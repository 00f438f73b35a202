#pragma once

// Distances, metrics and tangent-space projections on finite-dimensional
// statistical manifolds embedded in L2, with the closed-form Gaussian metrics
// used to validate the quadrature paths.

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "mpf/errors.hpp"
#include "mpf/gaussian.hpp"
#include "mpf/quad.hpp"

namespace mpf {

/// Symmetric positive definite metric in a named coordinate chart.
class MetricMatrix {
public:
    /// Smallest admissible eigenvalue relative to the trace.
    static constexpr double kMinEigenRatio = 1e-12;

    MetricMatrix(Eigen::MatrixXd values, std::string chart = {})
        : values_(std::move(values)), chart_(std::move(chart)) {
        if (values_.rows() != values_.cols() || values_.rows() == 0) {
            throw ValidationError("metric: matrix must be square and non-empty");
        }
        const double scale = std::max(1e-300, values_.cwiseAbs().maxCoeff());
        if ((values_ - values_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
            throw DegenerateError("metric: matrix is not symmetric");
        }
        values_ = 0.5 * (values_ + values_.transpose()).eval();
        llt_.compute(values_);
        const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(values_, Eigen::EigenvaluesOnly)
                                   .eigenvalues()
                                   .minCoeff();
        if (llt_.info() != Eigen::Success || !(min_eig > kMinEigenRatio * values_.trace())) {
            throw DegenerateError("degenerate chart: metric is not positive definite (min eigenvalue " +
                                  std::to_string(min_eig) + ")");
        }
    }

    const Eigen::MatrixXd& values() const { return values_; }
    const std::string& chart() const { return chart_; }
    Eigen::Index dim() const { return values_.rows(); }
    double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

    /// h^{-1} b through the cached Cholesky factor.
    Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return llt_.solve(b); }
    Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const { return llt_.solve(b); }
    Eigen::MatrixXd inverse() const {
        return llt_.solve(Eigen::MatrixXd::Identity(values_.rows(), values_.cols()));
    }

private:
    Eigen::MatrixXd values_;
    std::string chart_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// m-parameter family of densities p(x, theta) with tangent vectors dp/dtheta_i.
template <int N>
struct ParametricFamily {
    using Theta = Eigen::VectorXd;

    static constexpr double kThetaStep = 1e-6;

    int dim = 0;
    std::string chart;
    std::function<double(const Point<N>&, const Theta&)> density;
    /// Optional analytic dp/dtheta_i; central differences in theta otherwise.
    std::function<double(const Point<N>&, const Theta&, int)> dtheta;
    std::function<bool(const Theta&)> in_domain;
    std::function<Hint<N>(const Theta&)> hint;

    void require_domain(const Theta& theta) const {
        if (theta.size() != dim) throw ValidationError("parametric family: theta has wrong dimension");
        if (in_domain && !in_domain(theta)) throw ValidationError("parametric family: theta outside domain");
    }

    double derivative(const Point<N>& x, const Theta& theta, int i) const {
        if (dtheta) return dtheta(x, theta, i);
        Theta tp = theta, tm = theta;
        tp(i) += kThetaStep;
        tm(i) -= kThetaStep;
        return (density(x, tp) - density(x, tm)) / (2.0 * kThetaStep);
    }

    ScalarField<N> density_field(const Theta& theta) const {
        auto dens = density;
        return ScalarField<N>([dens, theta](const Point<N>& x) { return dens(x, theta); }, hint(theta));
    }

    ScalarField<N> tangent_field(const Theta& theta, int i) const {
        auto self = *this;
        return ScalarField<N>([self, theta, i](const Point<N>& x) { return self.derivative(x, theta, i); },
                              hint(theta));
    }
};

namespace detail {

/// Density and tangent vectors sampled on one rule.
template <int N>
struct TangentSamples {
    QuadratureRule<N> rule;
    Eigen::VectorXd density;
    Eigen::MatrixXd tangents;  ///< nodes x m

    Eigen::Map<const Eigen::VectorXd> w() const { return weights_of(rule); }
};

template <int N>
TangentSamples<N> sample_tangents(const ParametricFamily<N>& fam, const Eigen::VectorXd& theta,
                                  const QuadratureSpec<N>& spec, const Hint<N>& hint) {
    fam.require_domain(theta);
    TangentSamples<N> s{make_rule(spec, hint), {}, {}};
    const auto n = static_cast<Eigen::Index>(s.rule.size());
    s.density.resize(n);
    s.tangents.resize(n, fam.dim);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto& x = s.rule.nodes[static_cast<std::size_t>(k)];
        s.density(k) = fam.density(x, theta);
        for (int i = 0; i < fam.dim; ++i) s.tangents(k, i) = fam.derivative(x, theta, i);
    }
    if (!s.density.allFinite() || !s.tangents.allFinite()) {
        throw DomainError("parametric family: non-finite density or tangent on quadrature nodes");
    }
    return s;
}

inline Eigen::MatrixXd weighted_gram(const Eigen::Ref<const Eigen::VectorXd>& w,
                                     const Eigen::Ref<const Eigen::MatrixXd>& cols) {
    const Eigen::Index m = cols.cols();
    Eigen::MatrixXd g(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = i; j < m; ++j) {
            g(i, j) = dot_on(w, cols.col(i), cols.col(j));
            g(j, i) = g(i, j);
        }
    }
    return g;
}

/// Columns D_i / p on nodes where p > 0; nodes with p == 0 must carry no tangent mass.
inline Eigen::MatrixXd score_columns(const Eigen::VectorXd& p, const Eigen::MatrixXd& d) {
    Eigen::MatrixXd out(d.rows(), d.cols());
    for (Eigen::Index k = 0; k < d.rows(); ++k) {
        if (p(k) > 0.0) {
            out.row(k) = d.row(k) / p(k);
        } else if (p(k) == 0.0 && d.row(k).cwiseAbs().maxCoeff() == 0.0) {
            out.row(k).setZero();
        } else {
            throw DomainError("Fisher metric: density not strictly positive at node " + std::to_string(k));
        }
    }
    return out;
}

template <int N>
std::pair<Eigen::VectorXd, Eigen::VectorXd> sample_pair(const ScalarField<N>& p, const ScalarField<N>& q,
                                                        const QuadratureRule<N>& rule, bool require_nonneg) {
    Eigen::VectorXd a = sample(p, rule), b = sample(q, rule);
    if (require_nonneg) {
        for (Eigen::Index k = 0; k < a.size(); ++k) {
            if (a(k) < 0.0 || b(k) < 0.0) {
                throw DomainError("negative density value at node " + std::to_string(k));
            }
        }
    }
    return {std::move(a), std::move(b)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

/// || sqrt(p) - sqrt(q) ||_{L2}
template <int N>
double hellinger_distance(const ScalarField<N>& p, const ScalarField<N>& q, const QuadratureSpec<N>& spec = {}) {
    const auto rule = make_rule(spec, hint_union(p.hint(), q.hint()));
    const auto [a, b] = detail::sample_pair(p, q, rule, true);
    const Eigen::VectorXd d = a.cwiseSqrt() - b.cwiseSqrt();
    return std::sqrt(std::max(0.0, dot_on(weights_of(rule), d, d)));
}

/// || p - q ||_{L2}
template <int N>
double l2_distance(const ScalarField<N>& p, const ScalarField<N>& q, const QuadratureSpec<N>& spec = {}) {
    const auto rule = make_rule(spec, hint_union(p.hint(), q.hint()));
    const auto [a, b] = detail::sample_pair(p, q, rule, true);
    const Eigen::VectorXd d = a - b;
    return std::sqrt(std::max(0.0, dot_on(weights_of(rule), d, d)));
}

/// Kullback–Leibler information K(p, q) = int p log(p/q).
/// Nodes where p vanishes contribute nothing; q <= 0 where p exceeds the
/// spec tolerance is a domain error.
template <int N>
double kl_divergence(const ScalarField<N>& p, const ScalarField<N>& q, const QuadratureSpec<N>& spec = {}) {
    const auto rule = make_rule(spec, hint_union(p.hint(), q.hint()));
    const auto [a, b] = detail::sample_pair(p, q, rule, true);
    double s = 0.0;
    for (Eigen::Index k = 0; k < a.size(); ++k) {
        if (a(k) <= 0.0) continue;
        if (b(k) <= 0.0) {
            if (a(k) > spec.tolerance) {
                throw DomainError("kl_divergence: q vanishes at node " + std::to_string(k) + " where p > 0");
            }
            continue;
        }
        s += rule.weights[static_cast<std::size_t>(k)] * a(k) * (std::log(a(k)) - std::log(b(k)));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// g_ij(theta) = int (1/p) dp/dtheta_i dp/dtheta_j.
template <int N>
MetricMatrix fisher_metric(const ParametricFamily<N>& fam, const Eigen::VectorXd& theta,
                           const QuadratureSpec<N>& spec = {}) {
    const auto s = detail::sample_tangents(fam, theta, spec, fam.hint(theta));
    const Eigen::MatrixXd score = detail::score_columns(s.density, s.tangents);
    const Eigen::Index m = fam.dim;
    Eigen::MatrixXd g(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = i; j < m; ++j) {
            g(i, j) = dot_on(s.w(), score.col(i), s.tangents.col(j));
            g(j, i) = g(i, j);
        }
    }
    return MetricMatrix(std::move(g), fam.chart);
}

/// Gram matrix of the square-root tangent vectors (1/(2 sqrt p)) dp/dtheta_i;
/// equals one quarter of the Fisher metric.
template <int N>
Eigen::MatrixXd hellinger_tangent_gram(const ParametricFamily<N>& fam, const Eigen::VectorXd& theta,
                                       const QuadratureSpec<N>& spec = {}) {
    const auto s = detail::sample_tangents(fam, theta, spec, fam.hint(theta));
    Eigen::MatrixXd e(s.tangents.rows(), s.tangents.cols());
    for (Eigen::Index k = 0; k < e.rows(); ++k) {
        e.row(k) = s.density(k) > 0.0 ? Eigen::RowVectorXd(s.tangents.row(k) / (2.0 * std::sqrt(s.density(k))))
                                      : Eigen::RowVectorXd::Zero(e.cols());
    }
    return detail::weighted_gram(s.w(), e);
}

/// Direct L2 metric h_ij(theta) = int dp/dtheta_i dp/dtheta_j.
template <int N>
MetricMatrix l2_metric(const ParametricFamily<N>& fam, const Eigen::VectorXd& theta,
                       const QuadratureSpec<N>& spec = {}) {
    const auto s = detail::sample_tangents(fam, theta, spec, fam.hint(theta));
    return MetricMatrix(detail::weighted_gram(s.w(), s.tangents), fam.chart);
}

/// Pull a metric back through theta(eta): J^T g J with J = d theta / d eta.
inline MetricMatrix change_coordinates_metric(const MetricMatrix& g, const Eigen::MatrixXd& jacobian,
                                              std::string chart = {}) {
    if (jacobian.rows() != g.dim() || jacobian.cols() != g.dim()) {
        throw ValidationError("change_coordinates_metric: jacobian shape does not match metric");
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jacobian);
    if (lu.rank() < jacobian.rows()) throw ValidationError("change_coordinates_metric: singular jacobian");
    Eigen::MatrixXd out = jacobian.transpose() * g.values() * jacobian;
    out = 0.5 * (out + out.transpose()).eval();
    return MetricMatrix(std::move(out), std::move(chart));
}

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

/// Coefficients c of the L2-orthogonal projection of v onto
/// span{dp/dtheta_i}: Pi[v] = sum_i c_i dp/dtheta_i with h c = <v, dp/dtheta>.
template <int N>
Eigen::VectorXd project_l2(const ScalarField<N>& v, const ParametricFamily<N>& fam, const Eigen::VectorXd& theta,
                           const QuadratureSpec<N>& spec = {}) {
    const auto s = detail::sample_tangents(fam, theta, spec, hint_union(fam.hint(theta), v.hint()));
    const MetricMatrix h(detail::weighted_gram(s.w(), s.tangents), fam.chart);
    const Eigen::VectorXd vals = sample(v, s.rule);
    const Eigen::VectorXd rhs = s.tangents.transpose() * s.w().cwiseProduct(vals);
    return h.solve(rhs);
}

/// Coefficients of the projection onto the square-root tangent space
/// span{(1/(2 sqrt p)) dp/dtheta_i}, using the metric g/4.
template <int N>
Eigen::VectorXd project_fisher(const ScalarField<N>& v, const ParametricFamily<N>& fam,
                               const Eigen::VectorXd& theta, const QuadratureSpec<N>& spec = {}) {
    const auto s = detail::sample_tangents(fam, theta, spec, hint_union(fam.hint(theta), v.hint()));
    const Eigen::MatrixXd score = detail::score_columns(s.density, s.tangents);
    const Eigen::Index m = fam.dim;
    Eigen::MatrixXd g(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = i; j < m; ++j) {
            g(i, j) = dot_on(s.w(), score.col(i), s.tangents.col(j));
            g(j, i) = g(i, j);
        }
    }
    const MetricMatrix fisher(std::move(g), fam.chart);
    const Eigen::VectorXd vals = sample(v, s.rule);
    Eigen::VectorXd rhs(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        double acc = 0.0;
        for (Eigen::Index k = 0; k < vals.size(); ++k) {
            if (s.density(k) > 0.0) {
                acc += s.rule.weights[static_cast<std::size_t>(k)] * vals(k) * s.tangents(k, j) /
                       (2.0 * std::sqrt(s.density(k)));
            }
        }
        rhs(j) = acc;
    }
    return 4.0 * fisher.solve(rhs);
}

/// K(p(theta), p(theta + dtheta)) - 1/2 dtheta^T g(theta) dtheta.
template <int N>
double kl_quadratic_remainder(const ParametricFamily<N>& fam, const Eigen::VectorXd& theta,
                              const Eigen::VectorXd& dtheta, const QuadratureSpec<N>& spec = {}) {
    if (dtheta.size() != fam.dim) throw ValidationError("kl_quadratic_remainder: dtheta has wrong dimension");
    const Eigen::VectorXd moved = theta + dtheta;
    fam.require_domain(theta);
    fam.require_domain(moved);
    if (dtheta.squaredNorm() == 0.0) return 0.0;
    const double kl = kl_divergence(fam.density_field(theta), fam.density_field(moved), spec);
    const MetricMatrix g = fisher_metric(fam, theta, spec);
    return kl - 0.5 * dtheta.dot(g.values() * dtheta);
}

// ---------------------------------------------------------------------------
// Gaussian family: charts and closed-form metrics
// ---------------------------------------------------------------------------

struct GaussianMoments {
    double mean;
    double variance;
};

/// mu = -theta1/(2 theta2), v = -1/(2 theta2) for p ∝ exp(theta1 x + theta2 x^2).
inline GaussianMoments moments_from_canonical(double theta1, double theta2) {
    if (!(theta2 < 0.0)) throw ValidationError("Gaussian canonical parameters need theta2 < 0");
    return {-theta1 / (2.0 * theta2), -1.0 / (2.0 * theta2)};
}

inline Eigen::Vector2d canonical_from_moments(double mean, double variance) {
    if (!(variance > 0.0)) throw ValidationError("Gaussian variance must be positive");
    return {mean / variance, -1.0 / (2.0 * variance)};
}

/// d(theta1, theta2) / d(mu, v).
inline Eigen::Matrix2d canonical_jacobian(double mean, double variance) {
    if (!(variance > 0.0)) throw ValidationError("Gaussian variance must be positive");
    Eigen::Matrix2d j;
    j << 1.0 / variance, -mean / (variance * variance), 0.0, 1.0 / (2.0 * variance * variance);
    return j;
}

/// p(x, theta) = exp(theta1 x + theta2 x^2 - psi(theta)).
inline ParametricFamily<1> gaussian_canonical_family() {
    ParametricFamily<1> fam;
    fam.dim = 2;
    fam.chart = "canonical";
    fam.density = [](double x, const Eigen::VectorXd& t) {
        const auto m = moments_from_canonical(t(0), t(1));
        return normal_pdf(x, m.mean, m.variance);
    };
    fam.dtheta = [](double x, const Eigen::VectorXd& t, int i) {
        const auto m = moments_from_canonical(t(0), t(1));
        const double p = normal_pdf(x, m.mean, m.variance);
        return i == 0 ? (x - m.mean) * p : (x * x - m.variance - m.mean * m.mean) * p;
    };
    fam.in_domain = [](const Eigen::VectorXd& t) { return t.size() == 2 && t(1) < 0.0 && std::isfinite(t(0)); };
    fam.hint = [](const Eigen::VectorXd& t) {
        const auto m = moments_from_canonical(t(0), t(1));
        return Hint<1>{m.mean, std::sqrt(m.variance)};
    };
    return fam;
}

/// N(mu, v) parametrised by (mu, v).
inline ParametricFamily<1> gaussian_expectation_family() {
    ParametricFamily<1> fam;
    fam.dim = 2;
    fam.chart = "expectation";
    fam.density = [](double x, const Eigen::VectorXd& t) { return normal_pdf(x, t(0), t(1)); };
    fam.dtheta = [](double x, const Eigen::VectorXd& t, int i) {
        const double p = normal_pdf(x, t(0), t(1));
        const double d = x - t(0), v = t(1);
        return i == 0 ? d / v * p : (d * d / (2.0 * v * v) - 1.0 / (2.0 * v)) * p;
    };
    fam.in_domain = [](const Eigen::VectorXd& t) { return t.size() == 2 && t(1) > 0.0 && std::isfinite(t(0)); };
    fam.hint = [](const Eigen::VectorXd& t) { return Hint<1>{t(0), std::sqrt(t(1))}; };
    return fam;
}

inline MetricMatrix gaussian_fisher_canonical(double theta1, double theta2) {
    if (!(theta2 < 0.0)) throw ValidationError("gaussian_fisher_canonical: theta2 must be negative");
    Eigen::Matrix2d g;
    const double t22 = theta2 * theta2;
    g << -1.0 / (2.0 * theta2), theta1 / (2.0 * t22), theta1 / (2.0 * t22),
        1.0 / (2.0 * t22) - theta1 * theta1 / (2.0 * t22 * theta2);
    return MetricMatrix(g, "canonical");
}

inline MetricMatrix gaussian_fisher_expectation(double mean, double variance) {
    if (!(variance > 0.0)) throw ValidationError("gaussian_fisher_expectation: variance must be positive");
    (void)mean;
    Eigen::Matrix2d g;
    g << 1.0 / variance, 0.0, 0.0, 1.0 / (2.0 * variance * variance);
    return MetricMatrix(g, "expectation");
}

inline MetricMatrix gaussian_l2_canonical(double theta1, double theta2) {
    if (!(theta2 < 0.0)) throw ValidationError("gaussian_l2_canonical: theta2 must be negative");
    const double nt2 = -theta2;
    const double pre = std::numbers::sqrt2 / (8.0 * std::sqrt(nt2 * std::numbers::pi));
    Eigen::Matrix2d h;
    h << 1.0, theta1 / nt2, theta1 / nt2, 0.75 / nt2 + theta1 * theta1 / (theta2 * theta2);
    return MetricMatrix(pre * h, "canonical");
}

/// The (mu, mu) entry 1/(8 v sqrt(v pi)) that is sometimes quoted for the
/// (mu, v) chart. Direct integration and the canonical-chart metric both give
/// twice this value.
inline double halved_l2_expectation_mumu(double variance) {
    return 1.0 / (8.0 * variance * std::sqrt(variance * std::numbers::pi));
}

/// diag(1/(4 v sqrt(v pi)), 3/(32 v^2 sqrt(v pi))). The (mu, mu) entry is the
/// integrated value (compare halved_l2_expectation_mumu).
inline MetricMatrix gaussian_l2_expectation(double mean, double variance) {
    if (!(variance > 0.0)) throw ValidationError("gaussian_l2_expectation: variance must be positive");
    (void)mean;
    const double base = 1.0 / (variance * std::sqrt(variance * std::numbers::pi));
    Eigen::Matrix2d h;
    h << base / 4.0, 0.0, 0.0, base * 3.0 / (32.0 * variance);
    return MetricMatrix(h, "expectation");
}

}  // namespace mpf
