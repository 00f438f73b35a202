#pragma once

// Quadrature over R^n (n = 1, 2): scalar fields, integration rules, L2 inner
// products. Every other module integrates through this header.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mpf/errors.hpp"

namespace mpf {

// Points are plain doubles in one dimension so the scalar hot paths stay
// free of Eigen temporaries.
template <int N>
struct PointTraits {
    static_assert(N == 1 || N == 2, "only n = 1 and n = 2 are supported");
    using point = Eigen::Matrix<double, N, 1>;
    using hessian = Eigen::Matrix<double, N, N>;
};
template <>
struct PointTraits<1> {
    using point = double;
    using hessian = double;
};

template <int N>
using Point = typename PointTraits<N>::point;
template <int N>
using Hessian = typename PointTraits<N>::hessian;

namespace detail {

template <int N>
double coord(const Point<N>& x, int i) {
    if constexpr (N == 1) {
        (void)i;
        return x;
    } else {
        return x(i);
    }
}

template <int N>
void set_coord(Point<N>& x, int i, double v) {
    if constexpr (N == 1) {
        (void)i;
        x = v;
    } else {
        x(i) = v;
    }
}

template <int N>
Point<N> filled(double v) {
    if constexpr (N == 1) {
        return v;
    } else {
        return Point<N>::Constant(v);
    }
}

template <int N>
void set_hess(Hessian<N>& h, int i, int j, double v) {
    if constexpr (N == 1) {
        (void)i;
        (void)j;
        h = v;
    } else {
        h(i, j) = v;
    }
}

template <int N>
std::string format_point(const Point<N>& x) {
    std::ostringstream os;
    os.precision(17);
    if constexpr (N == 1) {
        os << x;
    } else {
        os << "(";
        for (int i = 0; i < N; ++i) os << (i ? ", " : "") << x(i);
        os << ")";
    }
    return os.str();
}

}  // namespace detail

/// Where a field's mass (or support of interest) lives: per-axis centre and
/// positive scale. Default quadrature bounds are `center ± span * scale`.
template <int N>
struct Hint {
    Point<N> center = detail::filled<N>(0.0);
    Point<N> scale = detail::filled<N>(1.0);
};

/// Smallest hint whose default box covers both inputs' default boxes.
template <int N>
Hint<N> hint_union(const Hint<N>& a, const Hint<N>& b) {
    Hint<N> out;
    for (int i = 0; i < N; ++i) {
        const double ca = detail::coord<N>(a.center, i), cb = detail::coord<N>(b.center, i);
        const double sa = detail::coord<N>(a.scale, i), sb = detail::coord<N>(b.scale, i);
        const double lo = std::min(ca - 10.0 * sa, cb - 10.0 * sb);
        const double hi = std::max(ca + 10.0 * sa, cb + 10.0 * sb);
        const double c = 0.5 * (lo + hi);
        const double reach = std::max(std::abs(ca - c) / 10.0 + sa, std::abs(cb - c) / 10.0 + sb);
        detail::set_coord<N>(out.center, i, c);
        detail::set_coord<N>(out.scale, i, reach);
    }
    return out;
}

/// Evaluable real function on R^n with optional analytic derivatives.
///
/// Missing derivatives fall back to central differences: step 1e-5*scale for
/// first derivatives (and for Hessians built from an analytic gradient), step
/// 1e-4*scale for second differences of plain values.
template <int N>
class ScalarField {
public:
    using point_type = Point<N>;
    using hessian_type = Hessian<N>;
    using EvalFn = std::function<double(const point_type&)>;
    using GradFn = std::function<point_type(const point_type&)>;
    using HessFn = std::function<hessian_type(const point_type&)>;

    static constexpr double kGradStep = 1e-5;
    static constexpr double kSecondDiffStep = 1e-4;

    ScalarField() : eval_([](const point_type&) { return 0.0; }) {
        grad_ = [](const point_type&) { return detail::filled<N>(0.0); };
        hess_ = [](const point_type&) {
            hessian_type h{};
            if constexpr (N == 1) {
                h = 0.0;
            } else {
                h.setZero();
            }
            return h;
        };
    }

    ScalarField(EvalFn eval, Hint<N> hint, GradFn grad = {}, HessFn hess = {})
        : eval_(std::move(eval)), grad_(std::move(grad)), hess_(std::move(hess)), hint_(hint) {}

    double operator()(const point_type& x) const { return eval_(x); }

    bool has_gradient() const { return static_cast<bool>(grad_); }
    bool has_hessian() const { return static_cast<bool>(hess_); }
    const Hint<N>& hint() const { return hint_; }
    void set_hint(const Hint<N>& h) { hint_ = h; }

    point_type gradient(const point_type& x) const {
        if (grad_) return grad_(x);
        point_type g = detail::filled<N>(0.0);
        for (int i = 0; i < N; ++i) {
            const double h = kGradStep * detail::coord<N>(hint_.scale, i);
            point_type xp = x, xm = x;
            detail::set_coord<N>(xp, i, detail::coord<N>(x, i) + h);
            detail::set_coord<N>(xm, i, detail::coord<N>(x, i) - h);
            detail::set_coord<N>(g, i, (eval_(xp) - eval_(xm)) / (2.0 * h));
        }
        return g;
    }

    hessian_type hessian(const point_type& x) const {
        if (hess_) return hess_(x);
        hessian_type out{};
        if (grad_) {
            for (int j = 0; j < N; ++j) {
                const double h = kGradStep * detail::coord<N>(hint_.scale, j);
                point_type xp = x, xm = x;
                detail::set_coord<N>(xp, j, detail::coord<N>(x, j) + h);
                detail::set_coord<N>(xm, j, detail::coord<N>(x, j) - h);
                const point_type gp = grad_(xp), gm = grad_(xm);
                for (int i = 0; i < N; ++i) {
                    detail::set_hess<N>(out, i, j,
                                        (detail::coord<N>(gp, i) - detail::coord<N>(gm, i)) / (2.0 * h));
                }
            }
            if constexpr (N == 2) out = 0.5 * (out + out.transpose()).eval();
            return out;
        }
        const double f0 = eval_(x);
        for (int i = 0; i < N; ++i) {
            const double hi = kSecondDiffStep * detail::coord<N>(hint_.scale, i);
            point_type xp = x, xm = x;
            detail::set_coord<N>(xp, i, detail::coord<N>(x, i) + hi);
            detail::set_coord<N>(xm, i, detail::coord<N>(x, i) - hi);
            detail::set_hess<N>(out, i, i, (eval_(xp) - 2.0 * f0 + eval_(xm)) / (hi * hi));
            for (int j = i + 1; j < N; ++j) {
                const double hj = kSecondDiffStep * detail::coord<N>(hint_.scale, j);
                auto at = [&](double si, double sj) {
                    point_type y = x;
                    detail::set_coord<N>(y, i, detail::coord<N>(x, i) + si * hi);
                    detail::set_coord<N>(y, j, detail::coord<N>(x, j) + sj * hj);
                    return eval_(y);
                };
                const double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * hi * hj);
                detail::set_hess<N>(out, i, j, v);
                detail::set_hess<N>(out, j, i, v);
            }
        }
        return out;
    }

private:
    EvalFn eval_;
    GradFn grad_;
    HessFn hess_;
    Hint<N> hint_{};
};

using Field1 = ScalarField<1>;
using Field2 = ScalarField<2>;

/// Field that is identically zero, with exact derivatives.
template <int N>
ScalarField<N> zero_field(Hint<N> hint = {}) {
    ScalarField<N> f;
    f.set_hint(hint);
    return f;
}

/// Sum_i coeffs[i] * fields[i]; derivatives are analytic wherever every term's are.
template <int N>
ScalarField<N> linear_combination(std::vector<double> coeffs, std::vector<ScalarField<N>> fields) {
    if (coeffs.size() != fields.size() || fields.empty()) {
        throw ValidationError("linear_combination: coefficient/field count mismatch");
    }
    Hint<N> hint = fields.front().hint();
    bool grads = true, hesses = true;
    for (const auto& f : fields) {
        hint = hint_union(hint, f.hint());
        grads = grads && f.has_gradient();
        hesses = hesses && f.has_hessian();
    }
    auto data = std::make_shared<std::pair<std::vector<double>, std::vector<ScalarField<N>>>>(
        std::move(coeffs), std::move(fields));
    auto eval = [data](const Point<N>& x) {
        double s = 0.0;
        for (std::size_t i = 0; i < data->first.size(); ++i) s += data->first[i] * data->second[i](x);
        return s;
    };
    typename ScalarField<N>::GradFn grad;
    typename ScalarField<N>::HessFn hess;
    if (grads) {
        grad = [data](const Point<N>& x) {
            Point<N> g = detail::filled<N>(0.0);
            for (std::size_t i = 0; i < data->first.size(); ++i) g += data->first[i] * data->second[i].gradient(x);
            return g;
        };
    }
    if (hesses) {
        hess = [data](const Point<N>& x) {
            Hessian<N> h = data->first[0] * data->second[0].hessian(x);
            for (std::size_t i = 1; i < data->first.size(); ++i) h += data->first[i] * data->second[i].hessian(x);
            return h;
        };
    }
    return ScalarField<N>(std::move(eval), hint, std::move(grad), std::move(hess));
}

enum class QuadratureKind { uniform_grid, gauss_hermite };

template <int N>
struct Box {
    Point<N> lower;
    Point<N> upper;
};

/// Gaussian weight for Gauss–Hermite rules: nodes are centre + sqrt(2)*scale*y_k.
template <int N>
struct GaussWeight {
    Point<N> center = detail::filled<N>(0.0);
    Point<N> scale = detail::filled<N>(1.0);
};

template <int N>
struct QuadratureSpec {
    QuadratureKind kind = QuadratureKind::uniform_grid;
    int nodes = 2001;                        ///< per axis
    std::optional<Box<N>> bounds;            ///< uniform grid; default from hint
    std::optional<GaussWeight<N>> weight;    ///< Gauss–Hermite; default from hint
    double span = 10.0;                      ///< hint multiplier for default bounds
    double tolerance = 1e-8;

    static QuadratureSpec gauss_hermite(int n = 64) {
        QuadratureSpec s;
        s.kind = QuadratureKind::gauss_hermite;
        s.nodes = n;
        return s;
    }

    static QuadratureSpec grid(const Box<N>& box, int n = 2001) {
        QuadratureSpec s;
        s.bounds = box;
        s.nodes = n;
        return s;
    }

    void validate() const {
        if (nodes < 8) throw ValidationError("quadrature: node count must be >= 8");
        if (!(tolerance > 0.0) || !std::isfinite(tolerance)) throw ValidationError("quadrature: tolerance must be > 0");
        if (!(span > 0.0) || !std::isfinite(span)) throw ValidationError("quadrature: span must be > 0");
        if (bounds) {
            for (int i = 0; i < N; ++i) {
                const double lo = detail::coord<N>(bounds->lower, i), hi = detail::coord<N>(bounds->upper, i);
                if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
                    throw ValidationError("quadrature: bounds must be finite with lower < upper");
                }
            }
        }
        if (weight) {
            for (int i = 0; i < N; ++i) {
                if (!(detail::coord<N>(weight->scale, i) > 0.0)) {
                    throw ValidationError("quadrature: Gauss-Hermite scale must be > 0");
                }
            }
        }
    }
};

using QuadSpec1 = QuadratureSpec<1>;
using QuadSpec2 = QuadratureSpec<2>;

template <int N>
struct QuadratureRule {
    std::vector<Point<N>> nodes;
    std::vector<double> weights;
    std::size_t size() const { return nodes.size(); }
};

using Rule1 = QuadratureRule<1>;

/// Composite Simpson weights on n uniform nodes over [a, b]. An odd number of
/// intervals closes with Simpson's 3/8 rule on the last three.
inline std::vector<double> simpson_weights(int n, double a, double b) {
    if (n < 4) throw ValidationError("simpson_weights: need at least 4 nodes");
    const int intervals = n - 1;
    const double h = (b - a) / intervals;
    std::vector<double> w(n, 0.0);
    const int simpson_end = (intervals % 2 == 0) ? intervals : intervals - 3;
    for (int k = 0; k < simpson_end; k += 2) {
        w[k] += h / 3.0;
        w[k + 1] += 4.0 * h / 3.0;
        w[k + 2] += h / 3.0;
    }
    if (simpson_end != intervals) {
        const int k = simpson_end;
        w[k] += 3.0 * h / 8.0;
        w[k + 1] += 9.0 * h / 8.0;
        w[k + 2] += 9.0 * h / 8.0;
        w[k + 3] += 3.0 * h / 8.0;
    }
    return w;
}

/// Gauss–Hermite nodes y_k and exp-scaled weights w_k*exp(y_k^2) for the
/// weight exp(-y^2), so that  int f(y) dy ~= sum_k W_k f(y_k).
/// Newton refinement on orthonormal Hermite polynomials.
inline std::pair<std::vector<double>, std::vector<double>> gauss_hermite_nodes(int n) {
    if (n < 1) throw ValidationError("gauss_hermite_nodes: n must be positive");
    std::vector<double> x(n), w(n);
    const double pim4 = std::pow(std::numbers::pi, -0.25);
    const int half = (n + 1) / 2;
    double z = 0.0;
    for (int i = 0; i < half; ++i) {
        if (i == 0) {
            z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
        } else if (i == 1) {
            z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
        } else if (i == 2) {
            z = 1.86 * z - 0.86 * x[0];
        } else if (i == 3) {
            z = 1.91 * z - 0.91 * x[1];
        } else {
            z = 2.0 * z - x[i - 2];
        }
        double pp = 0.0;
        for (int it = 0; it < 200; ++it) {
            double p1 = pim4, p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        const double wi = 2.0 / (pp * pp) * std::exp(z * z);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    // Ascending order.
    std::reverse(x.begin(), x.end());
    std::reverse(w.begin(), w.end());
    return {x, w};
}

namespace detail {

inline std::pair<std::vector<double>, std::vector<double>> axis_rule(const QuadSpec1& s, double center,
                                                                     double scale, double lo, double hi,
                                                                     bool have_bounds) {
    if (s.kind == QuadratureKind::uniform_grid) {
        if (!have_bounds) {
            lo = center - s.span * scale;
            hi = center + s.span * scale;
        }
        std::vector<double> nodes(s.nodes);
        const double h = (hi - lo) / (s.nodes - 1);
        for (int k = 0; k < s.nodes; ++k) nodes[k] = lo + h * k;
        nodes.back() = hi;
        return {nodes, simpson_weights(s.nodes, lo, hi)};
    }
    auto [y, w] = gauss_hermite_nodes(s.nodes);
    const double r2 = std::numbers::sqrt2 * scale;
    for (std::size_t k = 0; k < y.size(); ++k) {
        y[k] = center + r2 * y[k];
        w[k] *= r2;
    }
    return {y, w};
}

}  // namespace detail

/// Materialise the nodes and weights of a spec for a field with the given hint.
template <int N>
QuadratureRule<N> make_rule(const QuadratureSpec<N>& spec, const Hint<N>& hint) {
    spec.validate();
    for (int i = 0; i < N; ++i) {
        if (!(detail::coord<N>(hint.scale, i) > 0.0) || !std::isfinite(detail::coord<N>(hint.center, i))) {
            throw ValidationError("quadrature: hint scale must be positive and centre finite");
        }
    }
    std::array<std::pair<std::vector<double>, std::vector<double>>, N> axes;
    for (int i = 0; i < N; ++i) {
        QuadSpec1 s1;
        s1.kind = spec.kind;
        s1.nodes = spec.nodes;
        s1.span = spec.span;
        double center = detail::coord<N>(hint.center, i), scale = detail::coord<N>(hint.scale, i);
        if (spec.weight) {
            center = detail::coord<N>(spec.weight->center, i);
            scale = detail::coord<N>(spec.weight->scale, i);
        }
        double lo = 0.0, hi = 0.0;
        if (spec.bounds) {
            lo = detail::coord<N>(spec.bounds->lower, i);
            hi = detail::coord<N>(spec.bounds->upper, i);
        }
        axes[i] = detail::axis_rule(s1, center, scale, lo, hi, spec.bounds.has_value());
    }
    QuadratureRule<N> rule;
    if constexpr (N == 1) {
        rule.nodes = std::move(axes[0].first);
        rule.weights = std::move(axes[0].second);
    } else {
        const auto& [x0, w0] = axes[0];
        const auto& [x1, w1] = axes[1];
        rule.nodes.reserve(x0.size() * x1.size());
        rule.weights.reserve(x0.size() * x1.size());
        for (std::size_t a = 0; a < x0.size(); ++a) {
            for (std::size_t b = 0; b < x1.size(); ++b) {
                rule.nodes.emplace_back(x0[a], x1[b]);
                rule.weights.push_back(w0[a] * w1[b]);
            }
        }
    }
    return rule;
}

/// Field values on the rule's nodes; throws DomainError at the first
/// non-finite value, naming the node.
template <int N>
Eigen::VectorXd sample(const ScalarField<N>& f, const QuadratureRule<N>& rule) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(rule.size()));
    for (std::size_t k = 0; k < rule.size(); ++k) {
        const double y = f(rule.nodes[k]);
        if (!std::isfinite(y)) {
            throw DomainError("integrand not finite at node " + std::to_string(k) + " (x = " +
                              detail::format_point<N>(rule.nodes[k]) + ")");
        }
        v(static_cast<Eigen::Index>(k)) = y;
    }
    return v;
}

template <int N>
Eigen::Map<const Eigen::VectorXd> weights_of(const QuadratureRule<N>& rule) {
    return {rule.weights.data(), static_cast<Eigen::Index>(rule.weights.size())};
}

template <int N>
double integrate(const ScalarField<N>& f, const QuadratureRule<N>& rule) {
    return weights_of(rule).dot(sample(f, rule));
}

template <int N>
double integrate(const ScalarField<N>& f, const QuadratureSpec<N>& spec = {}) {
    return integrate(f, make_rule(spec, f.hint()));
}

/// Integral plus a refinement estimate (difference against a rule with
/// 2n-1 nodes per axis).
template <int N>
std::pair<double, double> integrate_with_estimate(const ScalarField<N>& f, const QuadratureSpec<N>& spec = {}) {
    const double coarse = integrate(f, spec);
    QuadratureSpec<N> fine = spec;
    fine.nodes = 2 * spec.nodes - 1;
    const double refined = integrate(f, fine);
    return {refined, std::abs(refined - coarse)};
}

/// <f, g> on a node set covering both fields' hints. Symmetric exactly: the
/// node sequence does not depend on argument order.
template <int N>
double inner_product(const ScalarField<N>& f, const ScalarField<N>& g, const QuadratureSpec<N>& spec = {}) {
    const auto rule = make_rule(spec, hint_union(f.hint(), g.hint()));
    const Eigen::VectorXd a = sample(f, rule);
    const Eigen::VectorXd b = sample(g, rule);
    return weights_of(rule).dot(a.cwiseProduct(b));
}

template <int N>
double l2_norm(const ScalarField<N>& f, const QuadratureSpec<N>& spec = {}) {
    const auto rule = make_rule(spec, f.hint());
    const Eigen::VectorXd a = sample(f, rule);
    return std::sqrt(std::max(0.0, weights_of(rule).dot(a.cwiseProduct(a))));
}

/// Weighted inner product of node samples.
inline double dot_on(const Eigen::Ref<const Eigen::VectorXd>& w, const Eigen::Ref<const Eigen::VectorXd>& a,
                     const Eigen::Ref<const Eigen::VectorXd>& b) {
    return (w.array() * a.array() * b.array()).sum();
}

}  // namespace mpf
