#pragma once

// The simple mixture manifold: convex combinations of m+1 fixed densities,
// its constant L2 metric, tangent basis, and the Bayes basis update that keeps
// the correction step exact.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mpf/errors.hpp"
#include "mpf/gaussian.hpp"
#include "mpf/geometry.hpp"
#include "mpf/quad.hpp"

namespace mpf {

struct GaussianComponent {
    double mean = 0.0;
    double variance = 1.0;
};

/// Value, first and second derivative of a scalar function at one point.
struct Jet {
    double value = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
};

/// Likelihood Psi(x) together with what is known about its structure.
struct Likelihood {
    /// Psi(x) = exp(-(z - h(x))^2 / (2 r)).
    struct GaussianForm {
        double z = 0.0;
        double r = 1.0;
        std::shared_ptr<const Field1> map;
        /// h(x) = slope * x + offset, when the observation map is affine.
        std::optional<std::pair<double, double>> affine;
    };

    Field1 field;
    std::optional<GaussianForm> gaussian;

    /// Psi with no structure information: only the generic update path applies.
    static Likelihood general(Field1 psi) { return Likelihood{std::move(psi), std::nullopt}; }
};

/// One accumulated log-likelihood exponent of a basis density.
///
/// Gaussian factors that share an observation map and variance are stored as
/// sufficient statistics (count, sum z, sum z^2), so merging them is exact.
class LogFactor {
public:
    static LogFactor gaussian(std::shared_ptr<const Field1> map, double r, double z) {
        LogFactor f;
        f.map_ = std::move(map);
        f.r_ = r;
        f.count_ = 1.0;
        f.sum_z_ = z;
        f.sum_z2_ = z * z;
        return f;
    }

    static LogFactor general(Field1 psi) {
        LogFactor f;
        f.fields_.push_back(std::make_shared<const Field1>(std::move(psi)));
        return f;
    }

    bool is_gaussian() const { return static_cast<bool>(map_); }

    bool can_merge(const LogFactor& other) const {
        if (is_gaussian() != other.is_gaussian()) return false;
        return !is_gaussian() || (map_ == other.map_ && r_ == other.r_);
    }

    void merge(const LogFactor& other) {
        if (is_gaussian()) {
            count_ += other.count_;
            sum_z_ += other.sum_z_;
            sum_z2_ += other.sum_z2_;
        } else {
            fields_.insert(fields_.end(), other.fields_.begin(), other.fields_.end());
        }
    }

    double count() const { return is_gaussian() ? count_ : static_cast<double>(fields_.size()); }

    Jet jet(double x) const {
        if (is_gaussian()) {
            const double h = (*map_)(x);
            const double h1 = map_->gradient(x);
            const double h2 = map_->hessian(x);
            const double resid = count_ * h - sum_z_;
            return {-(count_ * h * h - 2.0 * h * sum_z_ + sum_z2_) / (2.0 * r_), -h1 * resid / r_,
                    -(h2 * resid + count_ * h1 * h1) / r_};
        }
        Jet out;
        for (const auto& f : fields_) {
            const double v = (*f)(x);
            if (!(v > 0.0)) {
                out.value = -std::numeric_limits<double>::infinity();
                continue;
            }
            const double g = f->gradient(x) / v;
            out.value += std::log(v);
            out.d1 += g;
            out.d2 += f->hessian(x) / v - g * g;
        }
        return out;
    }

private:
    std::shared_ptr<const Field1> map_;
    double r_ = 1.0;
    double count_ = 0.0, sum_z_ = 0.0, sum_z2_ = 0.0;
    std::vector<std::shared_ptr<const Field1>> fields_;
};

/// A normalized basis density q = exp(log base + sum of log factors + log_norm).
class BasisDensity {
public:
    /// Factor lists longer than this are compacted by merging compatible factors.
    static constexpr std::size_t kMaxFactors = 64;

    static BasisDensity gaussian(double mean, double variance) {
        if (!(variance > 0.0) || !std::isfinite(mean)) {
            throw ValidationError("basis density: Gaussian needs finite mean and positive variance");
        }
        BasisDensity b;
        b.base_ = GaussianComponent{mean, variance};
        b.hint_ = {mean, std::sqrt(variance)};
        return b;
    }

    /// A general base density; it must already be normalized.
    static BasisDensity from_field(Field1 base) {
        BasisDensity b;
        b.hint_ = base.hint();
        b.base_ = std::make_shared<const Field1>(std::move(base));
        return b;
    }

    /// Pure Gaussian (no accumulated likelihood factors).
    std::optional<GaussianComponent> as_gaussian() const {
        if (factors_.empty() && std::holds_alternative<GaussianComponent>(base_)) {
            return std::get<GaussianComponent>(base_);
        }
        return std::nullopt;
    }

    const std::vector<LogFactor>& factors() const { return factors_; }
    double log_norm() const { return log_norm_; }
    const Hint<1>& hint() const { return hint_; }

    /// log q and its first two derivatives.
    Jet log_jet(double x) const {
        Jet j;
        if (const auto* g = std::get_if<GaussianComponent>(&base_)) {
            const double d = x - g->mean;
            j = {normal_log_pdf(x, g->mean, g->variance), -d / g->variance, -1.0 / g->variance};
        } else {
            const auto& f = *std::get<std::shared_ptr<const Field1>>(base_);
            const double v = f(x);
            if (!(v > 0.0)) return {-std::numeric_limits<double>::infinity(), 0.0, 0.0};
            const double g1 = f.gradient(x) / v;
            j = {std::log(v), g1, f.hessian(x) / v - g1 * g1};
        }
        for (const auto& fac : factors_) {
            const Jet fj = fac.jet(x);
            j.value += fj.value;
            j.d1 += fj.d1;
            j.d2 += fj.d2;
        }
        j.value += log_norm_;
        return j;
    }

    /// q, q', q''.
    Jet jet(double x) const {
        const Jet l = log_jet(x);
        if (!(l.value > -745.0)) return {};
        const double q = std::exp(l.value);
        return {q, l.d1 * q, (l.d2 + l.d1 * l.d1) * q};
    }

    double operator()(double x) const { return jet(x).value; }

    Field1 field() const {
        auto self = std::make_shared<const BasisDensity>(*this);
        return Field1([self](double x) { return self->jet(x).value; }, hint_,
                      [self](double x) { return self->jet(x).d1; },
                      [self](double x) { return self->jet(x).d2; });
    }

    /// Copy of this density with one more likelihood factor and the given
    /// normalization and hint.
    BasisDensity with_factor(const LogFactor& factor, double log_norm, Hint<1> hint) const {
        BasisDensity b = *this;
        if (b.factors_.size() >= kMaxFactors) b.compact();
        bool merged = false;
        if (b.factors_.size() >= kMaxFactors) {
            for (auto& f : b.factors_) {
                if (f.can_merge(factor)) {
                    f.merge(factor);
                    merged = true;
                    break;
                }
            }
        }
        if (!merged) b.factors_.push_back(factor);
        b.log_norm_ = log_norm;
        b.hint_ = hint;
        return b;
    }

private:
    void compact() {
        std::vector<LogFactor> out;
        for (const auto& f : factors_) {
            auto it = std::find_if(out.begin(), out.end(), [&](const LogFactor& o) { return o.can_merge(f); });
            if (it == out.end()) {
                out.push_back(f);
            } else {
                it->merge(f);
            }
        }
        factors_ = std::move(out);
    }

    std::variant<GaussianComponent, std::shared_ptr<const Field1>> base_ = GaussianComponent{};
    std::vector<LogFactor> factors_;
    double log_norm_ = 0.0;
    Hint<1> hint_{};
};

/// Extended coordinates theta_hat = (theta_1..theta_m, 1 - sum theta).
/// The open simplex is required unless `allow_closure` is set.
inline Eigen::VectorXd extend_coords(const Eigen::VectorXd& theta, bool allow_closure = false) {
    if (theta.size() < 1) throw ValidationError("mixture coordinates: need m >= 1");
    double partial = 0.0;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        if (!std::isfinite(theta(i)) || theta(i) < 0.0) {
            throw ValidationError("mixture coordinates: theta[" + std::to_string(i) + "] = " +
                                  std::to_string(theta(i)) + " is negative");
        }
        partial += theta(i);
    }
    if (allow_closure ? partial > 1.0 + 1e-12 : partial >= 1.0) {
        throw ValidationError("mixture coordinates: sum of theta = " + std::to_string(partial) +
                              " leaves the simplex at index " + std::to_string(theta.size() - 1));
    }
    Eigen::VectorXd hat(theta.size() + 1);
    hat.head(theta.size()) = theta;
    hat(theta.size()) = std::max(0.0, 1.0 - partial);
    return hat;
}

/// (theta, 1 - sum theta) without any simplex check; for the algebra of
/// coefficient evaluation at intermediate points.
inline Eigen::VectorXd affine_hat(const Eigen::VectorXd& theta) {
    Eigen::VectorXd hat(theta.size() + 1);
    hat.head(theta.size()) = theta;
    hat(theta.size()) = 1.0 - theta.sum();
    return hat;
}

namespace detail {

inline Hint<1> union_hint(const std::vector<BasisDensity>& comps) {
    Hint<1> h = comps.front().hint();
    for (const auto& c : comps) h = hint_union(h, c.hint());
    return h;
}

/// Node rule covering every component, refined so the narrowest component
/// gets at least sixteen nodes per standard deviation.
inline Rule1 family_rule(const std::vector<BasisDensity>& comps, const QuadSpec1& spec) {
    const Hint<1> h = union_hint(comps);
    QuadSpec1 s = spec;
    if (s.kind == QuadratureKind::uniform_grid && !s.bounds) {
        double narrow = std::numeric_limits<double>::infinity();
        for (const auto& c : comps) narrow = std::min(narrow, c.hint().scale);
        const double width = 2.0 * s.span * h.scale;
        const int needed = static_cast<int>(std::ceil(width / (narrow / 16.0))) + 1;
        s.nodes = std::min(40001, std::max(s.nodes, needed | 1));
    }
    return make_rule(s, h);
}

}  // namespace detail

/// Direct L2 metric of the mixture manifold: h_ij = <q_i - q_{m+1}, q_j - q_{m+1}>,
/// from tangent vectors sampled on a shared rule.
inline MetricMatrix mixture_metric_from_samples(const Eigen::Ref<const Eigen::VectorXd>& w,
                                                const Eigen::Ref<const Eigen::MatrixXd>& tangents) {
    const Eigen::MatrixXd h = detail::weighted_gram(w, tangents);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h, Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > MetricMatrix::kMinEigenRatio * h.trace())) {
        throw DegenerateError("degenerate family: components are (nearly) affinely dependent in L2");
    }
    return MetricMatrix(h, "mixture");
}

/// The simple mixture family S(q) over m+1 basis densities. Immutable; the
/// metric, its factorization and node samples of every component are cached.
class MixtureFamily {
public:
    MixtureFamily(std::vector<BasisDensity> components, QuadSpec1 spec = {}, int generation = 0)
    {
        if (components.size() < 2) throw ValidationError("mixture family: need at least two components (m >= 1)");
        spec.validate();
        auto built = std::make_shared<Data>();
        auto& d = *built;
        d.components = std::move(components);
        d.spec = spec;
        d.generation = generation;
        d.rule = detail::family_rule(d.components, spec);
        const auto n = static_cast<Eigen::Index>(d.rule.size());
        const auto k = static_cast<Eigen::Index>(d.components.size());
        d.values.resize(n, k);
        d.d1.resize(n, k);
        d.d2.resize(n, k);
        for (Eigen::Index j = 0; j < k; ++j) {
            for (Eigen::Index i = 0; i < n; ++i) {
                const Jet q = d.components[static_cast<std::size_t>(j)].jet(d.rule.nodes[static_cast<std::size_t>(i)]);
                d.values(i, j) = q.value;
                d.d1(i, j) = q.d1;
                d.d2(i, j) = q.d2;
            }
        }
        if (!d.values.allFinite() || !d.d1.allFinite() || !d.d2.allFinite()) {
            throw DomainError("mixture family: component not finite on quadrature nodes");
        }
        const auto w = weights_of(d.rule);
        d.means.resize(k);
        d.second_moments.resize(k);
        Eigen::VectorXd x(n);
        for (Eigen::Index i = 0; i < n; ++i) x(i) = d.rule.nodes[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < k; ++j) {
            const double mass = w.dot(d.values.col(j));
            if (std::abs(mass - 1.0) > 1e-6) {
                throw ValidationError("mixture family: component " + std::to_string(j) + " integrates to " +
                                      std::to_string(mass) + ", not 1");
            }
            d.means(j) = dot_on(w, x, d.values.col(j));
            d.second_moments(j) = dot_on(w, x.cwiseProduct(x), d.values.col(j));
        }
        data_ = built;
        d.metric.emplace(mixture_metric_from_samples(w, tangents_on_nodes()));
    }

    /// Number of free coordinates m (one less than the number of components).
    int m() const { return static_cast<int>(data_->components.size()) - 1; }
    int size() const { return static_cast<int>(data_->components.size()); }
    int generation() const { return data_->generation; }
    const std::vector<BasisDensity>& components() const { return data_->components; }
    const BasisDensity& component(int i) const { return data_->components[static_cast<std::size_t>(i)]; }
    const MetricMatrix& metric() const { return *data_->metric; }
    const QuadSpec1& spec() const { return data_->spec; }
    const Rule1& rule() const { return data_->rule; }
    Eigen::Map<const Eigen::VectorXd> weights() const { return weights_of(data_->rule); }

    /// Component values / derivatives on the rule's nodes (nodes x (m+1)).
    const Eigen::MatrixXd& values() const { return data_->values; }
    const Eigen::MatrixXd& first_derivatives() const { return data_->d1; }
    const Eigen::MatrixXd& second_derivatives() const { return data_->d2; }
    const Eigen::VectorXd& component_means() const { return data_->means; }
    const Eigen::VectorXd& component_second_moments() const { return data_->second_moments; }

    /// u_i = q_i - q_{m+1} on nodes (nodes x m).
    Eigen::MatrixXd tangents_on_nodes() const { return tangents_of(data_->values); }
    Eigen::MatrixXd tangents_of(const Eigen::MatrixXd& cols) const {
        const int mm = m();
        return cols.leftCols(mm) - cols.col(mm).replicate(1, mm);
    }

    Eigen::VectorXd nodes() const {
        Eigen::VectorXd x(static_cast<Eigen::Index>(data_->rule.size()));
        for (std::size_t i = 0; i < data_->rule.size(); ++i) x(static_cast<Eigen::Index>(i)) = data_->rule.nodes[i];
        return x;
    }

    /// Mean and variance of theta_hat^T q from cached component moments.
    std::pair<double, double> moments(const Eigen::VectorXd& theta_hat) const {
        const double mean = theta_hat.dot(data_->means);
        const double second = theta_hat.dot(data_->second_moments);
        return {mean, second - mean * mean};
    }

private:
    struct Data {
        std::vector<BasisDensity> components;
        QuadSpec1 spec;
        int generation = 0;
        Rule1 rule;
        Eigen::MatrixXd values, d1, d2;
        Eigen::VectorXd means, second_moments;
        std::optional<MetricMatrix> metric;
    };
    std::shared_ptr<const Data> data_;
};

/// Constant metric of a set of components (independent of theta).
inline MetricMatrix mixture_metric(const std::vector<BasisDensity>& components, const QuadSpec1& spec = {}) {
    return MixtureFamily(components, spec).metric();
}

/// p(., theta) = theta_hat^T q with analytic derivatives. Points of the closed
/// simplex are accepted.
inline Field1 mixture_density(const MixtureFamily& fam, const Eigen::VectorXd& theta) {
    if (theta.size() != fam.m()) {
        throw ValidationError("mixture_density: theta has dimension " + std::to_string(theta.size()) +
                              ", family needs " + std::to_string(fam.m()));
    }
    const Eigen::VectorXd hat = extend_coords(theta, true);
    auto comps = std::make_shared<const std::vector<BasisDensity>>(fam.components());
    auto jet = [comps, hat](double x) {
        Jet s;
        for (std::size_t i = 0; i < comps->size(); ++i) {
            const double wi = hat(static_cast<Eigen::Index>(i));
            if (wi == 0.0) continue;
            const Jet q = (*comps)[i].jet(x);
            s.value += wi * q.value;
            s.d1 += wi * q.d1;
            s.d2 += wi * q.d2;
        }
        return s;
    };
    Hint<1> hint = detail::union_hint(fam.components());
    return Field1([jet](double x) { return jet(x).value; }, hint, [jet](double x) { return jet(x).d1; },
                  [jet](double x) { return jet(x).d2; });
}

/// Tangent vectors u_i = q_i - q_{m+1}, i = 1..m.
inline std::vector<Field1> tangent_basis(const MixtureFamily& fam) {
    std::vector<Field1> out;
    const Field1 last = fam.component(fam.m()).field();
    for (int i = 0; i < fam.m(); ++i) {
        out.push_back(linear_combination<1>({1.0, -1.0}, {fam.component(i).field(), last}));
    }
    return out;
}

struct BasisUpdate {
    MixtureFamily family;
    Eigen::VectorXd normalizers;  ///< c_i = 1 / int Psi q_i
    Eigen::VectorXd masses;       ///< int Psi q_i
};

namespace detail {

inline constexpr double kMinMass = 1e-300;
inline constexpr double kSupportLog = -39.1;  ///< log(1e-17)

/// Normalise exp(log base + factor) by quadrature, re-centring the hint at the
/// updated density's mean. The scale is the standard deviation, widened when
/// needed so the default box reaches every node within 1e-17 of the peak
/// (skewed posteriors keep long shoulders from the prior).
inline BasisDensity renormalize_with_factor(const BasisDensity& comp, const LogFactor& factor, const QuadSpec1& spec,
                                            int index, double& mass_out) {
    Hint<1> hint = comp.hint();
    double log_norm = comp.log_norm();
    double mass = 0.0;
    for (int pass = 0; pass < 3; ++pass) {
        QuadSpec1 s = spec;
        s.bounds.reset();
        const Rule1 rule = make_rule(s, hint_union(comp.hint(), hint));
        // Work in log space relative to the largest exponent on the grid.
        std::vector<double> logs(rule.size());
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < rule.size(); ++k) {
            logs[k] = comp.log_jet(rule.nodes[k]).value + factor.jet(rule.nodes[k]).value;
            if (std::isnan(logs[k])) throw DomainError("bayes update: likelihood not finite at node " + std::to_string(k));
            top = std::max(top, logs[k]);
        }
        if (!std::isfinite(top)) {
            throw StarvationError("bayes update: component " + std::to_string(index) + " receives no likelihood mass",
                                  index);
        }
        double m0 = 0.0, m1 = 0.0, m2 = 0.0;
        for (std::size_t k = 0; k < rule.size(); ++k) {
            const double v = rule.weights[k] * std::exp(logs[k] - top);
            m0 += v;
            m1 += v * rule.nodes[k];
            m2 += v * rule.nodes[k] * rule.nodes[k];
        }
        if (!(m0 > 0.0)) {
            throw StarvationError("bayes update: component " + std::to_string(index) + " receives no likelihood mass",
                                  index);
        }
        const double log_mass = std::log(m0) + top;
        mass = std::exp(log_mass);
        log_norm = comp.log_norm() - log_mass;
        const double mean = m1 / m0;
        const double var = std::max(m2 / m0 - mean * mean, 0.0);
        double reach = 0.0;
        for (std::size_t k = 0; k < rule.size(); ++k) {
            if (logs[k] - top > kSupportLog) reach = std::max(reach, std::abs(rule.nodes[k] - mean));
        }
        const Hint<1> next{mean, std::max(std::sqrt(var), reach / s.span)};
        if (!(next.scale > 0.0)) break;
        const bool settled = std::abs(next.center - hint.center) < 1e-3 * next.scale &&
                             std::abs(next.scale - hint.scale) < 1e-3 * next.scale;
        hint = next;
        if (settled) break;
    }
    if (!(mass > kMinMass)) {
        throw StarvationError("bayes update: component " + std::to_string(index) + " has vanishing likelihood mass " +
                                  std::to_string(mass),
                              index);
    }
    mass_out = mass;
    return comp.with_factor(factor, log_norm, hint);
}

}  // namespace detail

/// New basis q_i^n = c_i Psi q_i^{n-1}, with c_i = 1 / int Psi q_i^{n-1}.
///
/// Pure Gaussian components under an affine-Gaussian likelihood use the
/// conjugate closed form; anything else accumulates a log factor and is
/// renormalized by quadrature.
inline BasisUpdate bayes_update_basis(const MixtureFamily& fam, const Likelihood& psi) {
    std::vector<BasisDensity> next;
    next.reserve(fam.components().size());
    Eigen::VectorXd masses(fam.size());
    for (int i = 0; i < fam.size(); ++i) {
        const BasisDensity& comp = fam.component(i);
        const auto g = comp.as_gaussian();
        if (g && psi.gaussian && psi.gaussian->affine) {
            const auto [slope, offset] = *psi.gaussian->affine;
            const double r = psi.gaussian->r, z = psi.gaussian->z - offset;
            const double log_mass = 0.5 * std::log(2.0 * std::numbers::pi * r) +
                                    normal_log_pdf(z, slope * g->mean, slope * slope * g->variance + r);
            masses(i) = std::exp(log_mass);
            if (!(masses(i) > detail::kMinMass)) {
                throw StarvationError("bayes update: component " + std::to_string(i) + " has vanishing likelihood mass",
                                      i);
            }
            const double precision = 1.0 / g->variance + slope * slope / r;
            const double mean = (g->mean / g->variance + slope * z / r) / precision;
            next.push_back(BasisDensity::gaussian(mean, 1.0 / precision));
            continue;
        }
        const LogFactor factor = psi.gaussian ? LogFactor::gaussian(psi.gaussian->map, psi.gaussian->r, psi.gaussian->z)
                                              : LogFactor::general(psi.field);
        double mass = 0.0;
        next.push_back(detail::renormalize_with_factor(comp, factor, fam.spec(), i, mass));
        masses(i) = mass;
    }
    return {MixtureFamily(std::move(next), fam.spec(), fam.generation() + 1), masses.cwiseInverse(), masses};
}

/// How the mixture weights are carried across a basis update.
enum class WeightRule {
    /// theta_hat_i ∝ theta_hat_i^- / c_i: reproduces the Bayes posterior exactly.
    exact,
    /// Weights carried over unchanged (comparison runs only).
    literal,
};

/// Posterior coordinates after a basis update with normalizers c.
inline Eigen::VectorXd posterior_weights(const Eigen::VectorXd& prior_hat, const Eigen::VectorXd& normalizers,
                                         WeightRule rule = WeightRule::exact) {
    if (prior_hat.size() != normalizers.size() || prior_hat.size() < 2) {
        throw ValidationError("posterior_weights: dimension mismatch");
    }
    if ((normalizers.array() <= 0.0).any() || !normalizers.allFinite()) {
        throw ValidationError("posterior_weights: normalizing constants must be positive and finite");
    }
    const Eigen::Index m = prior_hat.size() - 1;
    if (rule == WeightRule::literal) return prior_hat.head(m);
    const Eigen::VectorXd raw = prior_hat.cwiseQuotient(normalizers);
    const double total = raw.sum();
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw DegenerateError("posterior_weights: all posterior weights vanish");
    }
    return (raw / total).head(m);
}

}  // namespace mpf
