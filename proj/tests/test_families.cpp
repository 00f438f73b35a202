#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mpf/dynamics.hpp"
#include "mpf/errors.hpp"
#include "mpf/families.hpp"

using namespace mpf;

namespace {

struct Comp {
    double m, v;
};

// <N(m1, v1), N(m2, v2)> = N(m1 - m2; 0, v1 + v2)
double gauss_inner(const Comp& a, const Comp& b) { return normal_pdf(a.m - b.m, 0.0, a.v + b.v); }

Eigen::MatrixXd closed_metric(const std::vector<Comp>& c) {
    const int m = static_cast<int>(c.size()) - 1;
    Eigen::MatrixXd h(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            h(i, j) = gauss_inner(c[i], c[j]) - gauss_inner(c[i], c[m]) - gauss_inner(c[m], c[j]) +
                      gauss_inner(c[m], c[m]);
        }
    }
    return h;
}

std::vector<BasisDensity> basis(const std::vector<Comp>& c) {
    std::vector<BasisDensity> out;
    for (const auto& x : c) out.push_back(BasisDensity::gaussian(x.m, x.v));
    return out;
}

}  // namespace

TEST(Families, MetricMatchesGaussianInnerProducts) {
    const std::vector<Comp> c{{-1.0, 0.5}, {1.0, 0.5}, {0.0, 2.0}, {0.3, 0.1}};
    const MixtureFamily fam(basis(c));
    EXPECT_EQ(fam.m(), 3);
    const Eigen::MatrixXd closed = closed_metric(c);
    EXPECT_LT((fam.metric().values() - closed).cwiseAbs().maxCoeff(), 1e-9 * closed.cwiseAbs().maxCoeff());
    // independent of theta: evaluated once, same object through mixture_metric
    EXPECT_LT((mixture_metric(basis(c)).values() - closed).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Families, TangentBasisIsComponentDifference) {
    const MixtureFamily fam(basis({{-1.0, 0.5}, {1.0, 0.5}, {0.0, 1.0}}));
    const auto t = tangent_basis(fam);
    ASSERT_EQ(t.size(), 2u);
    for (double x : {-2.0, -0.3, 0.0, 1.7}) {
        EXPECT_NEAR(t[0](x), normal_pdf(x, -1.0, 0.5) - normal_pdf(x, 0.0, 1.0), 1e-15);
        EXPECT_NEAR(t[1](x), normal_pdf(x, 1.0, 0.5) - normal_pdf(x, 0.0, 1.0), 1e-15);
    }
    const Eigen::MatrixXd h = fam.metric().values();
    EXPECT_NEAR(inner_product(t[0], t[1]), h(0, 1), 1e-9);
}

TEST(Families, MixtureDensityAndMoments) {
    const MixtureFamily fam(basis({{-1.0, 0.5}, {1.0, 0.25}, {0.0, 2.0}}));
    Eigen::VectorXd th(2);
    th << 0.2, 0.5;
    const Field1 p = mixture_density(fam, th);
    for (double x : {-1.5, 0.0, 0.8}) {
        EXPECT_NEAR(p(x), 0.2 * normal_pdf(x, -1, 0.5) + 0.5 * normal_pdf(x, 1, 0.25) + 0.3 * normal_pdf(x, 0, 2),
                    1e-15);
    }
    EXPECT_NEAR(integrate(p), 1.0, 1e-10);
    const auto [mean, var] = fam.moments(extend_coords(th));
    const double em = 0.2 * -1 + 0.5 * 1 + 0.3 * 0;
    const double e2 = 0.2 * 1.5 + 0.5 * 1.25 + 0.3 * 2.0;
    EXPECT_NEAR(mean, em, 1e-10);
    EXPECT_NEAR(var, e2 - em * em, 1e-10);
}

TEST(Families, ExtendedCoordinatesAndSimplex) {
    Eigen::VectorXd th(2);
    th << 0.25, 0.5;
    const Eigen::VectorXd hat = extend_coords(th);
    EXPECT_DOUBLE_EQ(hat(2), 0.25);
    th << 0.5, 0.5;
    EXPECT_THROW(extend_coords(th), ValidationError);
    EXPECT_NO_THROW(extend_coords(th, true));
    th << -0.1, 0.5;
    EXPECT_THROW(extend_coords(th), ValidationError);
    const MixtureFamily fam(basis({{-1.0, 0.5}, {1.0, 0.5}}));
    EXPECT_THROW(mixture_density(fam, th), ValidationError);
}

TEST(Families, DegenerateAndInvalidBases) {
    EXPECT_THROW(MixtureFamily(basis({{0.0, 1.0}})), ValidationError);
    EXPECT_THROW(MixtureFamily(basis({{0.0, 1.0}, {0.0, 1.0}})), DegenerateError);
    EXPECT_THROW(BasisDensity::gaussian(0.0, 0.0), ValidationError);
    const Field1 half([](double x) { return 0.5 * normal_pdf(x, 0.0, 1.0); }, Hint<1>{0.0, 1.0});
    std::vector<BasisDensity> bad{BasisDensity::from_field(half), BasisDensity::gaussian(1.0, 1.0)};
    EXPECT_THROW(MixtureFamily{bad}, ValidationError);
}

TEST(Families, ConjugateUpdateMatchesQuadrature) {
    const MixtureFamily fam(basis({{-1.0, 0.5}, {1.0, 0.5}, {0.0, 2.0}}));
    const auto obs = DiscreteObsModel::linear(2.0, 0.3);
    const Likelihood psi = likelihood(0.7, obs);
    const BasisUpdate closed = bayes_update_basis(fam, psi);
    const BasisUpdate generic = bayes_update_basis(fam, Likelihood::general(psi.field));
    for (int i = 0; i < fam.size(); ++i) {
        ASSERT_TRUE(closed.family.component(i).as_gaussian());
        EXPECT_FALSE(generic.family.component(i).as_gaussian());
        EXPECT_NEAR(closed.masses(i), generic.masses(i), 1e-9 * closed.masses(i));
        for (double x : {-1.0, 0.0, 0.35, 1.0}) {
            EXPECT_NEAR(closed.family.component(i)(x), generic.family.component(i)(x), 1e-8);
        }
        const auto g = *fam.component(i).as_gaussian();
        // precision adds slope^2 / r
        const double post_v = 1.0 / (1.0 / g.variance + 4.0 / 0.3);
        EXPECT_NEAR(closed.family.component(i).as_gaussian()->variance, post_v, 1e-14);
    }
    EXPECT_EQ(closed.family.generation(), 1);
}

TEST(Families, ExactWeightsReproduceBayesPosterior) {
    const MixtureFamily fam(basis({{-1.0, 0.5}, {1.0, 0.5}, {0.0, 2.0}}));
    Eigen::VectorXd th(2);
    th << 0.3, 0.45;
    const auto obs = DiscreteObsModel::cubic(1.0);
    const Likelihood psi = likelihood(0.5, obs);
    const BasisUpdate up = bayes_update_basis(fam, psi);
    const Eigen::VectorXd post = posterior_weights(extend_coords(th), up.normalizers);
    const Field1 prior = mixture_density(fam, th);
    const Field1 unnorm([&](double x) { return psi.field(x) * prior(x); }, prior.hint());
    const double z = integrate(unnorm);
    const Field1 p = mixture_density(up.family, post);
    for (double x : {-1.2, -0.4, 0.0, 0.6, 1.1}) EXPECT_NEAR(p(x), unnorm(x) / z, 1e-8);
    const Eigen::VectorXd lit = posterior_weights(extend_coords(th), up.normalizers, WeightRule::literal);
    EXPECT_EQ(lit, th);
}

TEST(Families, RepeatedGaussianFactorsMergeExactly) {
    const std::vector<BasisDensity> start{BasisDensity::from_field(gaussian_field(0.0, 1.0)),
                                          BasisDensity::from_field(gaussian_field(1.0, 1.0))};
    MixtureFamily fam(start);
    const auto obs = DiscreteObsModel::cubic(2.0);
    const int n = static_cast<int>(BasisDensity::kMaxFactors) + 6;
    std::vector<double> zs;
    for (int k = 0; k < n; ++k) zs.push_back(0.1 * std::sin(0.7 * k));
    for (double z : zs) fam = bayes_update_basis(fam, likelihood(z, obs)).family;
    EXPECT_LE(fam.component(0).factors().size(), BasisDensity::kMaxFactors);
    double count = 0.0;
    for (const auto& f : fam.component(0).factors()) count += f.count();
    EXPECT_DOUBLE_EQ(count, n);
    // product of all likelihoods times the base, normalized by quadrature
    auto log_un = [&](double x) {
        double s = normal_log_pdf(x, 0.0, 1.0);
        for (double z : zs) s -= 0.5 * (z - x * x * x) * (z - x * x * x) / 2.0;
        return s;
    };
    const Field1 un([&](double x) { return std::exp(log_un(x)); }, Hint<1>{0.0, 0.5});
    const double z = integrate(un);
    for (double x : {-0.3, 0.0, 0.2}) EXPECT_NEAR(fam.component(0)(x), un(x) / z, 1e-6 * un(x) / z);
}

TEST(Families, SkewedPosteriorStaysNormalized) {
    const MixtureFamily fam(basis({{-1.0, 0.5}, {1.0, 0.5}}));
    const auto obs = DiscreteObsModel::cubic(4.0);
    MixtureFamily cur = fam;
    for (double z : {0.8, 1.5, -0.2, 2.5}) cur = bayes_update_basis(cur, likelihood(z, obs)).family;
    for (int i = 0; i < cur.size(); ++i) {
        EXPECT_NEAR(cur.weights().dot(cur.values().col(i)), 1.0, 1e-8);
    }
}

TEST(Families, StarvedComponentIsReported) {
    const MixtureFamily fam(basis({{-1.0, 0.01}, {1.0, 0.01}}));
    const Field1 far([](double x) { return x < 5.0 ? 0.0 : 1.0; }, Hint<1>{6.0, 1.0});
    try {
        bayes_update_basis(fam, Likelihood::general(far));
        FAIL() << "expected starvation";
    } catch (const StarvationError& e) {
        EXPECT_EQ(e.component(), 0);
    }
}

TEST(Families, PosteriorWeightValidation) {
    Eigen::VectorXd hat(3), c(3);
    hat << 0.2, 0.3, 0.5;
    c << 1.0, -1.0, 1.0;
    EXPECT_THROW(posterior_weights(hat, c), ValidationError);
    EXPECT_THROW(posterior_weights(hat, Eigen::VectorXd::Ones(2)), ValidationError);
    c << 2.0, 1.0, 4.0;
    const Eigen::VectorXd w = posterior_weights(hat, c);
    const double total = 0.1 + 0.3 + 0.125;
    EXPECT_NEAR(w(0), 0.1 / total, 1e-15);
    EXPECT_NEAR(w(1), 0.3 / total, 1e-15);
}
