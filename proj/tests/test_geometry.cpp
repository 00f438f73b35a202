#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "mpf/errors.hpp"
#include "mpf/gaussian.hpp"
#include "mpf/geometry.hpp"

using namespace mpf;

namespace {

double gaussian_kl(double m1, double v1, double m2, double v2) {
    return 0.5 * (std::log(v2 / v1) + (v1 + (m1 - m2) * (m1 - m2)) / v2 - 1.0);
}

Eigen::VectorXd vec2(double a, double b) {
    Eigen::VectorXd v(2);
    v << a, b;
    return v;
}

}  // namespace

TEST(Geometry, KlMatchesGaussianClosedForm) {
    const double kl = kl_divergence(gaussian_field(0.3, 0.8), gaussian_field(-0.5, 1.7));
    EXPECT_NEAR(kl, gaussian_kl(0.3, 0.8, -0.5, 1.7), 1e-9);
    EXPECT_NEAR(kl_divergence(gaussian_field(1.0, 2.0), gaussian_field(1.0, 2.0)), 0.0, 1e-12);
}

TEST(Geometry, HellingerMatchesBhattacharyya) {
    const double m1 = 0.0, v1 = 1.0, m2 = 1.5, v2 = 0.5;
    const double bc = std::sqrt(2.0 * std::sqrt(v1 * v2) / (v1 + v2)) * std::exp(-(m1 - m2) * (m1 - m2) / (4.0 * (v1 + v2)));
    const double h = hellinger_distance(gaussian_field(m1, v1), gaussian_field(m2, v2));
    EXPECT_NEAR(h * h, 2.0 - 2.0 * bc, 1e-9);
}

TEST(Geometry, L2DistanceFromGaussianProducts) {
    const double m1 = -0.4, v1 = 0.6, m2 = 0.9, v2 = 1.3;
    const double sq = normal_pdf(0.0, 0.0, 2 * v1) + normal_pdf(0.0, 0.0, 2 * v2) - 2.0 * normal_pdf(m1 - m2, 0.0, v1 + v2);
    EXPECT_NEAR(l2_distance(gaussian_field(m1, v1), gaussian_field(m2, v2)), std::sqrt(sq), 1e-9);
}

TEST(Geometry, DistancesRejectNegativeDensities) {
    const Field1 neg([](double x) { return -normal_pdf(x, 0.0, 1.0); }, Hint<1>{0.0, 1.0});
    EXPECT_THROW(l2_distance(neg, gaussian_field(0.0, 1.0)), DomainError);
    EXPECT_THROW(hellinger_distance(gaussian_field(0.0, 1.0), neg), DomainError);
}

TEST(Geometry, FisherMetricCanonicalMatchesQuadrature) {
    const auto fam = gaussian_canonical_family();
    for (const auto& [m, v] : {std::pair{0.0, 1.0}, std::pair{1.2, 0.4}, std::pair{-2.0, 3.0}}) {
        const Eigen::Vector2d th = canonical_from_moments(m, v);
        const auto closed = gaussian_fisher_canonical(th(0), th(1)).values();
        const auto quad = fisher_metric(fam, Eigen::VectorXd(th)).values();
        EXPECT_LT((closed - quad).cwiseAbs().maxCoeff(), 1e-7 * closed.cwiseAbs().maxCoeff()) << m << " " << v;
    }
}

TEST(Geometry, FisherMetricIsCovarianceOfSufficientStatistics) {
    // Cov(x, x^2) for N(m, v): Var x = v, Cov = 2 m v, Var x^2 = 2 v^2 + 4 m^2 v
    const double m = 0.7, v = 1.9;
    const Eigen::Vector2d th = canonical_from_moments(m, v);
    const auto g = gaussian_fisher_canonical(th(0), th(1));
    EXPECT_NEAR(g(0, 0), v, 1e-12);
    EXPECT_NEAR(g(0, 1), 2 * m * v, 1e-12);
    EXPECT_NEAR(g(1, 1), 2 * v * v + 4 * m * m * v, 1e-12);
}

TEST(Geometry, FisherPullbackToExpectationChart) {
    const double m = -0.6, v = 0.75;
    const Eigen::Vector2d th = canonical_from_moments(m, v);
    const auto pulled = change_coordinates_metric(gaussian_fisher_canonical(th(0), th(1)), canonical_jacobian(m, v),
                                                  "expectation");
    EXPECT_EQ(pulled.chart(), "expectation");
    EXPECT_LT((pulled.values() - gaussian_fisher_expectation(m, v).values()).cwiseAbs().maxCoeff(), 1e-12);
    const auto quad = fisher_metric(gaussian_expectation_family(), vec2(m, v)).values();
    EXPECT_LT((quad - pulled.values()).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Geometry, HellingerGramIsQuarterFisher) {
    const auto fam = gaussian_expectation_family();
    const auto theta = vec2(0.2, 1.4);
    const Eigen::MatrixXd e = hellinger_tangent_gram(fam, theta);
    const Eigen::MatrixXd g = fisher_metric(fam, theta).values();
    EXPECT_LT((4.0 * e - g).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Geometry, L2MetricBothChartsAgreeWithQuadrature) {
    const double m = 0.4, v = 0.9;
    const Eigen::Vector2d th = canonical_from_moments(m, v);
    const auto can = gaussian_l2_canonical(th(0), th(1)).values();
    const auto can_q = l2_metric(gaussian_canonical_family(), Eigen::VectorXd(th)).values();
    EXPECT_LT((can - can_q).cwiseAbs().maxCoeff(), 1e-8 * can.cwiseAbs().maxCoeff());

    const auto ex = gaussian_l2_expectation(m, v).values();
    const auto ex_q = l2_metric(gaussian_expectation_family(), vec2(m, v)).values();
    EXPECT_LT((ex - ex_q).cwiseAbs().maxCoeff(), 1e-8 * ex.cwiseAbs().maxCoeff());

    const auto pulled = change_coordinates_metric(gaussian_l2_canonical(th(0), th(1)), canonical_jacobian(m, v));
    EXPECT_LT((pulled.values() - ex).cwiseAbs().maxCoeff(), 1e-12 * ex.cwiseAbs().maxCoeff());
}

TEST(Geometry, MeanEntryOfL2ExpectationMetric) {
    // int (d/dmu N)^2 dx = E[(x - mu)^2 / v^2 * N] = 1/(4 v sqrt(pi v))
    for (double v : {0.25, 1.0, 4.0}) {
        const Field1 d([v](double x) {
            const double p = normal_pdf(x, 0.0, v);
            return x / v * p;
        }, Hint<1>{0.0, std::sqrt(v)});
        const double direct = inner_product(d, d);
        EXPECT_NEAR(gaussian_l2_expectation(0.0, v)(0, 0), direct, 1e-9 * direct);
        EXPECT_NEAR(halved_l2_expectation_mumu(v), 0.5 * direct, 1e-9 * direct);
    }
}

TEST(Geometry, KlQuadraticRemainderIsThirdOrder) {
    const auto fam = gaussian_expectation_family();
    const auto theta = vec2(0.0, 1.0);
    const Eigen::VectorXd dir = vec2(0.6, -0.3);
    double prev = 0.0;
    for (int k = 0; k < 4; ++k) {
        const double eps = 0.1 / std::pow(2.0, k);
        const double r = kl_quadratic_remainder(fam, theta, Eigen::VectorXd(eps * dir));
        const double quad = 0.5 * (eps * dir).dot(gaussian_fisher_expectation(0.0, 1.0).values() * (eps * dir));
        EXPECT_LT(std::abs(r), 0.5 * eps * quad) << "eps " << eps;
        if (k > 0) {
            EXPECT_NEAR(r / prev, 0.125, 0.03);
        }
        prev = r;
    }
    EXPECT_EQ(kl_quadratic_remainder(fam, theta, vec2(0.0, 0.0)), 0.0);
}

TEST(Geometry, ProjectionsReproduceTangentVectors) {
    const auto fam = gaussian_expectation_family();
    const auto theta = vec2(0.5, 0.7);
    for (int i = 0; i < 2; ++i) {
        const Eigen::VectorXd c = project_l2(fam.tangent_field(theta, i), fam, theta);
        EXPECT_NEAR(c(i), 1.0, 1e-9);
        EXPECT_NEAR(c(1 - i), 0.0, 1e-9);
        const auto p = fam.density_field(theta);
        const auto t = fam.tangent_field(theta, i);
        const Field1 root([p, t](double x) { return t(x) / (2.0 * std::sqrt(p(x))); }, p.hint());
        const Eigen::VectorXd f = project_fisher(root, fam, theta);
        EXPECT_NEAR(f(i), 1.0, 1e-7);
        EXPECT_NEAR(f(1 - i), 0.0, 1e-7);
    }
}

TEST(Geometry, L2ProjectionResidualIsOrthogonal) {
    const auto fam = gaussian_expectation_family();
    const auto theta = vec2(0.0, 1.0);
    const Field1 v([](double x) { return std::sin(x) * normal_pdf(x, 0.3, 1.0); }, Hint<1>{0.0, 1.5});
    const Eigen::VectorXd c = project_l2(v, fam, theta);
    const Field1 resid = linear_combination<1>({1.0, -c(0), -c(1)},
                                               {v, fam.tangent_field(theta, 0), fam.tangent_field(theta, 1)});
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(inner_product(resid, fam.tangent_field(theta, i)), 0.0, 1e-10);
}

TEST(Geometry, ChartAndMetricValidation) {
    EXPECT_THROW(moments_from_canonical(0.0, 0.5), ValidationError);
    EXPECT_THROW(canonical_from_moments(0.0, -1.0), ValidationError);
    EXPECT_THROW(gaussian_l2_expectation(0.0, 0.0), ValidationError);
    Eigen::Matrix2d sing;
    sing << 1, 2, 2, 4;
    EXPECT_THROW(MetricMatrix(Eigen::MatrixXd(sing)), DegenerateError);
    EXPECT_THROW(change_coordinates_metric(gaussian_fisher_expectation(0, 1), Eigen::MatrixXd(sing)), ValidationError);
    EXPECT_THROW(fisher_metric(gaussian_expectation_family(), vec2(0.0, -1.0)), ValidationError);
    const auto m = moments_from_canonical(2.0, -0.25);
    EXPECT_DOUBLE_EQ(m.mean, 4.0);
    EXPECT_DOUBLE_EQ(m.variance, 2.0);
}
