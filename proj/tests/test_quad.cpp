#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "mpf/errors.hpp"
#include "mpf/gaussian.hpp"
#include "mpf/quad.hpp"

using namespace mpf;

TEST(Quad, SimpsonIsExactForCubics) {
    for (int n : {5, 6, 9, 10}) {
        const auto w = simpson_weights(n, -1.0, 2.0);
        const double h = 3.0 / (n - 1);
        double s = 0.0;
        for (int k = 0; k < n; ++k) {
            const double x = -1.0 + h * k;
            s += w[k] * (x * x * x - 2.0 * x + 1.0);
        }
        // int_{-1}^{2} x^3 - 2x + 1 = (16 - 1)/4 - (4 - 1) + 3
        EXPECT_NEAR(s, 3.75, 1e-12) << "n = " << n;
    }
}

TEST(Quad, GaussHermiteMoments) {
    const auto [y, w] = gauss_hermite_nodes(20);
    double m0 = 0.0, m2 = 0.0, m4 = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        const double e = std::exp(-y[k] * y[k]);
        m0 += w[k] * e;
        m2 += w[k] * e * y[k] * y[k];
        m4 += w[k] * e * std::pow(y[k], 4);
    }
    const double rp = std::sqrt(std::numbers::pi);
    EXPECT_NEAR(m0, rp, 1e-12);
    EXPECT_NEAR(m2, rp / 2.0, 1e-12);
    EXPECT_NEAR(m4, 3.0 * rp / 4.0, 1e-12);
    for (std::size_t k = 1; k < y.size(); ++k) EXPECT_LT(y[k - 1], y[k]);
}

TEST(Quad, GaussianIntegratesToOneOnBothRules) {
    const Field1 g = gaussian_field(0.7, 2.5);
    EXPECT_NEAR(integrate(g), 1.0, 1e-10);
    EXPECT_NEAR(integrate(g, QuadSpec1::gauss_hermite(40)), 1.0, 1e-12);
    const auto [v, est] = integrate_with_estimate(g);
    EXPECT_NEAR(v, 1.0, 1e-10);
    EXPECT_LT(est, 1e-8);
}

TEST(Quad, SecondMomentOfGaussian) {
    const Field1 g = gaussian_field(1.0, 0.5);
    const Field1 x2([&](double x) { return x * x * g(x); }, g.hint());
    // E x^2 = v + mu^2
    EXPECT_NEAR(integrate(x2), 1.5, 1e-10);
}

TEST(Quad, TwoDimensionalGaussian) {
    const Field2 g = gaussian_field2(Eigen::Vector2d(0.5, -1.0), Eigen::Vector2d(1.0, 0.25));
    QuadSpec2 spec;
    spec.nodes = 201;
    EXPECT_NEAR(integrate(g, spec), 1.0, 1e-8);
}

TEST(Quad, InnerProductIsSymmetricAndMatchesClosedForm) {
    const Field1 a = gaussian_field(-1.0, 1.0), b = gaussian_field(1.0, 1.0);
    const double ab = inner_product(a, b), ba = inner_product(b, a);
    EXPECT_EQ(ab, ba);
    // <N(m1, v1), N(m2, v2)> = N(m1 - m2; 0, v1 + v2)
    EXPECT_NEAR(ab, normal_pdf(2.0, 0.0, 2.0), 1e-10);
    EXPECT_NEAR(l2_norm(a), std::sqrt(normal_pdf(0.0, 0.0, 2.0)), 1e-10);
}

TEST(Quad, LinearCombinationKeepsAnalyticDerivatives) {
    const Field1 f = linear_combination<1>({2.0, -1.0}, {gaussian_field(0.0, 1.0), gaussian_field(1.0, 0.5)});
    ASSERT_TRUE(f.has_gradient());
    ASSERT_TRUE(f.has_hessian());
    const double x = 0.3, h = 1e-5;
    EXPECT_NEAR(f.gradient(x), (f(x + h) - f(x - h)) / (2 * h), 1e-8);
    EXPECT_NEAR(f.hessian(x), (f(x + 1e-4) - 2 * f(x) + f(x - 1e-4)) / 1e-8, 1e-6);
    EXPECT_NEAR(integrate(f), 1.0, 1e-10);
}

TEST(Quad, FiniteDifferenceFallback) {
    const Field1 f([](double x) { return std::sin(x); }, Hint<1>{0.0, 1.0});
    EXPECT_FALSE(f.has_gradient());
    EXPECT_NEAR(f.gradient(0.4), std::cos(0.4), 1e-9);
    EXPECT_NEAR(f.hessian(0.4), -std::sin(0.4), 1e-6);
}

TEST(Quad, NonFiniteIntegrandNamesTheNode) {
    const Field1 bad([](double x) { return x > 0.5 ? std::nan("") : 1.0; }, Hint<1>{0.0, 0.2});
    try {
        integrate(bad);
        FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("node"), std::string::npos);
    }
}

TEST(Quad, SpecValidation) {
    QuadSpec1 s;
    s.nodes = 4;
    EXPECT_THROW(s.validate(), ValidationError);
    s = QuadSpec1::grid(Box<1>{1.0, -1.0});
    EXPECT_THROW(s.validate(), ValidationError);
    EXPECT_THROW(make_rule(QuadSpec1{}, Hint<1>{0.0, -1.0}), ValidationError);
}

TEST(Quad, ExplicitBoundsAreHonoured) {
    const auto rule = make_rule(QuadSpec1::grid(Box<1>{-2.0, 3.0}, 11), Hint<1>{});
    ASSERT_EQ(rule.size(), 11u);
    EXPECT_DOUBLE_EQ(rule.nodes.front(), -2.0);
    EXPECT_DOUBLE_EQ(rule.nodes.back(), 3.0);
    double total = 0.0;
    for (double w : rule.weights) total += w;
    EXPECT_NEAR(total, 5.0, 1e-13);
}

TEST(Quad, HintUnionCoversBoth) {
    const Hint<1> h = hint_union(Hint<1>{-5.0, 1.0}, Hint<1>{5.0, 0.1});
    EXPECT_LE(h.center - 10.0 * h.scale, -15.0 + 1e-12);
    EXPECT_GE(h.center + 10.0 * h.scale, 6.0 - 1e-12);
}
