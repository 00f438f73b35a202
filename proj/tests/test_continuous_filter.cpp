#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mpf/continuous_filter.hpp"
#include "mpf/errors.hpp"

using namespace mpf;

namespace {

struct Comp {
    double m, v;
};

const std::vector<Comp> kBasis{{-0.7, 0.3}, {0.7, 0.3}, {0.0, 1.0}};

MixtureFamily family_of(const std::vector<Comp>& c) {
    std::vector<BasisDensity> out;
    for (const auto& x : c) out.push_back(BasisDensity::gaussian(x.m, x.v));
    return MixtureFamily(std::move(out));
}

Eigen::VectorXd vec(std::initializer_list<double> xs) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

// h^{-1} <v, u_j> with v and u_j as independent quadrature fields
Eigen::VectorXd project_field(const MixtureFamily& fam, const Field1& v) {
    const auto u = tangent_basis(fam);
    Eigen::VectorXd rhs(fam.m());
    QuadSpec1 spec;
    spec.nodes = 4001;
    for (int j = 0; j < fam.m(); ++j) rhs(j) = inner_product(v, u[static_cast<std::size_t>(j)], spec);
    return fam.metric().solve(rhs);
}

}  // namespace

TEST(ContinuousFilter, MomentTensorsForLinearSensor) {
    const MixtureFamily fam = family_of(kBasis);
    const auto co = assemble_sde_coefficients(fam, linear_ou(1.0, 1.0), ContinuousObsModel::linear(0.5));
    ASSERT_EQ(co.d(), 1);
    for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(co.beta[0](k), 0.5 * kBasis[k].m, 1e-10);
        EXPECT_NEAR(co.delta(k), 0.25 * (kBasis[k].v + kBasis[k].m * kBasis[k].m), 1e-10);
    }
    // h G = <u_j, q_k> = N(mj - mk; 0, vj + vk) - N(m3 - mk; 0, v3 + vk)
    Eigen::MatrixXd hg(2, 3);
    for (int j = 0; j < 2; ++j) {
        for (int k = 0; k < 3; ++k) {
            hg(j, k) = normal_pdf(kBasis[j].m - kBasis[k].m, 0.0, kBasis[j].v + kBasis[k].v) -
                       normal_pdf(kBasis[2].m - kBasis[k].m, 0.0, kBasis[2].v + kBasis[k].v);
        }
    }
    EXPECT_LT((fam.metric().values() * co.G - hg).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ContinuousFilter, DriftAndDiffusionAreProjections) {
    const MixtureFamily fam = family_of(kBasis);
    const auto model = bimodal_drift(0.6);
    const auto obs = ContinuousObsModel::cubic();
    const auto co = assemble_sde_coefficients(fam, model, obs);
    const Eigen::VectorXd theta = vec({0.25, 0.4});
    const Field1 p = mixture_density(fam, theta);
    QuadSpec1 spec;
    spec.nodes = 4001;
    const Field1 g0 = gamma0(p, obs, 0.0, spec);
    const Field1 g1 = gammak(p, obs, 0, 0.0, spec);
    const Field1 lstar([&](double x) {
        return forward_operator_at(model, 0.0, x, Jet{p(x), p.gradient(x), p.hessian(x)}) - g0(x);
    }, p.hint());
    const Eigen::VectorXd drift = project_field(fam, lstar);
    const Eigen::VectorXd diff = project_field(fam, g1);
    EXPECT_LT((co.drift(theta) - drift).cwiseAbs().maxCoeff(), 1e-7 * drift.cwiseAbs().maxCoeff());
    EXPECT_LT((co.diffusion(theta).col(0) - diff).cwiseAbs().maxCoeff(), 1e-7 * diff.cwiseAbs().maxCoeff());
}

TEST(ContinuousFilter, ResidualVanishesWhenEverythingIsTangent) {
    // no dynamics and a constant sensor: L* p = 0 and gamma terms vanish
    const MixtureFamily fam = family_of(kBasis);
    const auto r = projection_residual(fam, vec({0.3, 0.3}), DiffusionModel::zero(), ContinuousObsModel::constant(2.0));
    EXPECT_NEAR(r.drift, 0.0, 1e-14);
    EXPECT_NEAR(r.diffusion(0), 0.0, 1e-14);
    const auto co = assemble_sde_coefficients(fam, DiffusionModel::zero(), ContinuousObsModel::constant(2.0));
    const auto out = stratonovich_step(vec({0.3, 0.3}), co, vec({0.7}), 0.01);
    EXPECT_LT((out.theta - vec({0.3, 0.3})).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(ContinuousFilter, HeunStepIsSecondOrderInDeterministicCase) {
    const MixtureFamily fam = family_of(kBasis);
    const auto co = assemble_sde_coefficients(fam, linear_ou(1.0, 1.0), ContinuousObsModel::linear(0.5));
    const Eigen::VectorXd th0 = vec({0.3, 0.3});
    auto run = [&](int n) {
        Eigen::VectorXd th = th0;
        for (int i = 0; i < n; ++i) th = stratonovich_step(th, co, vec({0.0}), 0.2 / n).theta;
        return th;
    };
    const Eigen::VectorXd ref = run(2000);
    const double e1 = (run(10) - ref).norm(), e2 = (run(20) - ref).norm();
    EXPECT_NEAR(e1 / e2, 4.0, 0.4);
}

TEST(ContinuousFilter, SimulationIsDeterministicPerSeed) {
    const auto model = linear_ou(1.0, 1.0);
    const auto obs = ContinuousObsModel::linear(0.5);
    const auto a = simulate_truth_and_observations(model, obs, 0.0, 1.0, 1e-2, 7);
    const auto b = simulate_truth_and_observations(model, obs, 0.0, 1.0, 1e-2, 7);
    const auto c = simulate_truth_and_observations(model, obs, 0.0, 1.0, 1e-2, 8);
    EXPECT_EQ(a.steps(), 100u);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.y, b.y);
    EXPECT_NE(a.x, c.x);
    EXPECT_DOUBLE_EQ(a.y(0, 0), 0.0);
    EXPECT_THROW(simulate_truth_and_observations(model, obs, 0.0, 1.0, 0.3, 7), ValidationError);
}

TEST(ContinuousFilter, ObservationIncrementStatistics) {
    // b = 0: dY = sqrt(dt) xi, so sum dY^2 ~ T
    const auto p = simulate_truth_and_observations(linear_ou(1, 1), ContinuousObsModel::none(), 0.0, 10.0, 1e-3, 3);
    double qv = 0.0;
    for (std::size_t n = 0; n < p.steps(); ++n) qv += p.dy(n)(0) * p.dy(n)(0);
    // Var of the sum is 2 T dt = 0.02
    EXPECT_NEAR(qv, 10.0, 5.0 * std::sqrt(0.02));
}

TEST(ContinuousFilter, RunRecordsAndValidates) {
    const MixtureFamily fam = family_of(kBasis);
    const auto model = linear_ou(1.0, 1.0);
    const auto obs = ContinuousObsModel::linear(0.5);
    ContinuousProblem prob{model, obs, fam, vec({0.5, 0.5 - 1e-9}),
                           simulate_truth_and_observations(model, obs, 0.0, 0.1, 1e-3, 1)};
    prob.theta0 = vec({0.3, 0.3});
    prob.record_every = 25;
    const auto traj = run_continuous_filter(prob);
    ASSERT_EQ(traj.size(), 5u);
    EXPECT_NEAR(traj.t.back(), 0.1, 1e-12);
    EXPECT_EQ(traj.count("clip"), 0u);
    prob.record_every = 0;
    EXPECT_THROW(run_continuous_filter(prob), ValidationError);
    prob.record_every = 1;
    prob.theta0 = vec({0.3});
    EXPECT_THROW(run_continuous_filter(prob), ValidationError);
}

TEST(ContinuousFilter, StepValidation) {
    const auto co = assemble_sde_coefficients(family_of(kBasis), linear_ou(1, 1), ContinuousObsModel::linear(1.0));
    EXPECT_THROW(stratonovich_step(vec({0.3, 0.3}), co, vec({0.1, 0.1}), 0.01), ValidationError);
    EXPECT_THROW(stratonovich_step(vec({0.3, 0.3}), co, vec({0.1}), 0.0), ValidationError);
    const ContinuousObsModel empty{{}, true};
    EXPECT_THROW(assemble_sde_coefficients(family_of(kBasis), linear_ou(1, 1), empty), ValidationError);
}
