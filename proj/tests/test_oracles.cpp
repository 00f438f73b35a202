#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mpf/continuous_filter.hpp"
#include "mpf/discrete_filter.hpp"
#include "mpf/errors.hpp"
#include "mpf/oracles/galerkin.hpp"
#include "mpf/oracles/grid.hpp"
#include "mpf/oracles/kalman.hpp"
#include "mpf/oracles/particle.hpp"

using namespace mpf;
using namespace mpf::oracles;

namespace {

MixtureFamily bimodal_family() {
    return MixtureFamily({BasisDensity::gaussian(-1.0, 0.5), BasisDensity::gaussian(1.0, 0.5),
                          BasisDensity::gaussian(0.0, 2.0)});
}

}  // namespace

TEST(Oracles, GalerkinGeneratorMatchesProjection) {
    const MixtureFamily fam = bimodal_family();
    for (const auto& model : {linear_ou(1.0, 1.0), bimodal_drift(0.5), DiffusionModel::linear_model(0.0, 1.0)}) {
        const Eigen::MatrixXd g = galerkin_prediction_generator(fam, model);
        const Eigen::MatrixXd b = assemble_prediction_generator(fam, model).B;
        EXPECT_LT((g - b).cwiseAbs().maxCoeff(), 1e-6 * b.cwiseAbs().maxCoeff()) << model.name;
    }
}

TEST(Oracles, GalerkinItoStepWithoutNoiseIsEuler) {
    const MixtureFamily fam = bimodal_family();
    const auto model = linear_ou(1.0, 1.0);
    const GalerkinOracle gal(fam);
    Eigen::VectorXd th(2);
    th << 0.3, 0.3;
    Eigen::VectorXd dy(1);
    dy << 0.0;
    const Eigen::VectorXd next = gal.ito_step(th, model, ContinuousObsModel::constant(0.0), dy, 1e-3, 0.0);
    const auto gen = assemble_prediction_generator(fam, model);
    EXPECT_LT((next - (th + 1e-3 * gen.rate(th))).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_THROW(gal.ito_step(th.head(1), model, ContinuousObsModel::constant(0.0), dy, 1e-3, 0.0), ValidationError);
}

TEST(Oracles, KalmanPropagateMatchesOuMoments) {
    // OU with F = -a: mean e^{-a t} m, variance e^{-2 a t} v + s^2 (1 - e^{-2 a t}) / (2 a)
    const double a = 0.7, s = 1.2, t = 0.9;
    const auto st = kalman_propagate({1.5, 0.4}, LinearGaussian{-a, s, 1.0}, t);
    EXPECT_NEAR(st.mean, std::exp(-a * t) * 1.5, 1e-14);
    EXPECT_NEAR(st.variance, std::exp(-2 * a * t) * 0.4 + s * s * (1 - std::exp(-2 * a * t)) / (2 * a), 1e-14);
    const auto bm = kalman_propagate({0.0, 1.0}, LinearGaussian{0.0, 1.0, 1.0}, 2.0);
    EXPECT_NEAR(bm.variance, 3.0, 1e-12);
}

TEST(Oracles, KalmanUpdateMatchesQuadratureBayes) {
    const double m = 0.2, v = 0.8, slope = 1.7, off = 0.3, r = 0.5, z = 1.1;
    const auto post = kalman_update({m, v}, slope, off, r, z);
    const Field1 un([&](double x) {
        const double e = z - slope * x - off;
        return normal_pdf(x, m, v) * std::exp(-0.5 * e * e / r);
    }, Hint<1>{m, std::sqrt(v)});
    const double z0 = integrate(un);
    const double mean = integrate(Field1([&](double x) { return x * un(x); }, un.hint())) / z0;
    const double second = integrate(Field1([&](double x) { return x * x * un(x); }, un.hint())) / z0;
    EXPECT_NEAR(post.mean, mean, 1e-10);
    EXPECT_NEAR(post.variance, second - mean * mean, 1e-10);
}

TEST(Oracles, RiccatiSolutionSolvesTheOde) {
    const double f = -1.0, a = 1.0, h = 0.5, p0 = 0.79;
    for (double t : {0.1, 0.5, 2.0}) {
        const double e = 1e-5;
        const double dp = (riccati_solution(f, a, h, p0, t + e) - riccati_solution(f, a, h, p0, t - e)) / (2 * e);
        const double p = riccati_solution(f, a, h, p0, t);
        EXPECT_NEAR(dp, 2 * f * p + a - h * h * p * p, 1e-8);
    }
    EXPECT_NEAR(riccati_solution(f, a, h, p0, 0.0), p0, 1e-14);
    const double fix = riccati_fixed_point(f, a, h);
    EXPECT_NEAR(riccati_solution(f, a, h, p0, 50.0), fix, 1e-12);
    EXPECT_NEAR(2 * f * fix + a - h * h * fix * fix, 0.0, 1e-14);
    EXPECT_NEAR(riccati_fixed_point(-2.0, 1.0, 0.0), 0.25, 1e-15);
    EXPECT_THROW(riccati_fixed_point(1.0, 1.0, 0.0), ValidationError);
}

TEST(Oracles, KalmanDiscreteRequiresLinearModel) {
    EXPECT_THROW(kalman_discrete(bimodal_drift(1.0), DiscreteObsModel::linear(1, 1, {1.0}), {0.0}, {}),
                 ValidationError);
    EXPECT_THROW(kalman_discrete(linear_ou(1, 1), DiscreteObsModel::cubic(1, {1.0}), {0.0}, {}), ValidationError);
}

TEST(Oracles, GridHeatKernel) {
    // f = 0, a = 1: N(0, v) -> N(0, v + t)
    const auto model = DiffusionModel::linear_model(0.0, 1.0);
    const GridDensity p0 = GridDensity::from_field(gaussian_field(0.0, 0.5), -12.0, 12.0, 2401);
    const GridRun run = grid_fokker_planck_solve(model, p0, 0.0, 0.5, 1e-3);
    EXPECT_EQ(run.floor_events, 0);
    EXPECT_NEAR(run.density.mass(), 1.0, 1e-12);
    EXPECT_LT(run.density.l2_distance_to(gaussian_field(0.0, 1.0)), 1e-5);
    const auto [m, v] = run.density.moments();
    EXPECT_NEAR(m, 0.0, 1e-10);
    EXPECT_NEAR(v, 1.0, 1e-4);
}

TEST(Oracles, GridOuRelaxesToStationaryLaw) {
    const auto model = linear_ou(1.0, 1.0);
    const GridDensity p0 = GridDensity::from_field(gaussian_field(1.0, 0.2), -8.0, 8.0, 1601);
    const GridRun run = grid_fokker_planck_solve(model, p0, 0.0, 8.0, 5e-3);
    const auto [m, v] = run.density.moments();
    EXPECT_NEAR(m, std::exp(-8.0), 1e-4);
    EXPECT_NEAR(v, 0.5, 1e-3);
}

TEST(Oracles, GridExplicitSchemeChecksCfl) {
    const auto model = DiffusionModel::linear_model(0.0, 1.0);
    const GridDensity p0 = GridDensity::from_field(gaussian_field(0.0, 0.5), -12.0, 12.0, 2401);
    EXPECT_THROW(grid_fokker_planck_solve(model, p0, 0.0, 0.1, 1e-3, GridScheme::explicit_euler), ValidationError);
    const GridRun ok = grid_fokker_planck_solve(model, p0, 0.0, 0.1, 4e-5, GridScheme::explicit_euler);
    EXPECT_NEAR(ok.density.moments().second, 0.6, 1e-4);
}

TEST(Oracles, GridKushnerTracksKalmanBucy) {
    const auto model = linear_ou(1.0, 1.0);
    const auto obs = ContinuousObsModel::linear(1.0);
    const auto path = simulate_truth_and_observations(model, obs, 0.0, 1.0, 1e-3, 5);
    const GridDensity p0 = GridDensity::from_field(gaussian_field(0.0, 0.5), -8.0, 8.0, 801);
    const auto grid = grid_kushner_solve(model, obs, p0, path, GridScheme::crank_nicolson, 100);
    const auto kb = kalman_bucy(model, obs, path, {0.0, 0.5}, 100);
    ASSERT_EQ(grid.size(), kb.size());
    for (std::size_t i = 0; i < kb.size(); ++i) {
        EXPECT_NEAR(grid.mean[i], kb.mean[i], 5e-3) << "t " << kb.t[i];
        EXPECT_NEAR(grid.variance[i], kb.variance[i], 5e-3) << "t " << kb.t[i];
    }
}

TEST(Oracles, ParticlePriorSampling) {
    ParticleFilter pf(linear_ou(1.0, 1.0), 200000, 11);
    pf.initialize({{{-1.0, 0.5}, {1.0, 0.5}}, {0.25, 0.75}});
    double mean = 0.0, var = 0.0, se = 0.0;
    pf.ensemble().moments(mean, var, se);
    EXPECT_NEAR(mean, 0.5, 4.0 * se);
    // mixture variance: sum w (v + m^2) - mean^2
    EXPECT_NEAR(var, 0.5 + 1.0 - 0.25, 0.02);
    EXPECT_THROW(ParticleFilter(linear_ou(1, 1), 10, 1), ValidationError);
}

TEST(Oracles, ParticleDiscreteMatchesKalman) {
    const auto model = linear_ou(0.5, 0.7);
    const auto obs = DiscreteObsModel::linear(1.0, 0.4, {0.25, 0.5, 0.75, 1.0});
    const std::vector<double> zs{0.3, 0.1, -0.2, 0.4};
    const auto kal = kalman_discrete(model, obs, zs, {0.0, 1.0});
    const auto pf = particle_filter_discrete(model, obs, zs, {{{0.0, 1.0}}, {1.0}}, 50000, 4, 1e-3);
    ASSERT_EQ(pf.size(), kal.size());
    for (std::size_t i = 1; i < kal.size(); ++i) {
        // Euler bias is O(dt); the Monte Carlo error dominates
        EXPECT_NEAR(pf.mean[i], kal.mean[i], 5.0 * pf.mean_se[i] + 2e-3) << "t " << kal.t[i];
    }
}
