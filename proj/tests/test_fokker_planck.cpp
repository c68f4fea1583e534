#include <gtest/gtest.h>

#include <cmath>

#include "mfgcn/fokker_planck.hpp"
#include "mfgcn/problems.hpp"
#include "mfgcn/verification/oracles.hpp"

using namespace mfgcn;

namespace {

const Grid1D grid = Grid1D::symmetric_with_spacing(4.0, 1.0 / 32);

FPProblem base(double sd = 0.5) {
    FPProblem p;
    p.m0 = gaussian_density_on(grid, 0.0, sd);
    p.tgrid = TimeGrid(0.5, 200);
    return p;
}

}  // namespace

TEST(FokkerPlanck, ZeroFluxKeepsDensityExactly) {
    const DensityPath path = solve_fp(base());
    for (const auto& m : path.m) EXPECT_EQ(m.values, path.m.front().values);
    EXPECT_TRUE(verify_linf_growth(path, 0.0));
    EXPECT_EQ(divergence_constant({GridField(grid, 0.0)}), 0.0);
}

TEST(FokkerPlanck, DiffusionGrowsVarianceLinearly) {
    FPProblem p = base();
    const double a = 0.2;
    p.diff = DiffusionSpec::constant_a(a);
    p.tgrid = TimeGrid(0.5, fp_auto_steps(a, 0.0, grid.dx(), 0.5));
    const DensityPath path = solve_fp(p);
    // the heat semigroup adds 2 a t to the variance of a centred law
    EXPECT_NEAR(variance(path.m.back()), 0.25 + 2.0 * a * 0.5, 5e-4);
    EXPECT_LE(path.max_mass_drift, 1e-12);
    EXPECT_GE(path.min_value, -1e-12);
}

TEST(FokkerPlanck, ConstantDriftTransportsTheMean) {
    // the density moves with velocity -b
    FPProblem p = base();
    p.drift = [](std::size_t, double) { return GridField(grid, 0.8); };
    p.tgrid = TimeGrid(0.5, fp_auto_steps(0.0, 0.8, grid.dx(), 0.5));
    const DensityPath path = solve_fp(p);
    EXPECT_NEAR(mean_position(path.m.back()), -0.4, 1e-10);
    EXPECT_NEAR(path.mass_series.back(), 1.0, 1e-12);
    EXPECT_NEAR(path.holder_constant(), 0.8 * std::sqrt(0.5), 0.05);
}

TEST(FokkerPlanck, ContractingDriftMatchesGaussianPeak) {
    // b = k x: velocity -k x concentrates the Gaussian; peak of N(0, s^2 e^{-2kt})
    const double k = 0.5, s = 0.5;
    FPProblem p = base(s);
    p.drift = [k](std::size_t, double) { return GridField::sample(grid, [k](double x) { return k * x; }); };
    p.tgrid = TimeGrid(0.5, fp_auto_steps(0.0, 4.0 * k, grid.dx(), 0.5));
    const DensityPath path = solve_fp(p);
    const double C = divergence_constant({GridField::sample(grid, [k](double x) { return k * x; })});
    EXPECT_NEAR(C, k, 1e-12);
    EXPECT_TRUE(verify_linf_growth(path, C));
    EXPECT_NEAR(path.linf_series.back(), oracle::linear_flow_gaussian_peak(s, k, 0.5), 0.05);
}

TEST(FokkerPlanck, MassConservedWithBoundaryFlux) {
    // drift pushing towards the right wall: zero flux keeps every bit of mass
    FPProblem p;
    p.m0 = gaussian_density_on(grid, 3.0, 0.3);
    p.drift = [](std::size_t, double) { return GridField(grid, -1.5); };
    p.diff = DiffusionSpec::constant_a(0.05);
    p.tgrid = TimeGrid(1.0, fp_auto_steps(0.05, 1.5, grid.dx(), 1.0));
    const DensityPath path = solve_fp(p);
    for (double ms : path.mass_series) EXPECT_NEAR(ms, 1.0, 1e-10);
    EXPECT_GE(path.min_value, -1e-12);
}

TEST(FokkerPlanck, Errors) {
    FPProblem p = base();
    p.diff = DiffusionSpec::constant_a(1.0);
    p.tgrid = TimeGrid(0.5, 10);
    try {
        solve_fp(p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::configuration);
    }
    FPProblem q = base();
    for (double& v : q.m0.values) v *= 2.0;
    EXPECT_THROW(solve_fp(q), Error);
    FPProblem r = base();
    r.epsilon = -1.0;
    EXPECT_THROW(solve_fp(r), Error);
}

TEST(Wasserstein, Examples) {
    const GridField mu = gaussian_density_on(grid, 0.0, 0.4);
    EXPECT_NEAR(wasserstein2_1d(mu, mu), 0.0, 1e-12);
    // shifting by exactly one cell
    GridField nu(grid);
    for (std::size_t i = 1; i < grid.size(); ++i) nu[i] = mu[i - 1];
    EXPECT_NEAR(wasserstein2_1d(mu, nu), grid.dx(), 1e-6);
    const GridField g0 = gaussian_density_on(grid, 0.0, 0.5), g1 = gaussian_density_on(grid, 1.0, 0.5);
    EXPECT_NEAR(wasserstein2_1d(g0, g1), 1.0, 2.0 * grid.dx());
    EXPECT_NEAR(wasserstein2_1d(g0, g1), oracle::gaussian_w2(0.0, 0.5, 1.0, 0.5), 2.0 * grid.dx());
}

TEST(Wasserstein, GaussiansWithDifferentSpread) {
    const GridField a = gaussian_density_on(grid, -0.3, 0.4), b = gaussian_density_on(grid, 0.2, 0.7);
    EXPECT_NEAR(wasserstein2_1d(a, b), oracle::gaussian_w2(-0.3, 0.4, 0.2, 0.7), 2.0 * grid.dx());
}

TEST(Wasserstein, ZeroMassIsInvalid) {
    try {
        wasserstein2_1d(GridField(grid, 0.0), gaussian_density_on(grid, 0.0, 1.0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
    }
}
