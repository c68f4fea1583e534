#include <gtest/gtest.h>

#include <cmath>

#include "mfgcn/mfg.hpp"
#include "mfgcn/problems.hpp"

using namespace mfgcn;

namespace {

LibraryProblem small(const std::string& name, double beta, std::size_t levels = 2) {
    ProblemParams pp;
    pp.name = name;
    pp.beta = beta;
    pp.n_levels = levels;
    pp.grid_points = 128;
    return make_problem(pp);
}

}  // namespace

TEST(SolveMFG, DecoupledConvergesAfterOneIteration) {
    const LibraryProblem lp = small("quadratic", 0.2);
    const MFGSolution sol = solve_mfg(lp.mfg());
    EXPECT_TRUE(sol.converged);
    ASSERT_EQ(sol.residual_series.size(), 2u);
    EXPECT_GT(sol.residual_series[0], 0.0);
    EXPECT_LE(sol.residual_series[1], 1e-12);
}

TEST(SolveMFG, DeterministicMonotoneProblemContracts) {
    const LibraryProblem lp = small("separated-gaussian", 0.0);
    FixpointConfig fp;
    fp.damping = 0.5;
    fp.tol_d2 = 1e-4;
    fp.max_iters = 50;
    const MFGSolution sol = solve_mfg(lp.mfg(fp));
    EXPECT_TRUE(sol.converged);
    const auto& r = sol.residual_series;
    EXPECT_LE(r.back(), 1e-4);
    EXPECT_LE(r.size(), 50u);
    for (std::size_t k = 1; k < r.size(); ++k) EXPECT_LT(r[k], r[k - 1]);
    // no common noise: jumps vanish and every node of a level carries the same flow
    EXPECT_EQ(sol.martingale_residual, 0.0);
    for (std::size_t n = 1; n < sol.m.size(); ++n)
        for (std::size_t k = 1; k < sol.m[n].size(); ++k) EXPECT_EQ(sol.m[n][k].back().values, sol.m[n][0].back().values);
}

TEST(SolveMFG, FlowsConserveMassAndStayPositive) {
    const LibraryProblem lp = small("separated-gaussian", 0.2);
    const MFGSolution sol = solve_mfg(lp.mfg());
    for (const auto& level : sol.m)
        for (const auto& node : level)
            for (const auto& m : node) {
                EXPECT_NEAR(mass(m), 1.0, 1e-10);
                EXPECT_GE(*std::min_element(m.values.begin(), m.values.end()), -1e-12);
            }
    EXPECT_LE(sol.martingale_residual, 1e-12);
}

TEST(SolveMFG, FictitiousPlayReachesTheSameEquilibrium) {
    const LibraryProblem lp = small("separated-gaussian", 0.2);
    FixpointConfig fp;
    fp.mode = FixpointConfig::Mode::fictitious_play;
    fp.max_iters = 400;
    fp.refine_epsilon = false;
    FixpointConfig pc;
    pc.refine_epsilon = false;
    const MFGProblem prob = lp.mfg(pc);
    const MFGSolution a = solve_mfg(prob), b = solve_mfg(lp.mfg(fp));
    EXPECT_TRUE(b.converged);
    EXPECT_LE(flow_distance(prob.tree, prob.steps_per_slab, a.m, b.m), 0.02);
}

TEST(SolveMFG, NonConvergenceCarriesTheSeries) {
    const LibraryProblem lp = small("separated-gaussian", 0.2);
    FixpointConfig fp;
    fp.max_iters = 1;
    try {
        solve_mfg(lp.mfg(fp));
        FAIL();
    } catch (const NonConvergenceError& e) {
        EXPECT_EQ(e.kind(), ErrorKind::non_convergence);
        ASSERT_EQ(e.residual_series.size(), 1u);
        EXPECT_GT(e.residual_series[0], fp.tol_d2);
        EXPECT_FALSE(e.partial_solution.converged);
    }
}

TEST(SolveMFG, InvalidFixpointSettings) {
    const LibraryProblem lp = small("separated-gaussian", 0.2);
    FixpointConfig fp;
    fp.damping = 0.0;
    try {
        solve_mfg(lp.mfg(fp));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::configuration);
    }
}

TEST(FlowDistance, ZeroForIdenticalFlows) {
    const LibraryProblem lp = small("separated-gaussian", 0.2);
    const SlabFlow f = constant_flow(lp.tree, lp.steps_per_slab, lp.m0);
    EXPECT_EQ(flow_distance(lp.tree, lp.steps_per_slab, f, f), 0.0);
    const SlabFlow u = uniform_flow(lp.tree, lp.steps_per_slab, lp.grid);
    EXPECT_GT(flow_distance(lp.tree, lp.steps_per_slab, f, u), 0.1);
}

TEST(Monotonicity, EqualMeasuresGiveZero) {
    const LibraryProblem lp = small("separated-gaussian", 0.2);
    const GridField m = gaussian_density_on(lp.grid, 0.3, 0.5);
    const auto rep = monotonicity_check(lp.data.coupling, {m, m}, 0.0);
    EXPECT_EQ(rep.min_F, 0.0);
    EXPECT_EQ(rep.min_G, 0.0);
    EXPECT_TRUE(rep.passed);
}

TEST(Monotonicity, GaussianKernelPassesAndItsNegationFails) {
    const LibraryProblem lp = small("separated-gaussian", 0.2);
    std::vector<GridField> probes;
    for (double mu : {-1.0, 0.0, 0.7}) probes.push_back(gaussian_density_on(lp.grid, mu, 0.4));
    const auto good = monotonicity_check(lp.data.coupling, probes, 0.0);
    EXPECT_TRUE(good.passed);
    EXPECT_GT(good.min_F, 0.0);
    CouplingSpec flipped = lp.data.coupling;
    flipped.F = [](double, std::span<const double> xs, const GridField& m) {
        return gaussian_convolution(-1.0, 0.5, xs, m);
    };
    const auto bad = monotonicity_check(flipped, probes, 0.0);
    EXPECT_FALSE(bad.passed);
    EXPECT_LT(bad.min_F, 0.0);
}

TEST(Monotonicity, UnequalMassesAreInvalid) {
    const LibraryProblem lp = small("separated-gaussian", 0.2);
    GridField heavy = gaussian_density_on(lp.grid, 0.0, 0.5);
    for (double& v : heavy.values) v *= 1.5;
    try {
        monotonicity_check(lp.data.coupling, {gaussian_density_on(lp.grid, 0.0, 0.5), heavy}, 0.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
    }
}

TEST(DualityGap, ZeroForTheSameSolution) {
    const LibraryProblem lp = small("separated-gaussian", 0.2);
    const MFGProblem prob = lp.mfg();
    const MFGSolution sol = solve_mfg(prob);
    const DualityGap gap = duality_gap(sol, sol, prob);
    EXPECT_EQ(gap.total(), 0.0);
}

TEST(DualityGap, TwinRunsAgree) {
    const LibraryProblem lp = small("separated-gaussian", 0.2);
    const MFGProblem prob = lp.mfg();
    const MFGSolution a = solve_mfg(prob);
    const SlabFlow init = uniform_flow(prob.tree, prob.steps_per_slab, prob.grid());
    const MFGSolution b = solve_mfg(prob, &init);
    const DualityGap gap = duality_gap(a, b, prob);
    EXPECT_GE(gap.total(), -1e-12);
    EXPECT_LE(gap.total(), 10.0 * prob.fixpoint.tol_d2 * lp.data.coupling.lipschitz_d2);
}

TEST(DualityGap, RequiresSeparatedMode) {
    const LibraryProblem lp = small("quadratic", 0.2);
    const MFGProblem prob = lp.mfg();
    const MFGSolution sol = solve_mfg(prob);
    try {
        duality_gap(sol, sol, prob);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::unsupported_mode);
    }
}
