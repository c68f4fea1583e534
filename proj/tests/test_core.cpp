#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mfgcn/core.hpp"

using namespace mfgcn;

TEST(Grid, SpacingAndValidation) {
    Grid1D g(-1.0, 1.0, 9);
    EXPECT_DOUBLE_EQ(g.dx(), 0.25);
    EXPECT_DOUBLE_EQ(g.x(8), 1.0);
    EXPECT_THROW(Grid1D(0.0, 1.0, 7), Error);
    EXPECT_THROW(Grid1D(1.0, 0.0, 16), Error);
    const Grid1D s = Grid1D::symmetric_with_spacing(2.0, 1.0 / 64);
    EXPECT_NEAR(s.dx(), 1.0 / 64, 1e-15);
    EXPECT_EQ(s.size(), 257u);
}

TEST(GridField, LengthMustMatch) {
    Grid1D g(0.0, 1.0, 8);
    EXPECT_THROW(GridField(g, std::vector<double>(7)), Error);
}

TEST(MPlus, Examples) {
    EXPECT_EQ(m_plus(0.0), 0.0);
    EXPECT_EQ(m_plus(-3.5), 0.0);
    EXPECT_EQ(m_plus(2.0), 2.0);
    EXPECT_THROW(m_plus(std::nan("")), Error);
    EXPECT_THROW(m_plus(INFINITY), Error);
    for (double x : {-10.0, -1e-3, 0.0, 0.5, 7.0}) {
        EXPECT_GE(m_plus(x), 0.0);
        EXPECT_GE(m_plus(x), x);
    }
}

TEST(Semiconcavity, Examples) {
    Grid1D g(-2.0, 2.0, 41);
    EXPECT_NEAR(semiconcavity_constant(GridField::sample(g, [](double x) { return 0.5 * x * x; })), 1.0, 1e-12);
    EXPECT_EQ(semiconcavity_constant(GridField(g, 3.0)), 0.0);
    // kink of -|x| is concave: every second difference is <= 0 (dyadic spacing keeps it exact)
    const Grid1D d(-2.0, 2.0, 33);
    const GridField kink = GridField::sample(d, [](double x) { return -std::abs(x); });
    double worst = -1.0;
    for (std::size_t i = 1; i + 1 < kink.size(); ++i) worst = std::max(worst, second_difference(kink.values, i, d.dx()));
    EXPECT_LE(worst, 0.0);
    EXPECT_EQ(semiconcavity_constant(kink), 0.0);
}

TEST(Semiconcavity, ExactOnQuadratics) {
    Grid1D g(-3.0, 3.0, 61);
    for (double a : {-2.0, -0.5, 0.0, 0.25, 3.0}) {
        const GridField u = GridField::sample(g, [a](double x) { return a * x * x - 0.7 * x + 1.3; });
        EXPECT_NEAR(semiconcavity_constant(u), std::max(2.0 * a, 0.0), 1e-11);
    }
}

TEST(Lipschitz, Examples) {
    Grid1D g(-1.0, 1.0, 21);
    EXPECT_EQ(lipschitz_constant(GridField(g, 2.0)), 0.0);
    EXPECT_NEAR(lipschitz_constant(GridField::sample(g, [](double x) { return 3.0 * x; })), 3.0, 1e-12);
}

TEST(Lipschitz, SineRefinementIncreasesToOne) {
    double prev = 0.0;
    for (std::size_t n : {9u, 17u, 33u, 65u, 129u, 257u}) {
        Grid1D g(-3.0, 3.0, n);
        const double L = lipschitz_constant(GridField::sample(g, [](double x) { return std::sin(x); }));
        EXPECT_LE(L, 1.0 + 1e-12);
        EXPECT_GE(L, prev - 1e-12);
        prev = L;
    }
    EXPECT_GT(prev, 0.999);
}

TEST(InterpSupBound, Examples) {
    EXPECT_EQ(interp_sup_bound(1.0, 1.0, 0.0), 0.0);
    // the cone (1 - |x|)_+ has ||w||_1 = 1 and ||Dw||_inf = 1, and the bound is attained
    Grid1D g(-2.0, 2.0, 401);
    const GridField cone = GridField::sample(g, [](double x) { return std::max(1.0 - std::abs(x), 0.0); });
    EXPECT_NEAR(lp_norm(cone, 1.0), 1.0, 1e-12);
    EXPECT_NEAR(lipschitz_constant(cone), 1.0, 1e-9);
    EXPECT_NEAR(interp_sup_bound(1.0, 1.0, 1.0), 1.0, 1e-14);
    // scaling the cone by 2 doubles the gradient and the L1 norm
    EXPECT_NEAR(interp_sup_bound(1.0, 2.0, 2.0), 2.0, 1e-14);
    EXPECT_THROW(interp_sup_bound(0.5, 1.0, 1.0), Error);
    EXPECT_THROW(interp_sup_bound(1.0, 1.0, -1.0), Error);
}

TEST(InterpSupBound, ConstantMatchesClosedFormInOneDimension) {
    for (double p : {1.0, 2.0, 3.5})
        EXPECT_NEAR(interp_constant(p, 1), std::pow((p + 1.0) / 2.0, 1.0 / (p + 1.0)), 1e-13);
}

TEST(InterpSupBound, DominatesRandomPiecewiseLinearFields) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> val(-1.0, 1.0);
    std::uniform_int_distribution<int> len(3, 40);
    Grid1D g(-5.0, 5.0, 201);
    for (int trial = 0; trial < 200; ++trial) {
        GridField w(g, 0.0);
        const int support = len(rng);
        const int start = 20 + trial % 100;
        for (int i = start + 1; i < start + support; ++i) w[static_cast<std::size_t>(i)] = val(rng);
        const double grad = lipschitz_constant(w);
        if (grad == 0.0) continue;
        for (double p : {1.0, 2.0, 4.0})
            EXPECT_LE(sup_norm(w), interp_sup_bound(p, grad, lp_norm(w, p)) + 1e-10);
    }
}

TEST(Psi, Examples) {
    const auto inside = psi_test(0.5, 2.0, 1.0, 1.5);
    EXPECT_EQ(inside.value, 1.0);
    EXPECT_EQ(inside.gradient, 0.0);
    EXPECT_LT(psi_test(0.5, 2.0, 1.0, 60.0).value, 1e-100);
    EXPECT_LT(psi_test(0.5, 2.0, 1.0, -60.0).value, 1e-100);
    EXPECT_THROW(psi_test(0.0, 1.0, 0.0, 0.0), Error);
    EXPECT_THROW(psi_test(1.0, -1.0, 0.0, 0.0), Error);
}

TEST(Psi, DerivativesMatchFiniteDifferences) {
    const double lam = 0.7, K = 1.3, t = 0.4, h = 1e-5;
    for (double x : {-3.0, -1.2, 2.0, 4.5}) {
        const auto v = psi_test(lam, K, t, x);
        const double fx = (psi_test(lam, K, t, x + h).value - psi_test(lam, K, t, x - h).value) / (2 * h);
        const double fxx = (psi_test(lam, K, t, x + h).value - 2 * v.value + psi_test(lam, K, t, x - h).value) / (h * h);
        const double ft = (psi_test(lam, K, t + h, x).value - psi_test(lam, K, t - h, x).value) / (2 * h);
        EXPECT_NEAR(v.gradient, fx, 1e-7);
        EXPECT_NEAR(v.second_derivative, fxx, 1e-4);
        EXPECT_NEAR(v.time_derivative, ft, 1e-7);
    }
}

TEST(Psi, SupersolutionResidualOnLattice) {
    double worst = INFINITY;
    for (int it = 0; it < 100; ++it)
        for (int ix = 0; ix < 100; ++ix) {
            const double t = 2.0 * it / 99.0, x = -10.0 + 20.0 * ix / 99.0;
            for (double lam : {0.3, 1.0})
                worst = std::min(worst, psi_residual(lam, 1.5, t, x));
        }
    EXPECT_GE(worst, -1e-12);
}

TEST(Mollify, PreservesAffineAndSmooths) {
    Grid1D g(-2.0, 2.0, 81);
    const GridField affine = GridField::sample(g, [](double x) { return 2.0 * x - 1.0; });
    const GridField m = mollify(affine, 0.2);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(m[i], affine[i], 1e-12);
    const GridField kink = GridField::sample(g, [](double x) { return std::abs(x); });
    EXPECT_LT(semiconcavity_constant(mollify(kink, 0.2)), semiconcavity_constant(kink));
}

TEST(Interpolate, LinearAndZeroExtension) {
    Grid1D g(0.0, 1.0, 11);
    const GridField u = GridField::sample(g, [](double x) { return 3.0 * x + 1.0; });
    EXPECT_NEAR(interpolate(u, 0.55), 2.65, 1e-14);
    EXPECT_NEAR(interpolate(u, 1.5), 5.5, 1e-13);
    EXPECT_EQ(interpolate_zero(u, 1.5), 0.0);
    EXPECT_NEAR(interpolate_zero(u, 1.0), 4.0, 1e-14);
}

TEST(Norms, WeightedSupDistance) {
    Grid1D g(-4.0, 4.0, 81);
    const GridField f = GridField(g, 1.0), z = GridField(g, 0.0);
    EXPECT_NEAR(weighted_sup_distance(f, z, 1.0, 1.0, 0.5), 1.0, 1e-14);
    EXPECT_NEAR(sup_norm_ball(GridField::sample(g, [](double x) { return x; }), 2.0), 2.0, 1e-12);
}
