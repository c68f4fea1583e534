#include <gtest/gtest.h>

#include <cmath>

#include "mfgcn/hamiltonian.hpp"
#include "mfgcn/problems.hpp"

using namespace mfgcn;

namespace {

HamiltonianSpec make(std::string name, HamiltonianFn eval, HamiltonianFn grad_p, double modulus) {
    HamiltonianSpec h;
    h.name = std::move(name);
    h.eval = std::move(eval);
    h.grad_p = std::move(grad_p);
    h.grad_x = [](double, double, double) { return 0.0; };
    h.convexity_modulus = modulus;
    return h;
}

// brute-force sup over a fine p-lattice, no refinement
double dense_conjugate(const HamiltonianSpec& h, double x, double alpha, double radius) {
    double best = -INFINITY;
    const int n = 2'000'000;
    for (int k = 0; k <= n; ++k) {
        const double p = -radius + 2.0 * radius * k / n;
        best = std::max(best, p * alpha - h.eval(0.0, x, p));
    }
    return best;
}

StructureLattice small_lattice() {
    StructureLattice lat;
    lat.x_min = -3.0;
    lat.x_max = 3.0;
    lat.p_radius = 3.0;
    lat.n_t = 3;
    lat.n_x = 17;
    lat.n_p = 17;
    return lat;
}

}  // namespace

TEST(Legendre, SelfDualQuadratic) {
    EXPECT_NEAR(legendre(quadratic_hamiltonian(), 0.0, 0.0, 3.0, 8.0), 4.5, 1e-9);
}

TEST(Legendre, ConstantShiftInP) {
    auto c = [](double x) { return 1.0 + 0.5 * std::sin(x); };
    HamiltonianSpec h = make(
        "p^2/2 - c(x)", [c](double, double x, double p) { return 0.5 * p * p - c(x); },
        [](double, double, double p) { return p; }, 1.0);
    for (double x : {-2.0, 0.0, 0.7, 3.0}) EXPECT_NEAR(legendre(h, 0.0, x, 0.0, 4.0), c(x), 1e-9);
}

TEST(Legendre, RelativisticAgainstDenseSearch) {
    HamiltonianSpec h = make(
        "sqrt(1+p^2)", [](double, double, double p) { return std::sqrt(1.0 + p * p); },
        [](double, double, double p) { return p / std::sqrt(1.0 + p * p); }, 0.0);
    const double value = legendre(h, 0.0, 0.0, 0.5, 4.0);
    EXPECT_NEAR(value, -std::sqrt(0.75), 1e-9);
    EXPECT_NEAR(value, dense_conjugate(h, 0.0, 0.5, 4.0), 1e-9);
}

TEST(Legendre, FenchelInequality) {
    const HamiltonianSpec h = drifted_quadratic_hamiltonian(0.5, 0.2);
    for (double x : {-1.0, 0.3})
        for (double alpha : {-1.5, 0.0, 0.8})
            for (double p : {-2.0, -0.1, 0.0, 1.3}) {
                const double L = legendre(h, 0.0, x, alpha, 6.0);
                EXPECT_GE(L + h.eval(0.0, x, p) - p * alpha, -1e-9);
            }
}

TEST(Legendre, DoubleTransformRecoversH) {
    const HamiltonianSpec h = drifted_quadratic_hamiltonian(0.5, 0.2);
    const double x = 0.4;
    // H(p) = sup_alpha (p alpha - H*(alpha)); the conjugate of H* is quadratic too
    HamiltonianSpec conj = make(
        "H*", [&](double, double, double a) { return legendre(h, 0.0, x, a, 8.0); },
        [&](double, double, double a) { return a - 0.5 * std::sin(x); }, 1.0);
    for (double p : {-1.0, 0.0, 0.6}) EXPECT_NEAR(legendre(conj, 0.0, 0.0, p, 4.0, 201), h.eval(0.0, x, p), 1e-6);
}

TEST(Legendre, Errors) {
    try {
        legendre(quadratic_hamiltonian(), 0.0, 0.0, 5.0, 2.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numerical);
    }
    HamiltonianSpec concave = make(
        "-p^2", [](double, double, double p) { return -p * p; }, [](double, double, double p) { return -2.0 * p; },
        1.0);
    try {
        legendre(concave, 0.0, 0.0, 0.0, 2.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::structural);
    }
}

TEST(CheckStructure, QuadraticPasses) {
    HamiltonianSpec h = quadratic_hamiltonian();
    h.C0 = 1.0;
    const ValidationReport rep = check_structure(h, small_lattice());
    EXPECT_TRUE(rep.passed());
    EXPECT_EQ(rep.checks.size(), 5u);
}

TEST(CheckStructure, DriftedQuadraticPasses) {
    const HamiltonianSpec h = drifted_quadratic_hamiltonian(1.0, 0.0);
    EXPECT_DOUBLE_EQ(h.C0, 1.0);
    EXPECT_TRUE(check_structure(h, small_lattice()).passed());
}

TEST(CheckStructure, AbsoluteValueFailsConvexity) {
    HamiltonianSpec h = make(
        "|p|", [](double, double, double p) { return std::abs(p); },
        [](double, double, double p) { return p > 0 ? 1.0 : (p < 0 ? -1.0 : 0.0); }, 1.0);
    const ValidationReport rep = check_structure(h, small_lattice());
    EXPECT_FALSE(rep.passed());
    ASSERT_FALSE(rep.checks.empty());
    EXPECT_EQ(rep.checks[0].name, "uniform_convexity");
    EXPECT_FALSE(rep.checks[0].passed);
}

TEST(CheckStructure, GradientBoundCounterexample) {
    // |D_x H| grows like |p|^2 while the Legendre gap only grows like |p|^2 / 2
    HamiltonianSpec h = make(
        "p^2/2 (1 + 0.9 sin(3x))", [](double, double x, double p) { return 0.5 * p * p * (1.0 + 0.9 * std::sin(3 * x)); },
        [](double, double x, double p) { return p * (1.0 + 0.9 * std::sin(3 * x)); }, 0.05);
    h.grad_x = [](double, double x, double p) { return 1.35 * p * p * std::cos(3 * x); };
    h.C0 = 0.0;
    EXPECT_FALSE(check_structure(h, small_lattice()).passed());
}

TEST(CheckStructure, RequiredC0MatchesClosedForm) {
    // for b sin(x) p + c the binding constraint gives C0 = c + b^2
    const HamiltonianSpec h = drifted_quadratic_hamiltonian(0.5, 0.3);
    StructureLattice lat = small_lattice();
    lat.x_min = -M_PI;
    lat.x_max = M_PI;
    lat.n_x = 65;
    lat.n_p = 65;
    const double need = required_C0(h, lat);
    EXPECT_LE(need, h.C0 + 1e-5);
    EXPECT_GT(need, 0.9 * h.C0);
}

TEST(CheckStructure, LibraryHamiltoniansPass) {
    for (const auto& name : library_names()) {
        const LibraryProblem lp = make_problem(name);
        EXPECT_TRUE(check_structure(lp.data.h, lp.lattice).passed()) << name;
    }
}

TEST(Diffusion, AIsSigmaSquared) {
    const DiffusionSpec d = DiffusionSpec::constant_a(0.3);
    EXPECT_NEAR(d.a(0.0, 1.0), 0.3, 1e-15);
    EXPECT_EQ(DiffusionSpec::zero().a(0.2, -4.0), 0.0);
}
