#include <gtest/gtest.h>

#include <cmath>

#include "mfgcn/noise_tree.hpp"

using namespace mfgcn;

TEST(NoiseTree, OneLevel) {
    const NoiseTree tree(1, 0.81, 0.3);
    ASSERT_EQ(tree.width(1), 2u);
    EXPECT_NEAR(tree.node(1, 0).W_value, 0.9, 1e-15);
    EXPECT_NEAR(tree.node(1, 1).W_value, -0.9, 1e-15);
    EXPECT_EQ(tree.node(1, 0).probability, 0.5);
    EXPECT_EQ(tree.node(1, 1).probability, 0.5);
}

TEST(NoiseTree, TwoLevelsEnumerate) {
    const double T = 0.5;
    const NoiseTree tree(2, T, 0.1);
    const double h = std::sqrt(T / 2.0);
    const double expected[4] = {2 * h, 0.0, 0.0, -2 * h};
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(tree.node(2, k).W_value, expected[k], 1e-15);
    EXPECT_NEAR(tree.jump_time(1), 0.25, 1e-15);
    EXPECT_EQ(tree.jump_time(2), T);
}

TEST(NoiseTree, StructuralInvariants) {
    const NoiseTree tree(6, 1.3, 0.2);
    const double h = std::sqrt(1.3 / 6.0);
    EXPECT_EQ(tree.node(0, 0).W_value, 0.0);
    for (std::size_t n = 0; n <= 6; ++n) {
        double total = 0.0;
        for (const TreeNode& node : tree.level(n)) total += node.probability;
        EXPECT_NEAR(total, 1.0, 1e-12);
        if (n == 0) continue;
        for (const TreeNode& node : tree.level(n)) {
            const TreeNode& par = tree.node(n - 1, node.parent);
            EXPECT_EQ(node.W_value, par.W_value + node.increment);
            EXPECT_TRUE(node.increment == h || node.increment == -h);
            EXPECT_EQ(node.parent, node.index / 2);
        }
    }
    EXPECT_NEAR(tree.shift(3, 0), std::sqrt(0.4) * 3 * h, 1e-14);
    EXPECT_EQ(NoiseTree::ancestor(6, 45, 2), 45u >> 4);
}

TEST(NoiseTree, MomentsOfTheWalk) {
    const NoiseTree tree(8, 2.0, 0.5);
    std::vector<double> w, w2;
    for (const TreeNode& node : tree.level(8)) {
        w.push_back(node.W_value);
        w2.push_back(node.W_value * node.W_value);
    }
    EXPECT_NEAR(tree_expectation(tree, 8, w), 0.0, 1e-13);
    EXPECT_NEAR(tree_expectation(tree, 8, w2), 2.0, 1e-12);
}

TEST(NoiseTree, CapAndArguments) {
    try {
        NoiseTree(15, 1.0, 0.1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::configuration);
    }
    EXPECT_NO_THROW(NoiseTree(14, 1.0, 0.1));
    EXPECT_THROW(NoiseTree(0, 1.0, 0.1), Error);
    EXPECT_THROW(NoiseTree(3, -1.0, 0.1), Error);
    EXPECT_THROW(NoiseTree(3, 1.0, -0.1), Error);
}

TEST(ConditionalExpectation, Examples) {
    const NoiseTree tree(2, 1.0, 0.1);
    const Grid1D g(-1.0, 1.0, 9);
    // equal children
    TreeField same(4, GridField::sample(g, [](double x) { return x * x; }));
    const TreeField up = conditional_expectation(tree, 2, same);
    for (const auto& f : up) EXPECT_EQ(f.values, same[0].values);
    // c +/- delta by increment sign
    TreeField pm(4);
    for (std::size_t k = 0; k < 4; ++k) {
        const double sign = tree.node(2, k).increment > 0 ? 1.0 : -1.0;
        pm[k] = GridField::sample(g, [&](double x) { return std::cos(x) + sign * 0.3; });
    }
    const TreeField mean = conditional_expectation(tree, 2, pm);
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t i = 0; i < g.size(); ++i) {
            EXPECT_NEAR(mean[k / 2][i], std::cos(g.x(i)), 1e-15);
            EXPECT_NEAR(pm[k][i] - mean[k / 2][i], tree.node(2, k).increment > 0 ? 0.3 : -0.3, 1e-15);
        }
}

TEST(ConditionalExpectation, LinearInWIsMartingale) {
    const NoiseTree tree(5, 1.0, 0.1);
    const Grid1D g(0.0, 1.0, 8);
    for (std::size_t n = 1; n <= 5; ++n) {
        TreeField f(tree.width(n));
        for (std::size_t k = 0; k < f.size(); ++k) f[k] = GridField(g, 2.0 * tree.node(n, k).W_value - 1.0);
        const TreeField parent = conditional_expectation(tree, n, f);
        for (std::size_t k = 0; k < parent.size(); ++k)
            EXPECT_NEAR(parent[k][3], 2.0 * tree.node(n - 1, k).W_value - 1.0, 1e-14);
    }
}

TEST(ConditionalExpectation, MissingChildIsInvalid) {
    const NoiseTree tree(2, 1.0, 0.1);
    const Grid1D g(0.0, 1.0, 8);
    TreeField f(4, GridField(g, 1.0));
    f[3] = GridField{};
    try {
        conditional_expectation(tree, 2, f);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
    }
    EXPECT_THROW(conditional_expectation(tree, 2, TreeField(3, GridField(g, 1.0))), Error);
}

TEST(PathProjection, AdmissiblePathIsFixed) {
    const std::size_t n = 3, ratio = 16;
    const double h = std::sqrt(1.0 / 8.0);
    const int signs[8] = {1, 1, -1, 1, -1, -1, -1, 1};
    std::vector<double> path{0.0};
    for (int s : signs)
        for (std::size_t r = 0; r < ratio; ++r) path.push_back(path.back() + s * h / ratio);
    EXPECT_NEAR(project_path(path, 1.0, n), 0.0, 1e-14);
}

TEST(PathProjection, ZeroPathErrorIsOneIncrement) {
    // the nearest admissible paths zig-zag around 0 and stay within one increment
    for (std::size_t n : {1u, 2u, 4u}) {
        const double h = std::sqrt(1.0 / static_cast<double>(std::size_t{1} << n));
        EXPECT_NEAR(project_path(std::vector<double>(257, 0.0), 1.0, n), h, 1e-14);
    }
}

TEST(PathProjection, ErrorDecreasesAndIsSeeded) {
    const double e2 = project_path_error(2, 200, 7), e6 = project_path_error(6, 200, 7);
    EXPECT_LT(e6, e2);
    EXPECT_EQ(project_path_error(4, 150, 99), project_path_error(4, 150, 99));
    EXPECT_THROW(project_path_error(13, 200, 1), Error);
}
