#pragma once

// Full binary tree realizing the projected common noise: N levels, increments
// +-sqrt(T/N) with probability 1/2 each, exact conditional expectations.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mfgcn/core.hpp"

namespace mfgcn {

struct TreeNode {
    std::size_t level = 0;
    std::size_t index = 0;   // position within the level, 0 .. 2^level - 1
    std::size_t parent = 0;  // index at level - 1 (0 for the root)
    double increment = 0.0;  // W_value - W_value(parent)
    double W_value = 0.0;
    double probability = 1.0;
};

class NoiseTree {
public:
    static constexpr std::size_t default_leaf_cap = std::size_t{1} << 14;

    NoiseTree() = default;

    NoiseTree(std::size_t n_levels, double T, double beta, std::size_t leaf_cap = default_leaf_cap)
        : n_levels_(n_levels), T_(T), beta_(beta) {
        if (n_levels < 1) fail(ErrorKind::invalid_argument, "noise-tree", "need at least one level");
        if (!(T > 0.0)) fail(ErrorKind::invalid_argument, "noise-tree", "horizon must be positive");
        if (!(beta >= 0.0)) fail(ErrorKind::invalid_argument, "noise-tree", "beta must be >= 0");
        if (n_levels >= 63 || (std::size_t{1} << n_levels) > leaf_cap)
            fail(ErrorKind::configuration, "noise-tree",
                 "2^" + std::to_string(n_levels) + " leaves exceed the cap of " + std::to_string(leaf_cap));
        const double h = std::sqrt(T / static_cast<double>(n_levels));
        levels_.resize(n_levels + 1);
        levels_[0].push_back(TreeNode{});
        for (std::size_t n = 1; n <= n_levels; ++n) {
            const std::size_t count = std::size_t{1} << n;
            levels_[n].resize(count);
            const double prob = std::ldexp(1.0, -static_cast<int>(n));
            for (std::size_t k = 0; k < count; ++k) {
                const TreeNode& par = levels_[n - 1][k / 2];
                TreeNode& node = levels_[n][k];
                node.level = n;
                node.index = k;
                node.parent = k / 2;
                node.increment = (k % 2 == 0) ? h : -h;
                node.W_value = par.W_value + node.increment;
                node.probability = prob;
            }
        }
    }

    std::size_t n_levels() const noexcept { return n_levels_; }
    double horizon() const noexcept { return T_; }
    double beta() const noexcept { return beta_; }
    double dt_noise() const noexcept { return T_ / static_cast<double>(n_levels_); }
    double jump_time(std::size_t level) const noexcept {
        return level == n_levels_ ? T_ : static_cast<double>(level) * dt_noise();
    }
    std::size_t width(std::size_t level) const noexcept { return std::size_t{1} << level; }

    const TreeNode& node(std::size_t level, std::size_t index) const { return levels_.at(level).at(index); }
    const std::vector<TreeNode>& level(std::size_t level) const { return levels_.at(level); }

    /// Common-noise shift sqrt(2 beta) W at a node.
    double shift(std::size_t level, std::size_t index) const {
        return std::sqrt(2.0 * beta_) * node(level, index).W_value;
    }

    /// Index of the level-`ancestor_level` ancestor of (level, index).
    static std::size_t ancestor(std::size_t level, std::size_t index, std::size_t ancestor_level) {
        return index >> (level - ancestor_level);
    }

private:
    std::size_t n_levels_ = 0;
    double T_ = 0.0;
    double beta_ = 0.0;
    std::vector<std::vector<TreeNode>> levels_;
};

/// One grid field per node of a tree level.
using TreeField = std::vector<GridField>;

/// Parent fields as the arithmetic mean of the two children, node by node.
inline TreeField conditional_expectation(const NoiseTree& tree, std::size_t level, const TreeField& field) {
    if (level < 1 || level > tree.n_levels())
        fail(ErrorKind::invalid_argument, "noise-tree", "conditional expectation needs 1 <= level <= N");
    if (field.size() != tree.width(level))
        fail(ErrorKind::invalid_argument, "noise-tree", "tree field does not cover the level");
    TreeField parent(tree.width(level - 1));
    for (std::size_t k = 0; k < parent.size(); ++k) {
        const GridField& up = field[2 * k];
        const GridField& down = field[2 * k + 1];
        if (up.size() == 0 || down.size() == 0)
            fail(ErrorKind::invalid_argument, "noise-tree",
                 "missing child field below node " + std::to_string(k) + " of level " + std::to_string(level - 1));
        if (!(up.grid == down.grid)) fail(ErrorKind::invalid_argument, "noise-tree", "children on different grids");
        GridField mean(up.grid);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = 0.5 * (up[i] + down[i]);
        parent[k] = std::move(mean);
    }
    return parent;
}

/// Tree expectation of a scalar per node of a level.
inline double tree_expectation(const NoiseTree& tree, std::size_t level, const std::vector<double>& values) {
    double acc = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) acc += tree.node(level, k).probability * values[k];
    return acc;
}

// ---------------------------------------------------------------------------
// Path projection onto the admissible piecewise-affine paths

/// Projects a path sampled on a uniform fine grid of [0, T] (fine.size() - 1
/// steps, a multiple of 2^n) onto paths with increments in {+h, -h}, h = sqrt(T / 2^n):
/// each increment is the admissible value nearest to the gap between the path
/// and the projection built so far (ties go to +h). Returns sup |pi - W| over the fine grid.
inline double project_path(const std::vector<double>& fine, double T, std::size_t n) {
    const std::size_t steps = fine.size() - 1;
    const std::size_t coarse = std::size_t{1} << n;
    if (steps % coarse != 0)
        fail(ErrorKind::invalid_argument, "noise-tree", "fine path resolution must be a multiple of 2^n");
    const std::size_t ratio = steps / coarse;
    const double h = std::sqrt(T / static_cast<double>(coarse));
    double pi_left = fine[0];
    double err = std::abs(fine[0] - pi_left);
    for (std::size_t c = 0; c < coarse; ++c) {
        const double gap = fine[(c + 1) * ratio] - pi_left;
        const double inc = gap >= 0.0 ? h : -h;
        for (std::size_t r = 1; r <= ratio; ++r) {
            const double pi = pi_left + inc * static_cast<double>(r) / static_cast<double>(ratio);
            err = std::max(err, std::abs(pi - fine[c * ratio + r]));
        }
        pi_left += inc;
    }
    return err;
}

/// Monte Carlo estimate of E sup_t |pi^n(W)_t - W_t| on [0, 1].
inline double project_path_error(std::size_t n, std::size_t samples, std::uint64_t seed,
                                 std::size_t fine_log2 = 14) {
    if (n > 12) fail(ErrorKind::invalid_argument, "noise-tree", "projection level must be <= 12");
    if (samples < 100) fail(ErrorKind::invalid_argument, "noise-tree", "need at least 100 sample paths");
    fine_log2 = std::max(fine_log2, n);
    const std::size_t steps = std::size_t{1} << fine_log2;
    const double T = 1.0;
    const double sd = std::sqrt(T / static_cast<double>(steps));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> path(steps + 1);
    double acc = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        path[0] = 0.0;
        for (std::size_t k = 1; k <= steps; ++k) path[k] = path[k - 1] + sd * normal(rng);
        acc += project_path(path, T, n);
    }
    return acc / static_cast<double>(samples);
}

}  // namespace mfgcn
