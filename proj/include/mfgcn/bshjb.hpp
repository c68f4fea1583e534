#pragma once

// Backward stochastic HJB on the noise tree. On each slab [t_n, t_{n+1}) every
// level-n node runs a deterministic solve with data frozen at t_n, started from
// the mean of its two children; the gaps child - mean are the martingale
// increments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mfgcn/det_hjb.hpp"
#include "mfgcn/noise_tree.hpp"
#include "mfgcn/parallel.hpp"

namespace mfgcn {

/// Data used by a node on its slab.
struct NodeData {
    HamiltonianSpec h;
    DiffusionSpec diff = DiffusionSpec::zero();
    CoefficientHook hook;  // optional, e.g. a running coupling F(x, m_t) entering as a source
};

using NodeDataFn = std::function<NodeData(std::size_t level, std::size_t index)>;
using LeafTerminalFn = std::function<GridField(std::size_t leaf_index)>;

struct BSHJBProblem {
    NoiseTree tree;
    Grid1D grid;
    std::size_t steps_per_slab = 1;
    double epsilon = 0.0;
    NodeDataFn data;
    LeafTerminalFn terminal;
};

struct NodeStats {
    double sup = 0.0, lip = 0.0, sc = 0.0;
    std::vector<double> gamma;  // over the slab's time levels
};

struct BSHJBSolution {
    NoiseTree tree;
    Grid1D grid;
    std::size_t steps_per_slab = 1;
    // u[n][k][s] is the value at t_n + s dt for node k of level n, s = 0..S; u[n][k][S] is
    // the slab's terminal datum (the conditional mean of the children).
    std::vector<std::vector<std::vector<GridField>>> u;
    std::vector<GridField> leaf_terminal;  // G per leaf
    std::vector<TreeField> dM;             // dM[n] for n = 1..N, one field per node of level n
    std::vector<std::vector<NodeStats>> stats;

    double dt() const { return tree.dt_noise() / static_cast<double>(steps_per_slab); }
    std::size_t total_steps() const { return tree.n_levels() * steps_per_slab; }
    double time(std::size_t j) const {
        return j == total_steps() ? tree.horizon() : static_cast<double>(j) * dt();
    }

    /// Right-continuous value at global step j seen from the path ending at `leaf`.
    const GridField& value_on_path(std::size_t leaf, std::size_t j) const {
        const std::size_t N = tree.n_levels();
        if (j >= total_steps()) return leaf_terminal.at(leaf);
        const std::size_t n = j / steps_per_slab;
        return u[n][NoiseTree::ancestor(N, leaf, n)][j - n * steps_per_slab];
    }

    /// Field at global step j for a node of the level active at j (node index at level j / S).
    const GridField& value_at(std::size_t j, std::size_t index) const {
        if (j >= total_steps()) return leaf_terminal.at(index);
        const std::size_t n = j / steps_per_slab;
        return u[n].at(index)[j - n * steps_per_slab];
    }
    std::size_t level_at(std::size_t j) const {
        return std::min(j / steps_per_slab, tree.n_levels());
    }

    const GridField& root() const { return u[0][0][0]; }
};

inline BSHJBSolution solve_bshjb(const BSHJBProblem& prob) {
    const NoiseTree& tree = prob.tree;
    const std::size_t N = tree.n_levels();
    if (prob.steps_per_slab < 1) fail(ErrorKind::invalid_argument, "bshjb", "steps_per_slab must be >= 1");
    if (!prob.data || !prob.terminal) fail(ErrorKind::invalid_argument, "bshjb", "node data and terminal required");

    BSHJBSolution sol;
    sol.tree = tree;
    sol.grid = prob.grid;
    sol.steps_per_slab = prob.steps_per_slab;
    sol.u.resize(N);
    sol.dM.resize(N + 1);
    sol.stats.resize(N);
    sol.leaf_terminal.resize(tree.width(N));
    for (std::size_t k = 0; k < tree.width(N); ++k) {
        sol.leaf_terminal[k] = prob.terminal(k);
        if (!(sol.leaf_terminal[k].grid == prob.grid))
            fail(ErrorKind::invalid_argument, "bshjb", "terminal field for leaf " + std::to_string(k) + " off-grid");
    }

    for (std::size_t n = N; n-- > 0;) {
        TreeField children(tree.width(n + 1));
        for (std::size_t k = 0; k < children.size(); ++k)
            children[k] = (n + 1 == N) ? sol.leaf_terminal[k] : sol.u[n + 1][k][0];
        TreeField terminal = conditional_expectation(tree, n + 1, children);

        TreeField& jumps = sol.dM[n + 1];
        jumps.resize(children.size());
        for (std::size_t k = 0; k < children.size(); ++k) {
            GridField d(prob.grid);
            const GridField& mean = terminal[k / 2];
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = children[k][i] - mean[i];
            jumps[k] = std::move(d);
        }

        sol.u[n].resize(tree.width(n));
        sol.stats[n].resize(tree.width(n));
        const double t_left = tree.jump_time(n), t_right = tree.jump_time(n + 1);
        parallel_for(tree.width(n), [&](std::size_t k) {
            NodeData data = prob.data(n, k);
            DetHJBProblem det;
            det.h = std::move(data.h);
            det.diff = std::move(data.diff);
            det.hook = std::move(data.hook);
            det.terminal = terminal[k];
            det.tgrid = TimeGrid(t_right, prob.steps_per_slab, t_left);
            det.epsilon = prob.epsilon;
            det.frozen_time = t_left;
            DetHJBSolution s;
            try {
                s = solve_det_hjb(det);
            } catch (const Error& e) {
                fail(e.kind(), "bshjb",
                     "node (level " + std::to_string(n) + ", index " + std::to_string(k) + "): " + e.what());
            }
            NodeStats st;
            st.sup = *std::max_element(s.sup_series.begin(), s.sup_series.end());
            st.lip = *std::max_element(s.lip_series.begin(), s.lip_series.end());
            st.sc = *std::max_element(s.sc_series.begin(), s.sc_series.end());
            st.gamma = std::move(s.gamma_series);
            sol.stats[n][k] = std::move(st);
            sol.u[n][k] = std::move(s.u);
        });
    }
    return sol;
}

/// max over levels, parents and grid points of |mean of the two children's increments|.
inline double martingale_residual(const std::vector<TreeField>& dM) {
    double worst = 0.0;
    for (const TreeField& level : dM)
        for (std::size_t k = 0; k + 1 < level.size(); k += 2)
            for (std::size_t i = 0; i < level[k].size(); ++i)
                worst = std::max(worst, std::abs(0.5 * (level[k][i] + level[k + 1][i])));
    return worst;
}

inline double martingale_residual(const BSHJBSolution& sol) { return martingale_residual(sol.dM); }

/// Uniform bounds over all nodes and times: (sup |u|, Lipschitz, semiconcavity).
struct UniformBounds {
    double sup = 0.0, lip = 0.0, sc = 0.0;
};

inline UniformBounds uniform_bounds(const BSHJBSolution& sol) {
    UniformBounds b;
    for (const auto& level : sol.stats)
        for (const auto& st : level) {
            b.sup = std::max(b.sup, st.sup);
            b.lip = std::max(b.lip, st.lip);
            b.sc = std::max(b.sc, st.sc);
        }
    return b;
}

// ---------------------------------------------------------------------------
// Comparison and stability

struct ComparisonReport {
    double min_difference = std::numeric_limits<double>::infinity();  // min of u1 - u2
    bool passed = false;
};

/// Verifies H1 <= H2 and G1 >= G2 on the lattice (grid x [-p_radius, p_radius]
/// at each slab's frozen time) and reports min(u1 - u2) over nodes, times and points.
inline ComparisonReport comparison_test(const BSHJBProblem& p1, const BSHJBProblem& p2, double p_radius = 4.0,
                                        std::size_t n_p = 33) {
    const NoiseTree& tree = p1.tree;
    if (tree.n_levels() != p2.tree.n_levels() || !(p1.grid == p2.grid) || p1.steps_per_slab != p2.steps_per_slab)
        fail(ErrorKind::invalid_argument, "bshjb", "comparison needs a shared tree and grids");
    const Grid1D& grid = p1.grid;
    for (std::size_t n = 0; n < tree.n_levels(); ++n)
        for (std::size_t k = 0; k < tree.width(n); ++k) {
            const NodeData d1 = p1.data(n, k), d2 = p2.data(n, k);
            const double t = tree.jump_time(n);
            for (std::size_t i = 0; i < grid.size(); ++i)
                for (std::size_t ip = 0; ip < n_p; ++ip) {
                    const double p = -p_radius + 2.0 * p_radius * static_cast<double>(ip) / static_cast<double>(n_p - 1);
                    const double x = grid.x(i);
                    if (d1.h.eval(t, x, p) > d2.h.eval(t, x, p) + 1e-14) {
                        std::ostringstream os;
                        os << "H1 > H2 at node (" << n << "," << k << "), t=" << t << " x=" << x << " p=" << p;
                        fail(ErrorKind::invalid_argument, "bshjb", os.str());
                    }
                }
        }
    for (std::size_t k = 0; k < tree.width(tree.n_levels()); ++k) {
        const GridField g1 = p1.terminal(k), g2 = p2.terminal(k);
        for (std::size_t i = 0; i < grid.size(); ++i)
            if (g1[i] < g2[i] - 1e-14) {
                std::ostringstream os;
                os << "G1 < G2 at leaf " << k << ", x=" << grid.x(i);
                fail(ErrorKind::invalid_argument, "bshjb", os.str());
            }
    }
    const BSHJBSolution s1 = solve_bshjb(p1), s2 = solve_bshjb(p2);
    ComparisonReport rep;
    for (std::size_t n = 0; n < s1.u.size(); ++n)
        for (std::size_t k = 0; k < s1.u[n].size(); ++k)
            for (std::size_t s = 0; s < s1.u[n][k].size(); ++s)
                for (std::size_t i = 0; i < grid.size(); ++i)
                    rep.min_difference = std::min(rep.min_difference, s1.u[n][k][s][i] - s2.u[n][k][s][i]);
    rep.passed = rep.min_difference >= -1e-10;
    return rep;
}

struct StabilityEstimate {
    double lhs = 0.0;  // sup_t E ||u1_t - u2_t||_{inf, B_R}^3
    double rhs = 0.0;  // E[ sup_t ||a1 - a2||_{C^{0,1}} + ||H1 - H2||_inf + ||G1 - G2||_inf ]
    double ratio() const { return rhs > 0.0 ? lhs / rhs : (lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0); }
};

inline StabilityEstimate stability_estimate(const BSHJBProblem& p1, const BSHJBProblem& p2, double R,
                                            double p_radius = 4.0, std::size_t n_p = 33) {
    const BSHJBSolution s1 = solve_bshjb(p1), s2 = solve_bshjb(p2);
    const NoiseTree& tree = p1.tree;
    const Grid1D& grid = p1.grid;
    const std::size_t N = tree.n_levels();
    StabilityEstimate est;

    for (std::size_t j = 0; j <= s1.total_steps(); ++j) {
        const std::size_t level = s1.level_at(j);
        double e = 0.0;
        for (std::size_t k = 0; k < tree.width(level); ++k) {
            const GridField& a = s1.value_at(j, k);
            const GridField& b = s2.value_at(j, k);
            double d = 0.0;
            for (std::size_t i = 0; i < grid.size(); ++i)
                if (std::abs(grid.x(i)) <= R + 1e-12) d = std::max(d, std::abs(a[i] - b[i]));
            e += tree.node(level, k).probability * d * d * d;
        }
        est.lhs = std::max(est.lhs, e);
    }

    // per-node data distances on each slab, combined along leaf paths
    std::vector<std::vector<double>> a_dist(N), h_dist(N);
    for (std::size_t n = 0; n < N; ++n) {
        a_dist[n].resize(tree.width(n));
        h_dist[n].resize(tree.width(n));
        const double t = tree.jump_time(n);
        for (std::size_t k = 0; k < tree.width(n); ++k) {
            const NodeData d1 = p1.data(n, k), d2 = p2.data(n, k);
            std::vector<double> diff(grid.size());
            double hd = 0.0;
            for (std::size_t i = 0; i < grid.size(); ++i) {
                const double x = grid.x(i);
                diff[i] = d1.diff.a(t, x) - d2.diff.a(t, x);
                for (std::size_t ip = 0; ip < n_p; ++ip) {
                    const double p = -p_radius + 2.0 * p_radius * static_cast<double>(ip) / static_cast<double>(n_p - 1);
                    hd = std::max(hd, std::abs(d1.h.eval(t, x, p) - d2.h.eval(t, x, p)));
                }
            }
            a_dist[n][k] = sup_norm(diff) + lipschitz_constant(diff, grid.dx());
            h_dist[n][k] = hd;
        }
    }
    for (std::size_t leaf = 0; leaf < tree.width(N); ++leaf) {
        double a_sup = 0.0, h_sup = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t k = NoiseTree::ancestor(N, leaf, n);
            a_sup = std::max(a_sup, a_dist[n][k]);
            h_sup = std::max(h_sup, h_dist[n][k]);
        }
        double g = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i)
            g = std::max(g, std::abs(s1.leaf_terminal[leaf][i] - s2.leaf_terminal[leaf][i]));
        est.rhs += tree.node(N, leaf).probability * (a_sup + h_sup + g);
    }
    return est;
}

// ---------------------------------------------------------------------------
// Control representation by Monte Carlo
//
// The value is the cost of the controlled dynamics dX = alpha ds + sqrt(2 a) dB
// with running cost H*(X, -alpha). The optimal feedback is alpha* = -D_p H(X, Du),
// whose running cost is p D_p H(p) - H(p) at p = Du(X).

struct MCReport {
    double u0 = 0.0;  // value read from the solution at (0, x0)
    double mean_cost = 0.0, std_error = 0.0;
    double zero_control_cost = 0.0, zero_control_se = 0.0;
    double tolerance = 0.0;
    std::size_t paths = 0, discarded = 0;
    bool matches = false, suboptimal_confirmed = false;
    bool passed() const { return matches && suboptimal_confirmed; }
};

inline MCReport control_representation_check(const BSHJBSolution& sol, const BSHJBProblem& prob, double x0,
                                             std::size_t mc_paths, std::uint64_t seed, double p_radius = 8.0) {
    const NoiseTree& tree = sol.tree;
    const Grid1D& grid = sol.grid;
    const std::size_t N = tree.n_levels(), S = sol.steps_per_slab;
    const double dt = sol.dt();
    if (mc_paths < 2) fail(ErrorKind::invalid_argument, "bshjb", "need at least two Monte Carlo paths");

    std::vector<std::vector<NodeData>> data(N);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < tree.width(n); ++k) {
            data[n].push_back(prob.data(n, k));
            if (data[n].back().hook)
                fail(ErrorKind::unsupported_mode, "bshjb", "control representation needs data without coefficient hooks");
        }
    // gradients of every stored field
    std::vector<std::vector<std::vector<GridField>>> grad(N);
    for (std::size_t n = 0; n < N; ++n) {
        grad[n].resize(tree.width(n));
        for (std::size_t k = 0; k < tree.width(n); ++k)
            for (std::size_t s = 0; s < S; ++s)
                grad[n][k].emplace_back(grid, gradient_field(sol.u[n][k][s].values, grid.dx()));
    }

    // running cost of the zero control, H*(x, 0), tabulated on the grid per node
    std::vector<std::vector<GridField>> zero_cost(N);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < tree.width(n); ++k) {
            const double t = tree.jump_time(n);
            zero_cost[n].push_back(GridField::sample(
                grid, [&](double x) { return legendre(data[n][k].h, t, x, 0.0, p_radius); }));
        }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    auto inside = [&](double x) { return x >= grid.x_min() && x <= grid.x_max(); };

    MCReport rep;
    rep.u0 = interpolate(sol.root(), x0);
    double sum = 0.0, sum2 = 0.0, zsum = 0.0, zsum2 = 0.0;
    std::size_t kept = 0, zkept = 0;
    for (std::size_t path = 0; path < mc_paths; ++path) {
        // tree branch and Brownian increments are shared by the optimal and zero-control runs
        double x = x0, xz = x0, cost = 0.0, zcost = 0.0;
        bool ok = true, zok = true;
        std::size_t k = 0;
        for (std::size_t n = 0; n < N; ++n) {
            if (n > 0) k = 2 * k + (coin(rng) ? 0 : 1);
            const NodeData& d = data[n][k];
            const double t = tree.jump_time(n);
            for (std::size_t s = 0; s < S; ++s) {
                const double z = normal(rng);
                if (ok) {
                    const double p = interpolate(grad[n][k][s], x);
                    const double hp = d.h.grad_p(t, x, p);
                    cost += (p * hp - d.h.eval(t, x, p)) * dt;
                    x += -hp * dt + std::sqrt(2.0 * d.diff.a(t, x) * dt) * z;
                    ok = inside(x);
                }
                if (zok) {
                    zcost += interpolate(zero_cost[n][k], xz) * dt;
                    xz += std::sqrt(2.0 * d.diff.a(t, xz) * dt) * z;
                    zok = inside(xz);
                }
            }
        }
        const std::size_t leaf = k;  // the final level-(N-1) node still has to pick its leaf
        const std::size_t leaf_index = 2 * leaf + (coin(rng) ? 0 : 1);
        if (ok) {
            cost += interpolate(sol.leaf_terminal[leaf_index], x);
            sum += cost;
            sum2 += cost * cost;
            ++kept;
        } else {
            ++rep.discarded;
        }
        if (zok) {
            zcost += interpolate(sol.leaf_terminal[leaf_index], xz);
            zsum += zcost;
            zsum2 += zcost * zcost;
            ++zkept;
        }
    }
    rep.paths = mc_paths;
    auto stats = [](double s, double s2, std::size_t n, double& mean, double& se) {
        mean = s / static_cast<double>(n);
        const double var = std::max(0.0, s2 / static_cast<double>(n) - mean * mean) * static_cast<double>(n) /
                           static_cast<double>(n - 1);
        se = std::sqrt(var / static_cast<double>(n));
    };
    if (kept < 2 || static_cast<double>(rep.discarded) > 0.01 * static_cast<double>(mc_paths))
        fail(ErrorKind::domain_too_small, "bshjb",
             std::to_string(rep.discarded) + " of " + std::to_string(mc_paths) + " paths left the truncated domain");
    stats(sum, sum2, kept, rep.mean_cost, rep.std_error);
    if (zkept >= 2) stats(zsum, zsum2, zkept, rep.zero_control_cost, rep.zero_control_se);
    rep.tolerance = 3.0 * rep.std_error + 5.0 * grid.dx();
    rep.matches = std::abs(rep.mean_cost - rep.u0) <= rep.tolerance;
    rep.suboptimal_confirmed =
        zkept >= 2 && rep.zero_control_cost >= rep.u0 - 3.0 * rep.zero_control_se - 5.0 * grid.dx();
    return rep;
}

}  // namespace mfgcn
