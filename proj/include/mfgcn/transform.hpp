#pragma once

// Common-noise change of variables. With s = sqrt(2 beta) W_t the shifted
// unknowns are u~(x) = u(x + s) and m~ = (Id - s)#m; the shifted data evaluate
// the original data at x + s against the pushed-forward measure (Id + s)#m~.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mfgcn/core.hpp"
#include "mfgcn/hamiltonian.hpp"
#include "mfgcn/noise_tree.hpp"

namespace mfgcn {

/// The same values carried by the grid translated by s. For a density this is
/// the exact push-forward (Id + s)#m; for a function it is x -> f(x - s).
inline GridField translate(const GridField& f, double s) {
    if (s == 0.0) return f;
    const Grid1D& g = f.grid;
    return GridField(Grid1D(g.x_min() + s, g.x_max() + s, g.size()), f.values);
}

/// The density x -> m(x + s) resampled on m's grid (linear interpolation, zero
/// extension). Lost mass up to 1e-6 is restored by renormalization, except for
/// shifts by whole cells, which stay exact index shifts.
inline GridField shift_density(const GridField& m, double s) {
    if (s == 0.0) return m;
    const Grid1D& g = m.grid;
    const double offset = s / g.dx();
    const double nearest = std::round(offset);
    const bool on_grid = std::abs(offset - nearest) <= 1e-9;
    GridField out(g);
    if (on_grid) {
        const auto k = static_cast<std::ptrdiff_t>(nearest);
        const auto n = static_cast<std::ptrdiff_t>(g.size());
        for (std::ptrdiff_t i = 0; i < n; ++i)
            if (i + k >= 0 && i + k < n) out[static_cast<std::size_t>(i)] = m[static_cast<std::size_t>(i + k)];
    } else {
        for (std::size_t i = 0; i < g.size(); ++i) out[i] = interpolate_zero(m, g.x(i) + s);
    }
    const double before = mass(m), after = mass(out);
    if (std::abs(after - before) > 1e-6 * std::max(1.0, std::abs(before)))
        fail(ErrorKind::domain_too_small, "transform",
             "shifting by " + std::to_string(s) + " moves mass " + std::to_string(before - after) +
                 " out of the truncated domain");
    if (!on_grid && after > 0.0 && after != before)
        for (double& v : out.values) v *= before / after;
    return out;
}

/// The function x -> u(x + s) resampled on u's grid (linear interpolation with the end slopes continued).
inline GridField shift_function(const GridField& u, double s) {
    if (s == 0.0) return u;
    GridField out(u.grid);
    for (std::size_t i = 0; i < u.size(); ++i) out[i] = interpolate(u, u.grid.x(i) + s);
    return out;
}

/// Deterministic problem data before the change of variables.
struct ProblemData {
    HamiltonianSpec h;
    DiffusionSpec diff = DiffusionSpec::zero();
    CouplingSpec coupling;
};

struct ShiftedData {
    std::size_t level = 0, index = 0;
    double shift = 0.0;
    HamiltonianSpec h;
    DiffusionSpec diff;
    CouplingFieldFn F;  // empty when the original has no running coupling
    CouplingFieldFn G;
};

/// f~(t, x, m~) = f(t, x + s, (Id + s)# m~).
inline CouplingFieldFn shift_coupling_field(const CouplingFieldFn& f, double s) {
    if (!f || s == 0.0) return f;
    return [f, s](double t, std::span<const double> xs, const GridField& m) {
        std::vector<double> ys(xs.begin(), xs.end());
        for (double& y : ys) y += s;
        return f(t, ys, translate(m, s));
    };
}

/// Shifted data for shift s; at s = 0 the original callables are returned untouched.
inline ShiftedData build_shifted_data(const ProblemData& data, double s) {
    ShiftedData out;
    out.shift = s;
    if (s == 0.0) {
        out.h = data.h;
        out.diff = data.diff;
        out.F = data.coupling.F;
        out.G = data.coupling.G;
        return out;
    }
    out.h = data.h;
    const HamiltonianSpec base = data.h;
    out.h.eval = [base, s](double t, double x, double p) { return base.eval(t, x + s, p); };
    out.h.grad_p = [base, s](double t, double x, double p) { return base.grad_p(t, x + s, p); };
    out.h.grad_x = [base, s](double t, double x, double p) { return base.grad_x(t, x + s, p); };
    out.diff = data.diff;
    if (data.diff.sigma) {
        auto sigma = data.diff.sigma;
        out.diff.sigma = [sigma, s](double t, double x) { return sigma(t, x + s); };
    }
    out.F = shift_coupling_field(data.coupling.F, s);
    out.G = shift_coupling_field(data.coupling.G, s);
    return out;
}

inline ShiftedData build_node_data(const ProblemData& data, const NoiseTree& tree, std::size_t level,
                                   std::size_t index) {
    ShiftedData out = build_shifted_data(data, tree.shift(level, index));
    out.level = level;
    out.index = index;
    return out;
}

// ---------------------------------------------------------------------------
// Moving whole tree solutions between the two systems

/// Value and density snapshots on the tree: entry [j][k] is node k of the level
/// active at global step j (level min(j / steps_per_slab, N)), all on one grid.
struct TreeSnapshots {
    NoiseTree tree;
    std::size_t steps_per_slab = 1;
    std::vector<std::vector<GridField>> u, m;

    std::size_t level_at(std::size_t j) const { return std::min(j / steps_per_slab, tree.n_levels()); }
};

/// u_t(x) = u~_t(x - s), m_t = (Id + s)# m~_t, node by node, resampled on the common grid.
inline TreeSnapshots to_original(const TreeSnapshots& tilde) {
    TreeSnapshots out = tilde;
    for (std::size_t j = 0; j < tilde.u.size(); ++j) {
        const std::size_t level = tilde.level_at(j);
        for (std::size_t k = 0; k < tilde.u[j].size(); ++k) {
            const double s = tilde.tree.shift(level, k);
            out.u[j][k] = shift_function(tilde.u[j][k], -s);
            if (j < tilde.m.size()) out.m[j][k] = shift_density(tilde.m[j][k], -s);
        }
    }
    return out;
}

/// Inverse of to_original: u~_t(x) = u_t(x + s), m~_t = (Id - s)# m_t.
inline TreeSnapshots to_tilde(const TreeSnapshots& original) {
    TreeSnapshots out = original;
    for (std::size_t j = 0; j < original.u.size(); ++j) {
        const std::size_t level = original.level_at(j);
        for (std::size_t k = 0; k < original.u[j].size(); ++k) {
            const double s = original.tree.shift(level, k);
            out.u[j][k] = shift_function(original.u[j][k], s);
            if (j < original.m.size()) out.m[j][k] = shift_density(original.m[j][k], s);
        }
    }
    return out;
}

/// Martingale integrand of the original system at the jump into node (level, index):
/// v~ = dM / (W increment) in shifted coordinates, and v(y) = v~(y - s) + sqrt(2 beta) Du(y)
/// with u the original value at the jump time. Only the jump-resolution object is reported;
/// the continuum integrand is a distribution in general.
inline GridField martingale_integrand(const NoiseTree& tree, std::size_t level, std::size_t index,
                                      const GridField& dM, const GridField& u_original) {
    const TreeNode& node = tree.node(level, index);
    const double s = tree.shift(level, index);
    GridField v_tilde(dM.grid);
    for (std::size_t i = 0; i < dM.size(); ++i) v_tilde[i] = dM[i] / node.increment;
    const GridField v_shifted = shift_function(v_tilde, -s);
    const std::vector<double> du = gradient_field(u_original.values, u_original.grid.dx());
    GridField v(dM.grid);
    const double c = std::sqrt(2.0 * tree.beta());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = v_shifted[i] + c * du[i];
    return v;
}

}  // namespace mfgcn
