#pragma once

// Built-in problem library: quadratic, relativistic and separated-gaussian.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mfgcn/det_hjb.hpp"
#include "mfgcn/fokker_planck.hpp"
#include "mfgcn/mfg.hpp"
#include "mfgcn/transform.hpp"

namespace mfgcn {

// ---------------------------------------------------------------------------
// Building blocks

inline double gaussian_kernel(double z, double width) {
    return std::exp(-0.5 * z * z / (width * width)) / (width * std::sqrt(2.0 * std::numbers::pi));
}

/// sup |rho_w'| = exp(-1/2) / (w^2 sqrt(2 pi)), the Lipschitz constant of rho_w * m in d_1 <= d_2.
inline double gaussian_kernel_lipschitz(double width) {
    return std::exp(-0.5) / (width * width * std::sqrt(2.0 * std::numbers::pi));
}

/// kappa (rho_w * m)(x) at the requested points. When the points are uniformly
/// spaced with the density's dx the kernel is tabulated once per offset.
inline std::vector<double> gaussian_convolution(double kappa, double width, std::span<const double> xs,
                                                const GridField& m) {
    const std::size_t n = xs.size(), nm = m.size();
    const double dx = m.grid.dx();
    std::vector<double> out(n, 0.0);
    bool uniform = n >= 2 && std::abs((xs[1] - xs[0]) - dx) <= 1e-12 * dx &&
                   std::abs((xs[n - 1] - xs[0]) - static_cast<double>(n - 1) * dx) <= 1e-9 * dx;
    if (uniform) {
        const double offset = xs[0] - m.grid.x_min();
        // z = offset + (i - j) dx with i - j in [-(nm - 1), n - 1]
        std::vector<double> table(n + nm - 1);
        for (std::size_t r = 0; r < table.size(); ++r)
            table[r] = gaussian_kernel(offset + (static_cast<double>(r) - static_cast<double>(nm - 1)) * dx, width);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < nm; ++j) acc += table[i + nm - 1 - j] * m[j];
            out[i] = kappa * acc * dx;
        }
        return out;
    }
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < nm; ++j) acc += gaussian_kernel(xs[i] - m.grid.x(j), width) * m[j];
        out[i] = kappa * acc * dx;
    }
    return out;
}

/// Normalised discrete Gaussian density on a grid.
inline GridField gaussian_density_on(const Grid1D& grid, double mean, double sd) {
    GridField m = GridField::sample(grid, [&](double x) {
        const double z = (x - mean) / sd;
        return std::exp(-0.5 * z * z);
    });
    const double total = mass(m);
    for (double& v : m.values) v /= total;
    return m;
}

inline HamiltonianSpec quadratic_hamiltonian() {
    HamiltonianSpec h;
    h.name = "p^2/2";
    h.eval = [](double, double, double p) { return 0.5 * p * p; };
    h.grad_p = [](double, double, double p) { return p; };
    h.grad_x = [](double, double, double) { return 0.0; };
    h.lambda0 = 1.0;
    h.C0 = 0.0;
    h.convexity_modulus = 1.0;
    return h;
}

/// H = p^2/2 + b sin(x) p + c; satisfies the structural conditions with
/// lambda0 = 1 and C0 = c + b^2 (the bound is attained).
inline HamiltonianSpec drifted_quadratic_hamiltonian(double b, double c) {
    HamiltonianSpec h;
    h.name = "p^2/2 + b sin(x) p + c";
    h.eval = [b, c](double, double x, double p) { return 0.5 * p * p + b * std::sin(x) * p + c; };
    h.grad_p = [b](double, double x, double p) { return p + b * std::sin(x); };
    h.grad_x = [b](double, double x, double p) { return b * std::cos(x) * p; };
    h.lambda0 = 1.0;
    h.C0 = c + b * b;
    h.convexity_modulus = 1.0;
    return h;
}

/// H = sqrt(1 + p^2) - 1, uniformly convex on |p| <= p_max only.
inline HamiltonianSpec relativistic_hamiltonian(double p_max) {
    HamiltonianSpec h;
    h.name = "sqrt(1+p^2)-1";
    h.eval = [](double, double, double p) { return std::sqrt(1.0 + p * p) - 1.0; };
    h.grad_p = [](double, double, double p) { return p / std::sqrt(1.0 + p * p); };
    h.grad_x = [](double, double, double) { return 0.0; };
    h.lambda0 = 1.0;
    h.C0 = 0.0;
    h.convexity_modulus = std::pow(1.0 + p_max * p_max, -1.5);
    return h;
}

// ---------------------------------------------------------------------------
// Library

struct ProblemParams {
    std::string name = "separated-gaussian";
    double T = 0.5;
    double beta = 0.2;
    std::size_t n_levels = 4;
    std::size_t grid_points = 256;
    double half_width = 0.0;  // <= 0: drift bound * T + 3
    std::size_t steps_per_slab = 0;  // 0: smallest stable value
    double coupling_F = 1.0, coupling_G = 0.5, kernel_width = 0.5;
};

struct LibraryProblem {
    ProblemParams params;
    ProblemData data;
    MeasureDependence dependence;
    GridField m0;
    Grid1D grid;
    NoiseTree tree;
    std::size_t steps_per_slab = 1;
    double p_bound = 1.0;     // a-priori bound on |Du| used for step selection and lattices
    double drift_bound = 1.0;  // sup |D_p H| for |p| <= p_bound
    StructureLattice lattice;

    double G_no_measure(double x) const {
        const double xs[1] = {x};
        return data.coupling.G(0.0, xs, m0)[0];
    }
    /// Terminal datum G(., m0) on the grid.
    GridField terminal_at_m0() const {
        const auto xs = grid.nodes();
        return GridField(grid, data.coupling.G(params.T, xs, m0));
    }

    MFGProblem mfg(const FixpointConfig& fp = {}) const {
        MFGProblem p;
        p.data = data;
        p.dependence = dependence;
        p.m0 = m0;
        p.tree = tree;
        p.steps_per_slab = steps_per_slab;
        p.fixpoint = fp;
        return p;
    }
};

inline const std::vector<std::string>& library_names() {
    static const std::vector<std::string> names{"quadratic", "relativistic", "separated-gaussian"};
    return names;
}

inline LibraryProblem make_problem(const ProblemParams& params) {
    LibraryProblem lp;
    lp.params = params;
    if (!(params.T > 0.0)) fail(ErrorKind::configuration, "problems", "T must be positive");
    if (params.grid_points < 8) fail(ErrorKind::configuration, "problems", "grid needs at least 8 points");

    if (params.name == "quadratic") {
        // kinked, semiconcave terminal cost; running cost pushes u down so the
        // gamma functional grows backward in time
        lp.data.h = drifted_quadratic_hamiltonian(0.5, 1.0);
        lp.data.diff = DiffusionSpec::zero();
        lp.data.coupling.name = "none";
        lp.data.coupling.G = [](double, std::span<const double> xs, const GridField&) {
            std::vector<double> g(xs.size());
            for (std::size_t i = 0; i < xs.size(); ++i) g[i] = std::min(xs[i] * xs[i], 1.0);
            return g;
        };
        lp.data.coupling.G_depends_on_measure = false;
        lp.dependence.mode = MeasureDependence::Mode::none;
        lp.p_bound = 3.0;
    } else if (params.name == "relativistic") {
        lp.p_bound = 4.0;
        lp.data.h = relativistic_hamiltonian(lp.p_bound);
        lp.data.diff = {[](double, double x) { return 0.3 * std::exp(-x * x); }, 0.6 * std::exp(-0.5) };
        lp.data.coupling.name = "none";
        lp.data.coupling.G = [](double, std::span<const double> xs, const GridField&) {
            std::vector<double> g(xs.size());
            for (std::size_t i = 0; i < xs.size(); ++i) g[i] = std::sqrt(1.0 + xs[i] * xs[i]);
            return g;
        };
        lp.data.coupling.G_depends_on_measure = false;
        lp.dependence.mode = MeasureDependence::Mode::none;
    } else if (params.name == "separated-gaussian") {
        lp.data.h = quadratic_hamiltonian();
        lp.data.h.C0 = 0.0;
        // Sigma vanishes for |x| >= 2: degenerate idiosyncratic noise
        lp.data.diff = {[](double, double x) {
                            const double s = 1.0 - 0.25 * x * x;
                            return s > 0.0 ? 0.3 * s * s : 0.0;
                        },
                        0.3 * 4.0 / (3.0 * std::sqrt(3.0))};
        const double kF = params.coupling_F, kG = params.coupling_G, w = params.kernel_width;
        lp.data.coupling.name = "gaussian-kernel";
        if (kF != 0.0)
            lp.data.coupling.F = [kF, w](double, std::span<const double> xs, const GridField& m) {
                return gaussian_convolution(kF, w, xs, m);
            };
        lp.data.coupling.G = [kG, w](double, std::span<const double> xs, const GridField& m) {
            std::vector<double> g = gaussian_convolution(kG, w, xs, m);
            for (std::size_t i = 0; i < xs.size(); ++i) g[i] += 0.5 * (1.0 - std::exp(-xs[i] * xs[i]));
            return g;
        };
        lp.data.coupling.G_depends_on_measure = kG != 0.0;
        lp.data.coupling.declared_monotone = kF >= 0.0 && kG >= 0.0;
        lp.data.coupling.lipschitz_d2 = (std::abs(kF) + std::abs(kG)) * gaussian_kernel_lipschitz(w);
        lp.dependence.mode = MeasureDependence::Mode::separated;
        lp.dependence.lipschitz_in_d2 = lp.data.coupling.lipschitz_d2;
        lp.p_bound = 2.0;
    } else {
        fail(ErrorKind::configuration, "problems",
             "unknown problem '" + params.name + "' (quadratic | relativistic | separated-gaussian)");
    }

    lp.drift_bound = sup_grad_p(lp.data.h, 0.0, -4.0, 4.0, lp.p_bound);
    const double half = params.half_width > 0.0 ? params.half_width : lp.drift_bound * params.T + 3.0;
    lp.grid = Grid1D(-half, half, params.grid_points);
    lp.m0 = gaussian_density_on(lp.grid, 0.0, 0.5);
    lp.tree = NoiseTree(params.n_levels, params.T, params.beta);

    if (params.steps_per_slab > 0) {
        lp.steps_per_slab = params.steps_per_slab;
    } else {
        // common-noise shifts move the data by at most sqrt(2 beta) sqrt(N T)
        const double reach = std::sqrt(2.0 * params.beta * params.T * static_cast<double>(params.n_levels));
        const Grid1D wide(-half - reach, half + reach, params.grid_points);
        const std::size_t hjb = hjb_auto_steps(lp.data.h, lp.data.diff, 0.0, wide, 0.0, params.T, lp.p_bound);
        const double a_max = detail::sup_diffusion(lp.data.diff, wide, 0.0, params.T);
        const std::size_t fp = fp_auto_steps(a_max + 1e-3 * (a_max + 1.0), lp.drift_bound, lp.grid.dx(), params.T);
        const std::size_t total = std::max(hjb, fp);
        lp.steps_per_slab = (total + params.n_levels - 1) / params.n_levels;
    }

    lp.lattice.T = params.T;
    lp.lattice.x_min = -half;
    lp.lattice.x_max = half;
    lp.lattice.p_radius = lp.p_bound;
    return lp;
}

inline LibraryProblem make_problem(const std::string& name) {
    ProblemParams p;
    p.name = name;
    return make_problem(p);
}

}  // namespace mfgcn
