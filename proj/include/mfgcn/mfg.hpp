#pragma once

// MFG fixed point on the noise tree: for a frozen path-indexed density flow,
// solve the backward stochastic HJB in shifted coordinates, transport m0 along
// every tree path with the optimal drift, and relax (damped Picard or
// fictitious play) until the flow stops moving in d_2.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mfgcn/bshjb.hpp"
#include "mfgcn/fokker_planck.hpp"
#include "mfgcn/parallel.hpp"
#include "mfgcn/transform.hpp"

namespace mfgcn {

struct FixpointConfig {
    enum class Mode { picard, fictitious_play };
    Mode mode = Mode::picard;
    std::size_t max_iters = 50;
    double damping = 0.5;
    double tol_d2 = 1e-4;
    bool refine_epsilon = true;  // after convergence, iterate again with no FP regularization
};

inline const char* to_string(FixpointConfig::Mode mode) {
    return mode == FixpointConfig::Mode::picard ? "picard" : "fictitious-play";
}

/// Density flow on the tree: flow[n][k][s] is the density of node k of level n at
/// t_n + s dt, s = 0..S (entry S is the slab's end, shared by both children).
using SlabFlow = std::vector<std::vector<std::vector<GridField>>>;

struct MFGProblem {
    ProblemData data;
    MeasureDependence dependence;
    CouplingFieldFn sigma_of_m;  // general-lipschitz mode only: Sigma(t, x, m)
    GridField m0;
    NoiseTree tree;
    std::size_t steps_per_slab = 1;
    double hjb_epsilon = 0.0;
    double fp_epsilon = -1.0;     // negative: 1e-3 (sup a + 1)
    double mollify_delta = -1.0;  // negative: 2 dx
    FixpointConfig fixpoint;

    const Grid1D& grid() const { return m0.grid; }
    double dt() const { return tree.dt_noise() / static_cast<double>(steps_per_slab); }
    double delta() const { return mollify_delta < 0.0 ? 2.0 * grid().dx() : mollify_delta; }
    double default_fp_epsilon() const {
        if (fp_epsilon >= 0.0) return fp_epsilon;
        return 1e-3 * (detail::sup_diffusion(data.diff, grid(), 0.0, tree.horizon()) + 1.0);
    }
};

struct MFGSolution {
    BSHJBSolution hjb;  // value and martingale increments for the last input flow
    SlabFlow m;         // final iterate
    SlabFlow phi;       // best response to `input`, the flow that produced `hjb`
    SlabFlow input;
    std::vector<double> residual_series, refinement_series;
    std::size_t iterations = 0;
    bool converged = false;
    double fp_epsilon_loop = 0.0, fp_epsilon_final = 0.0;
    double martingale_residual = 0.0;
};

class NonConvergenceError : public Error {
public:
    NonConvergenceError(const std::string& message, std::vector<double> residuals, MFGSolution partial)
        : Error(ErrorKind::non_convergence, "mfg", message),
          residual_series(std::move(residuals)), partial_solution(std::move(partial)) {}
    std::vector<double> residual_series;
    MFGSolution partial_solution;
};

// ---------------------------------------------------------------------------
// Flows

inline SlabFlow constant_flow(const NoiseTree& tree, std::size_t S, const GridField& m) {
    SlabFlow flow(tree.n_levels());
    for (std::size_t n = 0; n < tree.n_levels(); ++n)
        flow[n].assign(tree.width(n), std::vector<GridField>(S + 1, m));
    return flow;
}

/// Uniform density over the grid at every node and time.
inline SlabFlow uniform_flow(const NoiseTree& tree, std::size_t S, const Grid1D& grid) {
    GridField u(grid, 1.0);
    const double total = mass(u);
    for (double& v : u.values) v /= total;
    return constant_flow(tree, S, u);
}

/// Density seen at global step j by the node of the active level (for j = N S, leaf k).
inline const GridField& flow_at(const SlabFlow& flow, std::size_t S, std::size_t j, std::size_t k) {
    const std::size_t N = flow.size();
    if (j >= N * S) return flow[N - 1][k / 2][S];
    const std::size_t n = j / S;
    return flow[n][k][j - n * S];
}

/// sup over time levels of the tree expectation of d_2 between two flows.
inline double flow_distance(const NoiseTree& tree, std::size_t S, const SlabFlow& a, const SlabFlow& b) {
    const std::size_t N = tree.n_levels();
    std::vector<double> per_step(N * S + 1, 0.0);
    parallel_for(N * S + 1, [&](std::size_t j) {
        const std::size_t level = std::min(j / S, N);
        // at t = T the two leaves of a parent carry the same shifted density
        const std::size_t width = level == N ? tree.width(N - 1) : tree.width(level);
        double acc = 0.0;
        for (std::size_t k = 0; k < width; ++k) {
            const std::size_t idx = level == N ? 2 * k : k;
            const GridField& ma = flow_at(a, S, j, idx);
            const GridField& mb = flow_at(b, S, j, idx);
            const double w = level == N ? 2.0 * tree.node(N, idx).probability : tree.node(level, k).probability;
            acc += w * wasserstein2_1d(ma, mb);
        }
        per_step[j] = acc;
    });
    return *std::max_element(per_step.begin(), per_step.end());
}

// ---------------------------------------------------------------------------
// One iteration

namespace detail {

inline void validate(const MFGProblem& prob) {
    using Mode = MeasureDependence::Mode;
    const auto& c = prob.data.coupling;
    if (!c.G) fail(ErrorKind::configuration, "mfg", "terminal cost G is required");
    if (prob.dependence.mode == Mode::none && (c.F || c.G_depends_on_measure))
        fail(ErrorKind::configuration, "mfg", "measure dependence 'none' needs F = 0 and G independent of m");
    if (prob.dependence.mode != Mode::general_lipschitz && prob.sigma_of_m)
        fail(ErrorKind::configuration, "mfg", "a measure-dependent diffusion needs general-lipschitz mode");
    if (prob.steps_per_slab < 1) fail(ErrorKind::invalid_argument, "mfg", "steps_per_slab must be >= 1");
    const auto& fp = prob.fixpoint;
    if (!(fp.damping > 0.0 && fp.damping <= 1.0)) fail(ErrorKind::configuration, "mfg", "damping must be in (0, 1]");
    if (fp.max_iters < 1) fail(ErrorKind::configuration, "mfg", "max_iters must be >= 1");
    if (!(fp.tol_d2 > 0.0)) fail(ErrorKind::configuration, "mfg", "tol_d2 must be positive");
    if (std::abs(mass(prob.m0) - 1.0) > 1e-10)
        fail(ErrorKind::invalid_argument, "mfg", "m0 must be a probability density");
}

/// Diffusion of a node on its slab: a~(t_n, x), or Sigma~(t, x, m~)^2 when it depends on m.
inline void node_diffusion(const MFGProblem& prob, const ShiftedData& nd, double t, const GridField& m,
                           std::span<double> a) {
    const Grid1D& grid = prob.grid();
    if (prob.sigma_of_m) {
        const auto xs = grid.nodes();
        const auto sig = shift_coupling_field(prob.sigma_of_m, nd.shift)(t, xs, m);
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = sig[i] * sig[i];
    } else {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = nd.diff.a(t, grid.x(i));
    }
}

inline BSHJBProblem hjb_problem(const MFGProblem& prob, const SlabFlow& flow) {
    const std::size_t S = prob.steps_per_slab;
    const Grid1D grid = prob.grid();
    BSHJBProblem bp;
    bp.tree = prob.tree;
    bp.grid = grid;
    bp.steps_per_slab = S;
    bp.epsilon = prob.hjb_epsilon;
    const double dt = prob.dt();
    bp.data = [&prob, &flow, grid, S, dt](std::size_t n, std::size_t k) {
        const ShiftedData nd = build_node_data(prob.data, prob.tree, n, k);
        NodeData out;
        out.h = nd.h;
        out.diff = nd.diff;
        const double t_n = prob.tree.jump_time(n);
        if (nd.F || prob.sigma_of_m) {
            const auto& slab = flow[n][k];
            const CouplingFieldFn F = nd.F;
            const double eps = prob.hjb_epsilon;
            out.hook = [&prob, nd, F, &slab, grid, t_n, dt, eps](std::size_t j, double, std::span<double> a,
                                                                  std::span<double> src) {
                // explicit step j+1 -> j reads the flow at its known level j+1
                const GridField& m = slab[j + 1];
                const double t = t_n + static_cast<double>(j + 1) * dt;
                if (F) {
                    const auto xs = grid.nodes();
                    const auto f = F(t, xs, m);
                    for (std::size_t i = 0; i < src.size(); ++i) src[i] = f[i];
                }
                if (prob.sigma_of_m) {
                    node_diffusion(prob, nd, t, m, a);
                    for (double& v : a) v += eps;
                }
            };
        }
        return out;
    };
    bp.terminal = [&prob, &flow, grid, S](std::size_t leaf) {
        const std::size_t N = prob.tree.n_levels();
        const ShiftedData nd = build_node_data(prob.data, prob.tree, N, leaf);
        const auto xs = grid.nodes();
        return GridField(grid, nd.G(prob.tree.horizon(), xs, flow[N - 1][leaf / 2][S]));
    };
    return bp;
}

}  // namespace detail

/// Drift b = D_p H~(t_n, x, D(rho_delta * u~)) from a value field.
inline GridField optimal_drift(const HamiltonianSpec& h, double t, const GridField& u, double delta) {
    const GridField smooth = mollify(u, delta);
    const auto du = gradient_field(smooth.values, smooth.grid.dx());
    GridField b(u.grid);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = h.grad_p(t, u.grid.x(i), du[i]);
    return b;
}

/// Transport on slab n for node k, started from `start`, using that node's value fields.
inline DensityPath slab_transport(const MFGProblem& prob, const BSHJBSolution& hjb, const SlabFlow& input,
                                  std::size_t n, std::size_t k, const GridField& start, double fp_eps) {
    const ShiftedData nd = build_node_data(prob.data, prob.tree, n, k);
    const double t_n = prob.tree.jump_time(n);
    const double delta = prob.delta();
    FPProblem fp;
    fp.m0 = start;
    fp.check_initial = false;
    fp.holder_samples = 0;
    fp.epsilon = fp_eps;
    fp.diff = nd.diff;
    fp.tgrid = TimeGrid(prob.tree.jump_time(n + 1), prob.steps_per_slab, t_n);
    const auto& fields = hjb.u[n][k];
    fp.drift = [&, t_n](std::size_t s, double) { return optimal_drift(nd.h, t_n, fields[s], delta); };
    const auto& slab = input[n][k];
    fp.diffusion_field = [&, t_n](std::size_t s, double, std::span<double> a) {
        if (prob.sigma_of_m)
            detail::node_diffusion(prob, nd, t_n + static_cast<double>(s) * prob.dt(), slab[s], a);
        else
            detail::node_diffusion(prob, nd, t_n, slab[s], a);
    };
    try {
        return solve_fp(fp);
    } catch (const Error& e) {
        fail(e.kind(), "mfg",
             "transport at node (level " + std::to_string(n) + ", index " + std::to_string(k) + "): " + e.what());
    }
}

/// Best response flow Phi(m): m0 carried along every path with the optimal drifts.
inline SlabFlow best_response(const MFGProblem& prob, const BSHJBSolution& hjb, const SlabFlow& input,
                              double fp_eps) {
    const std::size_t N = prob.tree.n_levels();
    SlabFlow phi(N);
    for (std::size_t n = 0; n < N; ++n) {
        phi[n].resize(prob.tree.width(n));
        parallel_for(prob.tree.width(n), [&](std::size_t k) {
            const GridField& start = n == 0 ? prob.m0 : phi[n - 1][k / 2].back();
            phi[n][k] = slab_transport(prob, hjb, input, n, k, start, fp_eps).m;
        });
    }
    return phi;
}

inline SlabFlow mix_flows(const SlabFlow& a, const SlabFlow& b, double weight_b) {
    SlabFlow out = a;
    for (std::size_t n = 0; n < out.size(); ++n)
        for (std::size_t k = 0; k < out[n].size(); ++k)
            for (std::size_t s = 0; s < out[n][k].size(); ++s)
                for (std::size_t i = 0; i < out[n][k][s].size(); ++i)
                    out[n][k][s][i] = (1.0 - weight_b) * a[n][k][s][i] + weight_b * b[n][k][s][i];
    return out;
}

namespace detail {

inline bool iterate(const MFGProblem& prob, MFGSolution& sol, SlabFlow& flow, double fp_eps,
                    std::vector<double>& series, std::size_t& iteration) {
    const std::size_t S = prob.steps_per_slab;
    const bool decoupled = prob.dependence.mode == MeasureDependence::Mode::none;
    for (std::size_t it = 0; it < prob.fixpoint.max_iters; ++it) {
        sol.hjb = solve_bshjb(hjb_problem(prob, flow));
        sol.phi = best_response(prob, sol.hjb, flow, fp_eps);
        sol.input = flow;
        double w = prob.fixpoint.damping;
        if (decoupled)
            w = 1.0;  // the best response does not depend on the flow
        else if (prob.fixpoint.mode == FixpointConfig::Mode::fictitious_play)
            w = 1.0 / static_cast<double>(iteration + 2);
        SlabFlow next = mix_flows(flow, sol.phi, w);
        const double r = flow_distance(prob.tree, S, next, flow);
        series.push_back(r);
        flow = std::move(next);
        ++iteration;
        if (r <= prob.fixpoint.tol_d2) return true;
    }
    return false;
}

}  // namespace detail

inline MFGSolution solve_mfg(const MFGProblem& prob, const SlabFlow* initial = nullptr) {
    detail::validate(prob);
    const std::size_t S = prob.steps_per_slab;
    MFGSolution sol;
    SlabFlow flow = initial ? *initial : constant_flow(prob.tree, S, prob.m0);
    sol.fp_epsilon_loop = prob.default_fp_epsilon();
    sol.fp_epsilon_final = sol.fp_epsilon_loop;
    std::size_t iteration = 0;
    sol.converged = detail::iterate(prob, sol, flow, sol.fp_epsilon_loop, sol.residual_series, iteration);
    if (sol.converged && prob.fixpoint.refine_epsilon && sol.fp_epsilon_loop > 0.0) {
        sol.fp_epsilon_final = 0.0;
        std::size_t refine_iteration = iteration;
        sol.converged = detail::iterate(prob, sol, flow, 0.0, sol.refinement_series, refine_iteration);
    }
    sol.iterations = iteration;
    sol.m = std::move(flow);
    sol.martingale_residual = martingale_residual(sol.hjb);
    if (!sol.converged) {
        const auto& series = sol.refinement_series.empty() ? sol.residual_series : sol.refinement_series;
        std::string msg = "fixed point not reached in " + std::to_string(prob.fixpoint.max_iters) +
                          " iterations (last residual " + std::to_string(series.back()) + ", tol " +
                          std::to_string(prob.fixpoint.tol_d2) + ")";
        if (!sol.refinement_series.empty()) msg += " during the unregularized refinement pass";
        auto residuals = sol.residual_series;
        throw NonConvergenceError(msg, std::move(residuals), std::move(sol));
    }
    return sol;
}

/// Recomputes the best-response flow of node (level, index) from its ancestors'
/// value fields only; equals sol.phi[level][index] exactly when the flow is adapted.
inline std::vector<GridField> recompute_node_flow(const MFGProblem& prob, const MFGSolution& sol, std::size_t level,
                                                  std::size_t index) {
    GridField start = prob.m0;
    std::vector<GridField> slab;
    for (std::size_t n = 0; n <= level; ++n) {
        const std::size_t k = index >> (level - n);
        slab = slab_transport(prob, sol.hjb, sol.input, n, k, start, sol.fp_epsilon_final).m;
        start = slab.back();
    }
    return slab;
}

/// Per-node snapshots (u~, m~) at every global step, the layout used by the transform module.
inline TreeSnapshots snapshots(const MFGSolution& sol, const NoiseTree& tree, std::size_t S) {
    TreeSnapshots snap;
    snap.tree = tree;
    snap.steps_per_slab = S;
    const std::size_t N = tree.n_levels();
    for (std::size_t j = 0; j <= N * S; ++j) {
        const std::size_t level = std::min(j / S, N);
        std::vector<GridField> us, ms;
        for (std::size_t k = 0; k < tree.width(level); ++k) {
            us.push_back(sol.hjb.value_at(j, k));
            ms.push_back(flow_at(sol.m, S, j, k));
        }
        snap.u.push_back(std::move(us));
        snap.m.push_back(std::move(ms));
    }
    return snap;
}

// ---------------------------------------------------------------------------
// Monotonicity and the duality gap

struct MonotonicityReport {
    double min_F = 0.0, min_G = 0.0;  // smallest pair integrals
    double min_total_separated = std::numeric_limits<double>::infinity();  // over pairs with d_2 > 1e-6
    std::size_t pairs = 0;
    bool passed = false;
};

inline double monotonicity_integral(const CouplingFieldFn& f, double t, const GridField& m1, const GridField& m2) {
    if (!f) return 0.0;
    const auto xs = m1.grid.nodes();
    const auto f1 = f(t, xs, m1), f2 = f(t, xs, m2);
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) acc += (f1[i] - f2[i]) * (m1[i] - m2[i]);
    return acc * m1.grid.dx();
}

inline MonotonicityReport monotonicity_check(const CouplingSpec& coupling, const std::vector<GridField>& probes,
                                             double t) {
    if (probes.size() < 2) fail(ErrorKind::invalid_argument, "mfg", "monotonicity check needs >= 2 probes");
    const double m0 = mass(probes.front());
    for (const auto& p : probes) {
        if (!(p.grid == probes.front().grid)) fail(ErrorKind::invalid_argument, "mfg", "probes on different grids");
        if (std::abs(mass(p) - m0) > 1e-8 * std::max(1.0, m0))
            fail(ErrorKind::invalid_argument, "mfg", "probe measures have unequal masses");
    }
    MonotonicityReport rep;
    rep.min_F = rep.min_G = std::numeric_limits<double>::infinity();
    const CouplingFieldFn G = coupling.G_depends_on_measure ? coupling.G : CouplingFieldFn{};
    for (std::size_t a = 0; a < probes.size(); ++a)
        for (std::size_t b = a + 1; b < probes.size(); ++b) {
            const double f = monotonicity_integral(coupling.F, t, probes[a], probes[b]);
            const double g = monotonicity_integral(G, t, probes[a], probes[b]);
            rep.min_F = std::min(rep.min_F, f);
            rep.min_G = std::min(rep.min_G, g);
            if (wasserstein2_1d(probes[a], probes[b]) > 1e-6)
                rep.min_total_separated = std::min(rep.min_total_separated, f + g);
            ++rep.pairs;
        }
    rep.passed = rep.min_F >= -1e-10 && rep.min_G >= -1e-10 &&
                 (rep.min_total_separated == std::numeric_limits<double>::infinity() || rep.min_total_separated > 0.0);
    return rep;
}

struct DualityGap {
    double terminal = 0.0, running = 0.0, bregman = 0.0;
    double min_bregman_integrand = 0.0;
    double total() const { return terminal + running + bregman; }
};

inline DualityGap duality_gap(const MFGSolution& s1, const MFGSolution& s2, const MFGProblem& prob) {
    if (prob.dependence.mode != MeasureDependence::Mode::separated)
        fail(ErrorKind::unsupported_mode, "mfg", "the duality gap is defined for separated problems only");
    const NoiseTree& tree = prob.tree;
    const std::size_t N = tree.n_levels(), S = prob.steps_per_slab;
    const Grid1D& grid = prob.grid();
    const auto xs = grid.nodes();
    const double dx = grid.dx(), dt = prob.dt(), delta = prob.delta();
    DualityGap gap;

    for (std::size_t leaf = 0; leaf < tree.width(N); ++leaf) {
        const ShiftedData nd = build_node_data(prob.data, tree, N, leaf);
        const GridField& m1 = s1.m[N - 1][leaf / 2][S];
        const GridField& m2 = s2.m[N - 1][leaf / 2][S];
        if (!prob.data.coupling.G_depends_on_measure) continue;
        gap.terminal += tree.node(N, leaf).probability * monotonicity_integral(nd.G, tree.horizon(), m1, m2);
    }
    for (std::size_t n = 0; n < N; ++n) {
        const double t_n = tree.jump_time(n);
        for (std::size_t k = 0; k < tree.width(n); ++k) {
            const ShiftedData nd = build_node_data(prob.data, tree, n, k);
            const double p = tree.node(n, k).probability;
            for (std::size_t s = 0; s < S; ++s) {
                const GridField& m1 = s1.m[n][k][s];
                const GridField& m2 = s2.m[n][k][s];
                const double t = t_n + static_cast<double>(s) * dt;
                gap.running += p * dt * monotonicity_integral(nd.F, t, m1, m2);
                const auto d1 = gradient_field(mollify(s1.hjb.u[n][k][s], delta).values, dx);
                const auto d2 = gradient_field(mollify(s2.hjb.u[n][k][s], delta).values, dx);
                double acc = 0.0;
                for (std::size_t i = 0; i < xs.size(); ++i) {
                    const double x = xs[i];
                    const double h1 = nd.h.eval(t_n, x, d1[i]), h2 = nd.h.eval(t_n, x, d2[i]);
                    const double b1 = h2 - h1 - nd.h.grad_p(t_n, x, d1[i]) * (d2[i] - d1[i]);
                    const double b2 = h1 - h2 - nd.h.grad_p(t_n, x, d2[i]) * (d1[i] - d2[i]);
                    gap.min_bregman_integrand = std::min({gap.min_bregman_integrand, b1, b2});
                    acc += m1[i] * b1 + m2[i] * b2;
                }
                gap.bregman += p * dt * acc * dx;
            }
        }
    }
    return gap;
}

}  // namespace mfgcn
