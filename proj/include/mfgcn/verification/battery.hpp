#pragma once

// The invariant battery: one check per acceptance criterion. Shared by the
// `verify` command and the acceptance test binary.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfgcn/bshjb.hpp"
#include "mfgcn/det_hjb.hpp"
#include "mfgcn/fokker_planck.hpp"
#include "mfgcn/mfg.hpp"
#include "mfgcn/problems.hpp"
#include "mfgcn/transform.hpp"
#include "mfgcn/verification/oracles.hpp"

namespace mfgcn::verify {

struct CriterionResult {
    std::string id;
    std::string description;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
    nlohmann::json data = nlohmann::json::object();
};

struct BatteryOptions {
    std::uint64_t seed = 12345;
    std::size_t mc_paths = 10000;
};

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

inline HamiltonianSpec zero_hamiltonian() {
    HamiltonianSpec h;
    h.name = "0";
    h.eval = [](double, double, double) { return 0.0; };
    h.grad_p = h.eval;
    h.grad_x = h.eval;
    return h;
}

/// H + c(x), with c independent of p.
inline HamiltonianSpec add_potential(const HamiltonianSpec& base, std::function<double(double)> c,
                                     std::function<double(double)> dc) {
    HamiltonianSpec h = base;
    h.eval = [base, c](double t, double x, double p) { return base.eval(t, x, p) + c(x); };
    h.grad_x = [base, dc](double t, double x, double p) { return base.grad_x(t, x, p) + dc(x); };
    return h;
}

inline DetHJBSolution run_det(const HamiltonianSpec& h, const DiffusionSpec& diff, const GridField& G, double T,
                              double p_bound) {
    DetHJBProblem pr;
    pr.h = h;
    pr.diff = diff;
    pr.terminal = G;
    pr.tgrid = TimeGrid(T, hjb_auto_steps(h, diff, 0.0, G.grid, 0.0, T, p_bound));
    return solve_det_hjb(pr);
}

/// Backward stochastic HJB for a measure-independent problem, in shifted coordinates.
inline BSHJBProblem tree_problem(const ProblemData& data, const NoiseTree& tree, const Grid1D& grid,
                                 std::size_t S, const GridField& m_for_G) {
    BSHJBProblem bp;
    bp.tree = tree;
    bp.grid = grid;
    bp.steps_per_slab = S;
    bp.data = [data, tree](std::size_t n, std::size_t k) {
        const ShiftedData nd = build_node_data(data, tree, n, k);
        NodeData out;
        out.h = nd.h;
        out.diff = nd.diff;
        return out;
    };
    bp.terminal = [data, tree, grid, m_for_G](std::size_t leaf) {
        const ShiftedData nd = build_node_data(data, tree, tree.n_levels(), leaf);
        const auto xs = grid.nodes();
        return GridField(grid, nd.G(tree.horizon(), xs, m_for_G));
    };
    return bp;
}

inline CouplingFieldFn add_to_field(const CouplingFieldFn& f, std::function<double(double)> c) {
    return [f, c](double t, std::span<const double> xs, const GridField& m) {
        std::vector<double> v = f(t, xs, m);
        for (std::size_t i = 0; i < xs.size(); ++i) v[i] += c(xs[i]);
        return v;
    };
}

}  // namespace detail

class Battery {
public:
    explicit Battery(BatteryOptions opt = {}) : opt_(opt) {}

    // ---------------------------------------------------------------------
    CriterionResult affine_exact() {
        CriterionResult r = start("affine_exact_hjb", "a = 0, H = p^2/2, G = x: u = x - (T - t)/2 to 1e-10");
        const double T = 1.0;
        const Grid1D g = Grid1D::symmetric_with_spacing(2.0, 1.0 / 64);
        const auto sol = detail::run_det(quadratic_hamiltonian(), DiffusionSpec::zero(),
                                         GridField::sample(g, [](double x) { return x; }), T, 2.0);
        double err = 0.0;
        for (std::size_t j = 0; j < sol.u.size(); ++j)
            for (std::size_t i = 1; i + 1 < g.size(); ++i)
                err = std::max(err, std::abs(sol.u[j][i] - (g.x(i) - 0.5 * (T - sol.tgrid.time(j)))));
        r.passed = err <= 1e-10;
        r.detail = "max error " + detail::fmt(err) + " over " + std::to_string(sol.u.size()) + " time levels";
        r.data = {{"max_error", err}};
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult heat_kernel() {
        CriterionResult r = start("heat_kernel_oracle",
                                  "H = 0: Gaussian heat-kernel oracle within 2 dx on the interior third; "
                                  "error ratio under dx halving in [1.6, 2.4]");
        const double nu = 0.5, T = 0.5, s0 = 0.25, W = 3.0;
        std::vector<double> errs;
        bool within = true;
        std::ostringstream os;
        for (double dx : {1.0 / 64, 1.0 / 128}) {
            const Grid1D g = Grid1D::symmetric_with_spacing(W, dx);
            const auto G = GridField::sample(g, [&](double x) { return oracle::heat_gaussian(1.0, s0, nu, 0.0, x); });
            const auto sol = detail::run_det(detail::zero_hamiltonian(), DiffusionSpec::constant_a(nu), G, T, 1.0);
            double e = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (std::abs(g.x(i)) <= W / 3.0 + 1e-12)
                    e = std::max(e, std::abs(sol.u[0][i] - oracle::heat_gaussian(1.0, s0, nu, T, g.x(i))));
            errs.push_back(e);
            within = within && e <= 2.0 * dx;
            os << "dx=1/" << std::lround(1.0 / dx) << " err=" << detail::fmt(e) << " (" << detail::fmt(e / dx)
               << " dx); ";
        }
        const double factor = errs[0] / errs[1];
        const bool trend = factor >= 1.6 && factor <= 2.4;
        r.passed = within && trend;
        os << "factor=" << detail::fmt(factor) << (trend ? "" : " outside [1.6, 2.4] (scheme converges at second order)");
        r.detail = os.str();
        r.data = {{"errors", errs}, {"factor", factor}};
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult hopf_lax() {
        CriterionResult r = start("hopf_lax_oracle",
                                  "a = 0, H = p^2/2, semiconcave G: Hopf-Lax oracle within 3 dx, decreasing under refinement");
        const double T = 1.0, W = 2.0;
        auto G = [](double y) { return std::min(y * y, 1.0); };
        std::vector<double> errs, dxs;
        bool ok = true;
        std::ostringstream os;
        for (double dx : {1.0 / 32, 1.0 / 64, 1.0 / 128}) {
            const Grid1D g = Grid1D::symmetric_with_spacing(W, dx);
            const auto sol =
                detail::run_det(quadratic_hamiltonian(), DiffusionSpec::zero(), GridField::sample(g, G), T, 3.0);
            double e = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (std::abs(g.x(i)) <= 2.0 * W / 3.0 + 1e-12)
                    e = std::max(e, std::abs(sol.u[0][i] - oracle::hopf_lax(G, T, g.x(i), -6.0, 6.0)));
            ok = ok && e <= 3.0 * dx && (errs.empty() || e < errs.back());
            errs.push_back(e);
            dxs.push_back(dx);
            os << "dx=1/" << std::lround(1.0 / dx) << " err=" << detail::fmt(e / dx) << " dx; ";
        }
        r.passed = ok;
        r.detail = os.str();
        r.data = {{"dx", dxs}, {"errors", errs}};
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult sup_bound() {
        CriterionResult r = start("sup_bound", "||u_t|| <= ||G|| + ||H(., ., 0)|| (T - t) + 1e-10 on every shipped problem");
        double worst = -std::numeric_limits<double>::infinity();
        std::ostringstream os;
        for (const auto& name : library_names()) {
            const LibraryProblem lp = make_problem(name);
            const Grid1D& grid = lp.grid;
            const auto xs = grid.nodes();
            const double T = lp.params.T;
            const std::size_t S = lp.steps_per_slab, N = lp.tree.n_levels();
            // single deterministic solve with F(., m0) as a source
            const GridField G = lp.terminal_at_m0();
            std::vector<double> f(grid.size(), 0.0);
            if (lp.data.coupling.F) f = lp.data.coupling.F(0.0, xs, lp.m0);
            DetHJBProblem pr;
            pr.h = lp.data.h;
            pr.diff = lp.data.diff;
            pr.terminal = G;
            pr.tgrid = TimeGrid(T, S * N);
            pr.hook = [&f](std::size_t, double, std::span<double>, std::span<double> src) {
                std::copy(f.begin(), f.end(), src.begin());
            };
            const auto det = solve_det_hjb(pr);
            double h0 = 0.0;
            for (std::size_t j = 0; j <= pr.tgrid.n_steps; ++j)
                for (std::size_t i = 0; i < grid.size(); ++i)
                    h0 = std::max(h0, std::abs(lp.data.h.eval(pr.tgrid.time(j), xs[i], 0.0) - f[i]));
            double det_excess = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < det.u.size(); ++j)
                det_excess = std::max(det_excess, det.sup_series[j] - (sup_norm(G) + h0 * (T - det.tgrid.time(j))));

            // tree solve against the constant flow m0
            const MFGProblem mp = lp.mfg();
            const SlabFlow flow = constant_flow(lp.tree, S, lp.m0);
            const BSHJBSolution sol = solve_bshjb(mfgcn::detail::hjb_problem(mp, flow));
            log_martingale(name + " tree solve", martingale_residual(sol));
            double h0_tree = 0.0, g_sup = 0.0;
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t k = 0; k < lp.tree.width(n); ++k) {
                    const ShiftedData nd = build_node_data(lp.data, lp.tree, n, k);
                    std::vector<double> fk(grid.size(), 0.0);
                    if (nd.F) fk = nd.F(0.0, xs, lp.m0);
                    for (std::size_t i = 0; i < grid.size(); ++i)
                        h0_tree = std::max(h0_tree, std::abs(nd.h.eval(lp.tree.jump_time(n), xs[i], 0.0) - fk[i]));
                }
            for (const auto& leaf : sol.leaf_terminal) g_sup = std::max(g_sup, sup_norm(leaf));
            double tree_excess = -std::numeric_limits<double>::infinity();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t k = 0; k < sol.u[n].size(); ++k)
                    for (std::size_t s = 0; s <= S; ++s) {
                        const double t = lp.tree.jump_time(n) + static_cast<double>(s) * sol.dt();
                        tree_excess = std::max(tree_excess, sup_norm(sol.u[n][k][s]) - (g_sup + h0_tree * (T - t)));
                    }
            worst = std::max({worst, det_excess, tree_excess});
            os << name << ": det " << detail::fmt(det_excess) << ", tree " << detail::fmt(tree_excess) << "; ";
            r.data[name] = {{"det_excess", det_excess}, {"tree_excess", tree_excess}, {"sup_series", det.sup_series}};
        }
        r.passed = worst <= 1e-10;
        r.detail = "largest excess over the bound: " + os.str();
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult semiconcavity() {
        CriterionResult r = start("semiconcavity_propagation",
                                  "gamma_t <= C (T - t) + exp(C (T - t)) gamma_T with a fitted C stable within 25% "
                                  "across dx in {1/64, 1/128, 1/256}");
        const LibraryProblem lp = make_problem("quadratic");
        const double T = 1.0;
        std::vector<double> Cs;
        std::ostringstream os;
        nlohmann::json runs = nlohmann::json::array();
        for (double dx : {1.0 / 64, 1.0 / 128, 1.0 / 256}) {
            const Grid1D g = Grid1D::symmetric_with_spacing(2.0, dx);
            const auto G = GridField::sample(g, [&](double x) { return lp.G_no_measure(x); });
            const auto sol = detail::run_det(lp.data.h, lp.data.diff, G, T, lp.p_bound);
            const auto rep = check_propagation(sol, 0.0);
            Cs.push_back(rep.C_min);
            os << "dx=1/" << std::lround(1.0 / dx) << " C=" << detail::fmt(rep.C_min) << "; ";
            std::vector<double> times;
            for (std::size_t j = 0; j < sol.u.size(); ++j) times.push_back(sol.tgrid.time(j));
            // thin the series for the manifest
            nlohmann::json t_out = nlohmann::json::array(), g_out = nlohmann::json::array();
            const std::size_t stride = std::max<std::size_t>(1, times.size() / 200);
            for (std::size_t j = 0; j < times.size(); j += stride) {
                t_out.push_back(times[j]);
                g_out.push_back(sol.gamma_series[j]);
            }
            runs.push_back({{"dx", dx}, {"C_fit", rep.C_min}, {"t", t_out}, {"gamma", g_out},
                            {"gamma_T", sol.gamma_series.back()}, {"T", T}});
        }
        const double lo = *std::min_element(Cs.begin(), Cs.end()), hi = *std::max_element(Cs.begin(), Cs.end());
        const double spread = lo > 0.0 ? (hi - lo) / lo : std::numeric_limits<double>::infinity();
        r.passed = lo > 0.0 && spread <= 0.25;
        os << "spread " << detail::fmt(100.0 * spread) << "%";
        r.detail = os.str();
        r.data = {{"runs", runs}, {"spread", spread}};
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult comparison() {
        CriterionResult r = start("discrete_comparison",
                                  "H1 <= H2, G1 >= G2 => min(u1 - u2) >= -1e-10 over all nodes, times and points (3 pairs)");
        std::ostringstream os;
        bool ok = true;
        double worst = std::numeric_limits<double>::infinity();
        auto record = [&](const std::string& name, const ComparisonReport& rep) {
            ok = ok && rep.passed;
            worst = std::min(worst, rep.min_difference);
            os << name << " min " << detail::fmt(rep.min_difference) << "; ";
            r.data[name] = rep.min_difference;
        };
        {
            const LibraryProblem lp = make_problem("quadratic");
            const std::size_t S = (lp.steps_per_slab * 5 + 3) / 4;
            ProblemData d1 = lp.data, d2 = lp.data;
            d1.coupling.G = detail::add_to_field(lp.data.coupling.G, [](double) { return 0.05; });
            d2.h = detail::add_potential(lp.data.h, [](double) { return 0.1; }, [](double) { return 0.0; });
            record("quadratic", comparison_test(detail::tree_problem(d1, lp.tree, lp.grid, S, lp.m0),
                                                detail::tree_problem(d2, lp.tree, lp.grid, S, lp.m0), lp.p_bound));
        }
        {
            const LibraryProblem lp = make_problem("relativistic");
            const std::size_t S = (lp.steps_per_slab * 5 + 3) / 4;
            ProblemData d1 = lp.data, d2 = lp.data;
            d2.h = detail::add_potential(
                lp.data.h, [](double x) { return 0.1 * (1.0 + std::sin(x)); }, [](double x) { return 0.1 * std::cos(x); });
            d2.coupling.G = detail::add_to_field(lp.data.coupling.G, [](double x) { return -0.1 * std::exp(-x * x); });
            record("relativistic", comparison_test(detail::tree_problem(d1, lp.tree, lp.grid, S, lp.m0),
                                                   detail::tree_problem(d2, lp.tree, lp.grid, S, lp.m0), lp.p_bound));
        }
        {
            // running coupling F(x, m0) enters both problems identically as a source
            const LibraryProblem lp = make_problem("separated-gaussian");
            const std::size_t S = (lp.steps_per_slab * 5 + 3) / 4;
            MFGProblem p1 = lp.mfg(), p2 = lp.mfg();
            p1.steps_per_slab = p2.steps_per_slab = S;
            p2.data.h.eval = [](double, double, double p) { return 0.55 * p * p; };
            p2.data.h.grad_p = [](double, double, double p) { return 1.1 * p; };
            p2.data.coupling.G = detail::add_to_field(lp.data.coupling.G, [](double) { return -0.05; });
            const SlabFlow flow = constant_flow(lp.tree, S, lp.m0);
            record("separated-gaussian", comparison_test(mfgcn::detail::hjb_problem(p1, flow),
                                                         mfgcn::detail::hjb_problem(p2, flow), lp.p_bound));
        }
        r.passed = ok;
        r.detail = os.str();
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult stability() {
        CriterionResult r = start("stability_sweep",
                                  "lhs/rhs of the stability estimate does not grow 2x across delta in {0.1, 0.05, 0.025}");
        const LibraryProblem lp = make_problem("relativistic");
        const std::size_t S = (lp.steps_per_slab * 3 + 1) / 2;
        std::vector<double> ratios, lhs, rhs;
        std::ostringstream os;
        for (double delta : {0.1, 0.05, 0.025}) {
            ProblemData d2 = lp.data;
            d2.h = detail::add_potential(
                lp.data.h, [delta](double x) { return 0.5 * delta * (1.0 + std::sin(x)); },
                [delta](double x) { return 0.5 * delta * std::cos(x); });
            const auto sigma = lp.data.diff.sigma;
            d2.diff.sigma = [sigma, delta](double t, double x) { return (1.0 + delta) * sigma(t, x); };
            d2.coupling.G = detail::add_to_field(lp.data.coupling.G, [delta](double x) { return delta * std::cos(x); });
            const auto est = stability_estimate(detail::tree_problem(lp.data, lp.tree, lp.grid, S, lp.m0),
                                                detail::tree_problem(d2, lp.tree, lp.grid, S, lp.m0), 2.0, lp.p_bound);
            ratios.push_back(est.ratio());
            lhs.push_back(est.lhs);
            rhs.push_back(est.rhs);
            os << "delta=" << delta << " ratio=" << detail::fmt(est.ratio()) << "; ";
        }
        bool ok = std::all_of(ratios.begin(), ratios.end(), [](double v) { return std::isfinite(v); });
        for (std::size_t i = 1; i < ratios.size(); ++i) ok = ok && ratios[i] < 2.0 * ratios[i - 1];
        r.passed = ok;
        r.detail = os.str();
        r.data = {{"delta", {0.1, 0.05, 0.025}}, {"lhs", lhs}, {"rhs", rhs}, {"ratio", ratios}};
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult martingale() {
        CriterionResult r = start("martingale_property",
                                  "martingale residual <= 1e-12 on every tree solve, including the MFG equilibrium");
        // solves of its own on the three library problems plus everything logged by the other checks
        for (const auto& name : library_names()) {
            const LibraryProblem lp = make_problem(name);
            const SlabFlow flow = constant_flow(lp.tree, lp.steps_per_slab, lp.m0);
            const MFGProblem mp = lp.mfg();
            log_martingale(name + " (own)", martingale_residual(solve_bshjb(mfgcn::detail::hjb_problem(mp, flow))));
        }
        equilibrium();
        double worst = 0.0;
        std::string where;
        nlohmann::json runs = nlohmann::json::object();
        for (const auto& [name, v] : martingale_log_) {
            runs[name] = v;
            if (v >= worst) {
                worst = v;
                where = name;
            }
        }
        r.passed = worst <= 1e-12;
        r.detail = std::to_string(martingale_log_.size()) + " solves, worst " + detail::fmt(worst) + " (" + where + ")";
        r.data = {{"runs", runs}, {"worst", worst}};
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult degeneration() {
        CriterionResult r = start("deterministic_degeneration",
                                  "noise-free data: dM = 0 to 1e-12 and per-node fields identical across the tree");
        std::ostringstream os;
        bool ok = true;
        for (const std::string name : {"quadratic", "separated-gaussian"}) {
            ProblemParams pp;
            pp.name = name;
            pp.beta = 0.0;
            const LibraryProblem lp = make_problem(pp);
            const std::size_t S = lp.steps_per_slab, N = lp.tree.n_levels();
            const MFGProblem mp = lp.mfg();
            const SlabFlow flow = constant_flow(lp.tree, S, lp.m0);
            const BSHJBSolution sol = solve_bshjb(mfgcn::detail::hjb_problem(mp, flow));
            const double res = martingale_residual(sol);
            log_martingale(name + " beta=0", res);
            double dm = 0.0, spread = 0.0;
            for (std::size_t n = 1; n <= N; ++n)
                for (const auto& f : sol.dM[n]) dm = std::max(dm, sup_norm(f));
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t k = 1; k < sol.u[n].size(); ++k)
                    for (std::size_t s = 0; s <= S; ++s)
                        for (std::size_t i = 0; i < lp.grid.size(); ++i)
                            spread = std::max(spread, std::abs(sol.u[n][k][s][i] - sol.u[n][0][s][i]));
            // and the root equals one deterministic solve over [0, T]
            std::vector<double> f(lp.grid.size(), 0.0);
            const auto xs = lp.grid.nodes();
            if (lp.data.coupling.F) f = lp.data.coupling.F(0.0, xs, lp.m0);
            DetHJBProblem pr;
            pr.h = lp.data.h;
            pr.diff = lp.data.diff;
            pr.terminal = lp.terminal_at_m0();
            pr.tgrid = TimeGrid(lp.params.T, S * N);
            pr.hook = [&f](std::size_t, double, std::span<double>, std::span<double> src) {
                std::copy(f.begin(), f.end(), src.begin());
            };
            const auto det = solve_det_hjb(pr);
            double root_gap = 0.0;
            for (std::size_t i = 0; i < lp.grid.size(); ++i) root_gap = std::max(root_gap, std::abs(det.u[0][i] - sol.root()[i]));
            ok = ok && dm <= 1e-12 && spread <= 1e-12 && root_gap <= 1e-12;
            os << name << ": |dM| " << detail::fmt(dm) << ", node spread " << detail::fmt(spread) << ", root vs single solve "
               << detail::fmt(root_gap) << "; ";
            r.data[name] = {{"dM", dm}, {"spread", spread}, {"root_gap", root_gap}};
        }
        r.passed = ok;
        r.detail = os.str();
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult control_representation() {
        CriterionResult r = start("control_representation",
                                  "LQ value x0^2/(2(1+T)) + a log(1+T): PDE within 5 dx, feedback Monte Carlo within "
                                  "3 SE + 5 dx, zero control suboptimal");
        const double T = 1.0, x0 = 1.0, dx = 1.0 / 32;
        const Grid1D grid = Grid1D::symmetric_with_spacing(4.0, dx);
        std::ostringstream os;
        bool ok = true;
        for (double a : {0.0, 0.1}) {
            ProblemData data;
            data.h = quadratic_hamiltonian();
            data.diff = DiffusionSpec::constant_a(a);
            data.coupling.G = [](double, std::span<const double> xs, const GridField&) {
                std::vector<double> g(xs.size());
                for (std::size_t i = 0; i < xs.size(); ++i) g[i] = 0.5 * xs[i] * xs[i];
                return g;
            };
            const NoiseTree tree(4, T, 0.0);
            const std::size_t total = hjb_auto_steps(data.h, data.diff, 0.0, grid, 0.0, T, 4.0);
            const std::size_t S = (total + 3) / 4;
            const GridField dummy(grid, 0.0);
            const BSHJBProblem bp = detail::tree_problem(data, tree, grid, S, dummy);
            const BSHJBSolution sol = solve_bshjb(bp);
            log_martingale("LQ a=" + detail::fmt(a), martingale_residual(sol));
            const double exact = oracle::riccati_lq(T, x0, a);
            const double pde_err = std::abs(interpolate(sol.root(), x0) - exact);
            const MCReport mc = control_representation_check(sol, bp, x0, opt_.mc_paths, opt_.seed);
            const bool strictly_worse = mc.zero_control_cost > mc.u0;
            const bool pass = pde_err <= 5.0 * dx && mc.matches && mc.suboptimal_confirmed && strictly_worse;
            ok = ok && pass;
            os << "a=" << a << ": exact " << detail::fmt(exact) << ", PDE err " << detail::fmt(pde_err) << ", MC "
               << detail::fmt(mc.mean_cost) << " +- " << detail::fmt(mc.std_error) << ", alpha=0 cost "
               << detail::fmt(mc.zero_control_cost) << "; ";
            r.data["a=" + detail::fmt(a)] = {{"exact", exact},           {"pde_error", pde_err},
                                             {"mc_mean", mc.mean_cost},  {"mc_se", mc.std_error},
                                             {"zero_cost", mc.zero_control_cost}, {"paths", mc.paths},
                                             {"discarded", mc.discarded}};
        }
        r.passed = ok;
        r.detail = os.str();
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult fokker_planck() {
        CriterionResult r = start("fokker_planck",
                                  "mass within 1e-12 every step, positivity >= -1e-12, Gaussian variance growth within 3%, "
                                  "L-infinity growth bound with the fitted divergence constant");
        const double dx = 1.0 / 64, T = 1.0;
        const Grid1D grid = Grid1D::symmetric_with_spacing(4.0, dx);
        const GridField m0 = gaussian_density_on(grid, 0.0, 0.5);
        std::ostringstream os;
        double mass_err = 0.0, min_val = 0.0;
        auto track = [&](const DensityPath& p) {
            for (double ms : p.mass_series) mass_err = std::max(mass_err, std::abs(ms - 1.0));
            min_val = std::min(min_val, p.min_value);
        };
        // pure diffusion: the variance grows by 2 nu T
        const double nu = 0.25;
        FPProblem heat;
        heat.m0 = m0;
        heat.diff = DiffusionSpec::constant_a(nu);
        heat.tgrid = TimeGrid(T, fp_auto_steps(nu, 0.0, dx, T));
        heat.holder_samples = 0;
        const DensityPath hp = solve_fp(heat);
        track(hp);
        const double growth = variance(hp.m.back()) - variance(m0);
        const double growth_err = std::abs(growth - 2.0 * nu * T) / (2.0 * nu * T);
        // linear drifts: concentrating (b = k x) and spreading (b = -k x)
        bool linf_ok = true;
        for (double k : {0.5, -0.5}) {
            const GridField b = GridField::sample(grid, [k](double x) { return k * x; });
            FPProblem fp;
            fp.m0 = m0;
            fp.drift = [b](std::size_t, double) { return b; };
            fp.diff = DiffusionSpec::constant_a(0.02);
            fp.tgrid = TimeGrid(T, fp_auto_steps(0.02, 0.5 * 4.0, dx, T));
            fp.holder_samples = 0;
            const DensityPath p = solve_fp(fp);
            track(p);
            const double C = divergence_constant({b}, {GridField(grid, 0.02)});
            const bool holds = verify_linf_growth(p, C);
            linf_ok = linf_ok && holds;
            os << "b=" << k << "x: C=" << detail::fmt(C) << ", peak " << detail::fmt(p.linf_series.back()) << " vs bound "
               << detail::fmt(std::exp(C * T) * p.linf_series.front()) << "; ";
            r.data["linf_k=" + detail::fmt(k)] = {{"C", C}, {"linf_series_end", p.linf_series.back()}, {"holds", holds}};
        }
        r.passed = mass_err <= 1e-12 && min_val >= -1e-12 && growth_err <= 0.03 && linf_ok;
        r.detail = "mass err " + detail::fmt(mass_err) + ", min " + detail::fmt(min_val) + ", variance growth err " +
                   detail::fmt(100.0 * growth_err) + "%; " + os.str();
        r.data["mass_error"] = mass_err;
        r.data["min_value"] = min_val;
        r.data["variance_growth_error"] = growth_err;
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult wasserstein() {
        CriterionResult r = start("wasserstein",
                                  "translations exact to 1e-6, Gaussian mean shift 1 within 2 dx, Hoelder-1/2 d2 constant "
                                  "stable under dt refinement");
        const double dx = 1.0 / 64;
        const Grid1D grid = Grid1D::symmetric_with_spacing(4.0, dx);
        const GridField m = gaussian_density_on(grid, 0.0, 0.5);
        const double d_translate = wasserstein2_1d(m, translate(m, 0.3));
        const double d_shift = wasserstein2_1d(m, shift_density(m, 0.5));
        const double d_gauss = wasserstein2_1d(m, gaussian_density_on(grid, 1.0, 0.5));
        const bool exact = std::abs(d_translate - 0.3) <= 1e-6 && std::abs(d_shift - 0.5) <= 1e-6;
        const bool gauss = std::abs(d_gauss - 1.0) <= 2.0 * dx;
        // Hoelder constant of t -> m_t in d_2 for dt, dt/2, dt/4
        const double T = 1.0, a = 0.2;
        const GridField b = GridField::sample(grid, [](double x) { return 0.5 * x; });
        std::size_t base = fp_auto_steps(a, 2.0, dx, T);
        base = (base + 31) / 32 * 32;
        std::vector<double> hc;
        for (std::size_t mult : {1u, 2u, 4u}) {
            FPProblem fp;
            fp.m0 = m;
            fp.drift = [b](std::size_t, double) { return b; };
            fp.diff = DiffusionSpec::constant_a(a);
            fp.tgrid = TimeGrid(T, base * mult);
            fp.holder_samples = 33;
            hc.push_back(solve_fp(fp).holder_constant());
        }
        double dev = 0.0;
        for (double v : hc) dev = std::max(dev, std::abs(v - hc[0]) / hc[0]);
        const bool stable = dev <= 0.1;
        r.passed = exact && gauss && stable;
        r.detail = "translate 0.3 -> " + detail::fmt(d_translate) + ", shift 0.5 -> " + detail::fmt(d_shift) +
                   ", mean shift -> " + detail::fmt(d_gauss) + ", Hoelder constants " + detail::fmt(hc[0]) + "/" +
                   detail::fmt(hc[1]) + "/" + detail::fmt(hc[2]) + " (max rel. deviation " + detail::fmt(dev) + ")";
        r.data = {{"translate", d_translate}, {"shift", d_shift}, {"gauss", d_gauss}, {"holder", hc}};
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult mfg_fixed_point() {
        CriterionResult r = start("mfg_fixed_point",
                                  "separated Gaussian-kernel MFG (T = 0.5, beta = 0.2, N = 4, 256 points): residual <= 1e-4 "
                                  "within 50 damped Picard iterations");
        const auto& eq = equilibrium();
        if (!eq.error.empty()) {
            r.detail = eq.error;
            r.data = {{"residual_series", eq.partial_residuals}};
            return finish(r);
        }
        const MFGSolution& sol = *eq.solution;
        r.passed = sol.converged && sol.residual_series.back() <= 1e-4 && sol.residual_series.size() <= 50;
        r.detail = std::to_string(sol.residual_series.size()) + " iterations to " + detail::fmt(sol.residual_series.back()) +
                   ", then " + std::to_string(sol.refinement_series.size()) + " without FP regularization to " +
                   detail::fmt(sol.refinement_series.empty() ? 0.0 : sol.refinement_series.back());
        r.data = {{"residual_series", sol.residual_series}, {"refinement_series", sol.refinement_series}};
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult uniqueness() {
        CriterionResult r = start("pathwise_uniqueness",
                                  "twin runs from distinct initial flows agree (sup_t E d2 <= 1e-3); duality gap <= "
                                  "10 tol L");
        const auto& eq = equilibrium();
        if (!eq.error.empty()) {
            r.detail = "first run failed: " + eq.error;
            return finish(r);
        }
        const MFGProblem& prob = *eq.problem;
        const SlabFlow init = uniform_flow(prob.tree, prob.steps_per_slab, prob.grid());
        MFGSolution twin;
        try {
            twin = solve_mfg(prob, &init);
        } catch (const Error& e) {
            r.detail = std::string("second run failed: ") + e.what();
            return finish(r);
        }
        log_martingale("MFG twin run", twin.martingale_residual);
        const double dist = flow_distance(prob.tree, prob.steps_per_slab, eq.solution->m, twin.m);
        const DualityGap gap = duality_gap(*eq.solution, twin, prob);
        const double L = prob.data.coupling.lipschitz_d2;
        const double bound = 10.0 * prob.fixpoint.tol_d2 * L;
        r.passed = dist <= 1e-3 && gap.total() <= bound;
        r.detail = "sup_t E d2 = " + detail::fmt(dist) + ", gap " + detail::fmt(gap.total()) + " (terminal " +
                   detail::fmt(gap.terminal) + ", running " + detail::fmt(gap.running) + ", Bregman " +
                   detail::fmt(gap.bregman) + ") vs bound " + detail::fmt(bound);
        r.data = {{"distance", dist},      {"gap_total", gap.total()}, {"gap_terminal", gap.terminal},
                  {"gap_running", gap.running}, {"gap_bregman", gap.bregman}, {"bound", bound},
                  {"twin_iterations", twin.residual_series.size()}};
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult decoupled() {
        CriterionResult r = start("decoupled_one_iteration",
                                  "F = 0 and G independent of m: residual <= 1e-12 once one iteration has been taken");
        const LibraryProblem lp = make_problem("quadratic");
        const MFGSolution sol = solve_mfg(lp.mfg());
        log_martingale("decoupled MFG", sol.martingale_residual);
        const auto& s = sol.residual_series;
        const bool loop_ok = s.size() == 2 && s[1] <= 1e-12;
        const auto& q = sol.refinement_series;
        const bool refine_ok = q.empty() || (q.size() <= 2 && q.back() <= 1e-12);
        r.passed = sol.converged && loop_ok && refine_ok;
        std::ostringstream os;
        os << "residual series:";
        for (double v : s) os << ' ' << detail::fmt(v);
        os << "; refinement:";
        for (double v : q) os << ' ' << detail::fmt(v);
        r.detail = os.str();
        r.data = {{"residual_series", s}, {"refinement_series", q}};
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult transform_round_trip() {
        CriterionResult r = start("transform_round_trip",
                                  "to_original o to_tilde = identity within L1 1e-3 on m and interior sup 1e-3 on u; "
                                  "beta = 0 bit-identical");
        const auto& eq = equilibrium();
        if (!eq.error.empty()) {
            r.detail = "equilibrium unavailable: " + eq.error;
            return finish(r);
        }
        const MFGProblem& prob = *eq.problem;
        const TreeSnapshots original = to_original(snapshots(*eq.solution, prob.tree, prob.steps_per_slab));
        const TreeSnapshots back = to_original(to_tilde(original));
        const Grid1D& grid = prob.grid();
        double max_shift = 0.0;
        for (std::size_t n = 0; n <= prob.tree.n_levels(); ++n)
            for (std::size_t k = 0; k < prob.tree.width(n); ++k) max_shift = std::max(max_shift, std::abs(prob.tree.shift(n, k)));
        const double interior = grid.x_max() - 2.0 * max_shift - 0.5;
        double m_err = 0.0, u_err = 0.0;
        for (std::size_t j = 0; j < original.u.size(); ++j)
            for (std::size_t k = 0; k < original.u[j].size(); ++k) {
                double l1 = 0.0;
                for (std::size_t i = 0; i < grid.size(); ++i) {
                    l1 += std::abs(back.m[j][k][i] - original.m[j][k][i]) * grid.dx();
                    if (std::abs(grid.x(i)) <= interior)
                        u_err = std::max(u_err, std::abs(back.u[j][k][i] - original.u[j][k][i]));
                }
                m_err = std::max(m_err, l1);
            }
        // beta = 0: decoupled run on a tree without common noise
        ProblemParams pp;
        pp.name = "quadratic";
        pp.beta = 0.0;
        const LibraryProblem lp0 = make_problem(pp);
        const MFGSolution s0 = solve_mfg(lp0.mfg());
        log_martingale("decoupled MFG beta=0", s0.martingale_residual);
        const TreeSnapshots snap0 = snapshots(s0, lp0.tree, lp0.steps_per_slab);
        const TreeSnapshots round0 = to_original(to_tilde(snap0));
        bool identical = true;
        for (std::size_t j = 0; j < snap0.u.size(); ++j)
            for (std::size_t k = 0; k < snap0.u[j].size(); ++k)
                identical = identical && round0.u[j][k].values == snap0.u[j][k].values &&
                            round0.m[j][k].values == snap0.m[j][k].values &&
                            to_original(snap0).u[j][k].values == snap0.u[j][k].values;
        r.passed = m_err <= 1e-3 && u_err <= 1e-3 && identical;
        r.detail = "L1 on m " + detail::fmt(m_err) + ", sup on u (|x| <= " + detail::fmt(interior) + ") " + detail::fmt(u_err) +
                   ", beta=0 " + (identical ? "bit-identical" : "NOT identical");
        r.data = {{"m_l1", m_err}, {"u_sup", u_err}, {"beta0_identical", identical}};
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult psi_supersolution() {
        CriterionResult r = start("psi_supersolution", "psi_{lambda,K} supersolution residual >= -1e-12 on 1e4 samples");
        std::mt19937_64 rng(opt_.seed);
        std::uniform_real_distribution<double> ut(0.0, 2.0), ux(-10.0, 10.0), ul(0.05, 3.0), uk(0.05, 5.0);
        double worst = std::numeric_limits<double>::infinity();
        for (int s = 0; s < 10000; ++s) worst = std::min(worst, psi_residual(ul(rng), uk(rng), ut(rng), ux(rng)));
        r.passed = worst >= -1e-12;
        r.detail = "min residual " + detail::fmt(worst);
        r.data = {{"min_residual", worst}};
        return finish(r);
    }

    // ---------------------------------------------------------------------
    CriterionResult cauchy_refinement() {
        CriterionResult r = start("n_refinement_cauchy",
                                  "weighted sup distance between root values at N and 2N decreases for N in {2, 4}");
        std::vector<GridField> roots;
        std::vector<std::size_t> Ns{2, 4, 8};
        for (std::size_t N : Ns) {
            ProblemParams pp;
            pp.n_levels = N;
            const LibraryProblem lp = make_problem(pp);
            try {
                const MFGSolution sol = solve_mfg(lp.mfg());
                log_martingale("MFG N=" + std::to_string(N), sol.martingale_residual);
                roots.push_back(sol.hjb.root());
            } catch (const Error& e) {
                r.detail = "N=" + std::to_string(N) + ": " + e.what();
                return finish(r);
            }
        }
        if (!(roots[0].grid == roots[1].grid && roots[1].grid == roots[2].grid)) {
            r.detail = "refinement levels use different grids";
            return finish(r);
        }
        const double d24 = weighted_sup_distance(roots[0], roots[1], 1.0, 1.0, 0.0);
        const double d48 = weighted_sup_distance(roots[1], roots[2], 1.0, 1.0, 0.0);
        r.passed = d48 < d24;
        r.detail = "d(2,4) = " + detail::fmt(d24) + ", d(4,8) = " + detail::fmt(d48);
        r.data = {{"N", Ns}, {"distances", {d24, d48}}};
        return finish(r);
    }

    // ---------------------------------------------------------------------
    /// All criteria in their listed order. on_result fires as each one completes.
    std::vector<CriterionResult> run_all(const std::function<void(const CriterionResult&)>& on_result = {}) {
        using Fn = CriterionResult (Battery::*)();
        const std::vector<Fn> listed{&Battery::affine_exact,  &Battery::heat_kernel,     &Battery::hopf_lax,
                                     &Battery::sup_bound,     &Battery::semiconcavity,   &Battery::comparison,
                                     &Battery::stability,     &Battery::martingale,      &Battery::degeneration,
                                     &Battery::control_representation, &Battery::fokker_planck, &Battery::wasserstein,
                                     &Battery::mfg_fixed_point, &Battery::uniqueness,    &Battery::decoupled,
                                     &Battery::transform_round_trip, &Battery::psi_supersolution,
                                     &Battery::cauchy_refinement};
        // the martingale check aggregates every other tree solve, so it runs last
        std::vector<std::size_t> order;
        for (std::size_t i = 0; i < listed.size(); ++i)
            if (listed[i] != &Battery::martingale) order.push_back(i);
        for (std::size_t i = 0; i < listed.size(); ++i)
            if (listed[i] == &Battery::martingale) order.push_back(i);
        std::vector<CriterionResult> out(listed.size());
        for (std::size_t i : order) {
            CriterionResult res;
            try {
                res = (this->*listed[i])();
            } catch (const std::exception& e) {
                res.id = current_id_;
                res.description = current_description_;
                res.passed = false;
                res.detail = std::string("error: ") + e.what();
                res.seconds = elapsed();
            }
            if (on_result) on_result(res);
            out[i] = std::move(res);
        }
        return out;
    }

    /// The cached equilibrium of the default separated problem.
    struct Equilibrium {
        std::optional<LibraryProblem> library;
        std::optional<MFGProblem> problem;
        std::optional<MFGSolution> solution;
        std::string error;
        std::vector<double> partial_residuals;
    };

    const Equilibrium& equilibrium() {
        if (eq_.library) return eq_;
        eq_.library = make_problem("separated-gaussian");
        eq_.problem = eq_.library->mfg();
        try {
            eq_.solution = solve_mfg(*eq_.problem);
            log_martingale("MFG equilibrium", eq_.solution->martingale_residual);
        } catch (const NonConvergenceError& e) {
            eq_.error = e.what();
            eq_.partial_residuals = e.residual_series;
        } catch (const Error& e) {
            eq_.error = e.what();
        }
        return eq_;
    }

    const std::vector<std::pair<std::string, double>>& martingale_log() const { return martingale_log_; }

private:
    CriterionResult start(std::string id, std::string description) {
        current_id_ = id;
        current_description_ = description;
        started_ = std::chrono::steady_clock::now();
        CriterionResult r;
        r.id = std::move(id);
        r.description = std::move(description);
        return r;
    }
    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    }
    CriterionResult finish(CriterionResult& r) {
        r.seconds = elapsed();
        return r;
    }
    void log_martingale(const std::string& name, double v) { martingale_log_.emplace_back(name, v); }

    BatteryOptions opt_;
    Equilibrium eq_;
    std::vector<std::pair<std::string, double>> martingale_log_;
    std::string current_id_, current_description_;
    std::chrono::steady_clock::time_point started_;
};

inline nlohmann::json to_json(const CriterionResult& r) {
    return {{"id", r.id},          {"description", r.description}, {"passed", r.passed},
            {"detail", r.detail},  {"seconds", r.seconds},         {"data", r.data}};
}

}  // namespace mfgcn::verify
