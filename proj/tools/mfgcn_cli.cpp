// mfgcn: command-line driver.
//
//   mfgcn <solve-hjb|solve-bshjb|solve-fp|solve-mfg|verify|sweep> [--config PATH]
//         [--workers N] [--output DIR] [--seed N]
//
// Exit codes: 0 success, 2 validation failure, 3 numerical failure, 4 non-convergence.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mfgcn/io.hpp"
#include "mfgcn/parallel.hpp"
#include "mfgcn/problems.hpp"
#include "mfgcn/verification/battery.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mfgcn;

namespace {

enum class LogLevel { quiet, info, debug };
LogLevel log_level = LogLevel::info;

void log_info(const std::string& msg) {
    if (log_level != LogLevel::quiet) std::cerr << "[mfgcn] " << msg << '\n';
}
void log_debug(const std::string& msg) {
    if (log_level == LogLevel::debug) std::cerr << "[mfgcn:debug] " << msg << '\n';
}

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::numerical:
        case ErrorKind::domain_too_small: return 3;
        case ErrorKind::non_convergence: return 4;
        default: return 2;
    }
}

/// Evenly spaced indices 0..n including both ends, at most `count` of them.
std::vector<std::size_t> thin(std::size_t n, std::size_t count = 51) {
    std::vector<std::size_t> idx;
    if (n + 1 <= count) {
        for (std::size_t j = 0; j <= n; ++j) idx.push_back(j);
        return idx;
    }
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t j = (k * n) / (count - 1);
        if (idx.empty() || idx.back() != j) idx.push_back(j);
    }
    return idx;
}

struct Run {
    std::string command;
    io::RunConfig cfg;
    fs::path out;
    json manifest;
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

    fs::path file(const std::string& name) {
        outputs.push_back(name);
        return out / name;
    }
    void timing(const std::string& what, std::chrono::steady_clock::time_point since) {
        manifest["timings"][what] = std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
    }
};

json structure_json(const ValidationReport& rep) {
    json checks = json::array();
    for (const auto& c : rep.checks)
        checks.push_back({{"name", c.name},
                          {"passed", c.passed},
                          {"worst_margin", io::number(c.worst_margin)},
                          {"where", c.where},
                          {"samples", c.samples}});
    return {{"passed", rep.passed()}, {"checks", checks}, {"note", rep.note}};
}

json problem_json(const LibraryProblem& lp) {
    return {{"name", lp.params.name},
            {"hamiltonian", lp.data.h.name},
            {"coupling", lp.data.coupling.name},
            {"measure_dependence", to_string(lp.dependence.mode)},
            {"grid", {{"x_min", lp.grid.x_min()}, {"x_max", lp.grid.x_max()}, {"points", lp.grid.size()}, {"dx", lp.grid.dx()}}},
            {"steps_per_slab", lp.steps_per_slab},
            {"p_bound", lp.p_bound},
            {"lambda0", lp.data.h.lambda0},
            {"C0", lp.data.h.C0},
            {"required_C0", io::number(required_C0(lp.data.h, lp.lattice))}};
}

// ---------------------------------------------------------------------------

void solve_hjb(Run& run, const LibraryProblem& lp) {
    const std::size_t N = lp.tree.n_levels();
    const auto xs = lp.grid.nodes();
    std::vector<double> f(lp.grid.size(), 0.0);
    if (lp.data.coupling.F) f = lp.data.coupling.F(0.0, xs, lp.m0);
    DetHJBProblem pr;
    pr.h = lp.data.h;
    pr.diff = lp.data.diff;
    pr.terminal = lp.terminal_at_m0();
    pr.tgrid = TimeGrid(lp.params.T, lp.steps_per_slab * N);
    pr.epsilon = run.cfg.hjb_epsilon;
    if (lp.data.coupling.F)
        pr.hook = [&f](std::size_t, double, std::span<double>, std::span<double> src) {
            std::copy(f.begin(), f.end(), src.begin());
        };
    log_info("det-hjb: " + std::to_string(pr.tgrid.n_steps) + " steps on " + std::to_string(lp.grid.size()) + " points");
    const auto t0 = std::chrono::steady_clock::now();
    const DetHJBSolution sol = solve_det_hjb(pr);
    run.timing("solve", t0);

    io::FieldCsv csv(run.file("hjb_values.csv"));
    for (std::size_t j : thin(pr.tgrid.n_steps)) csv.add(pr.tgrid.time(j), 0, sol.u[j]);

    std::vector<double> times;
    for (std::size_t j = 0; j <= pr.tgrid.n_steps; ++j) times.push_back(pr.tgrid.time(j));
    const auto prop = check_propagation(sol, 0.0);
    json d;
    d["steps"] = pr.tgrid.n_steps;
    d["dt"] = pr.tgrid.dt();
    d["dt_limit"] = sol.dt_limit;
    d["theta_max"] = sol.theta_max;
    d["times"] = times;
    d["gamma_series"] = io::series(sol.gamma_series);
    d["sup_series"] = io::series(sol.sup_series);
    d["lip_series"] = io::series(sol.lip_series);
    d["sc_series"] = io::series(sol.sc_series);
    d["propagation"] = {{"C_fit", prop.C_min}, {"gamma_T", sol.gamma_series.back()}};
    d["sup_bound_excess_without_coupling"] = lp.data.coupling.F ? json(nullptr) : io::number(sup_bound_excess(sol, lp.data.h));
    d["structure"] = structure_json(check_structure(lp.data.h, lp.lattice));
    run.manifest["diagnostics"]["det_hjb"] = d;
}

void solve_bshjb_cmd(Run& run, const LibraryProblem& lp, const MFGProblem& mp) {
    const SlabFlow flow = constant_flow(lp.tree, lp.steps_per_slab, lp.m0);
    log_info("bshjb: " + std::to_string(lp.tree.n_levels()) + " levels, " + std::to_string(lp.steps_per_slab) +
             " steps per slab");
    const auto t0 = std::chrono::steady_clock::now();
    const BSHJBSolution sol = solve_bshjb(mfgcn::detail::hjb_problem(mp, flow));
    run.timing("solve", t0);
    const NoiseTree& tree = lp.tree;
    const std::size_t N = tree.n_levels(), S = sol.steps_per_slab;

    io::FieldCsv values(run.file("bshjb_values.csv"));
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < tree.width(n); ++k)
            for (std::size_t s : {std::size_t{0}, S / 2})
                values.add(tree.jump_time(n) + static_cast<double>(s) * sol.dt(), io::node_id(n, k), sol.u[n][k][s]);
    for (std::size_t k = 0; k < tree.width(N); ++k) values.add(tree.horizon(), io::node_id(N, k), sol.leaf_terminal[k]);
    io::FieldCsv jumps(run.file("bshjb_dM.csv"));
    for (std::size_t n = 1; n <= N; ++n)
        for (std::size_t k = 0; k < tree.width(n); ++k) jumps.add(tree.jump_time(n), io::node_id(n, k), sol.dM[n][k]);

    const auto b = uniform_bounds(sol);
    json nodes = json::array();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < tree.width(n); ++k) {
            const NodeStats& st = sol.stats[n][k];
            nodes.push_back({{"id", io::node_id(n, k)}, {"sup", st.sup}, {"lip", st.lip}, {"sc", st.sc},
                             {"gamma_max", *std::max_element(st.gamma.begin(), st.gamma.end())}});
        }
    run.manifest["diagnostics"]["bshjb"] = {{"martingale_residual", martingale_residual(sol)},
                                            {"uniform_bounds", {{"sup", b.sup}, {"lip", b.lip}, {"sc", b.sc}}},
                                            {"nodes", nodes},
                                            {"dt", sol.dt()}};
    io::write_json(run.file("tree.json"), io::tree_manifest(tree));
}

void solve_fp_cmd(Run& run, const LibraryProblem& lp) {
    // optimal drift of the deterministic problem (F frozen at m0) transports m0
    const std::size_t steps = lp.steps_per_slab * lp.tree.n_levels();
    const auto xs = lp.grid.nodes();
    std::vector<double> f(lp.grid.size(), 0.0);
    if (lp.data.coupling.F) f = lp.data.coupling.F(0.0, xs, lp.m0);
    DetHJBProblem pr;
    pr.h = lp.data.h;
    pr.diff = lp.data.diff;
    pr.terminal = lp.terminal_at_m0();
    pr.tgrid = TimeGrid(lp.params.T, steps);
    pr.epsilon = run.cfg.hjb_epsilon;
    if (lp.data.coupling.F)
        pr.hook = [&f](std::size_t, double, std::span<double>, std::span<double> src) {
            std::copy(f.begin(), f.end(), src.begin());
        };
    const auto t0 = std::chrono::steady_clock::now();
    const DetHJBSolution hjb = solve_det_hjb(pr);
    const double delta = run.cfg.fp_delta > 0.0 ? run.cfg.fp_delta : 2.0 * lp.grid.dx();
    std::vector<GridField> drifts;
    for (std::size_t j = 0; j < steps; ++j) drifts.push_back(optimal_drift(lp.data.h, pr.tgrid.time(j), hjb.u[j], delta));
    FPProblem fp;
    fp.m0 = lp.m0;
    fp.drift = [&drifts](std::size_t j, double) { return drifts[j]; };
    fp.diff = lp.data.diff;
    fp.epsilon = run.cfg.fp_epsilon >= 0.0 ? run.cfg.fp_epsilon : 0.0;
    fp.tgrid = pr.tgrid;
    log_info("fokker-planck: " + std::to_string(steps) + " steps on " + std::to_string(lp.grid.size()) + " points");
    const DensityPath path = solve_fp(fp);
    run.timing("solve", t0);

    io::FieldCsv csv(run.file("fp_density.csv"));
    for (std::size_t j : thin(steps)) csv.add(fp.tgrid.time(j), 0, path.m[j]);
    std::vector<GridField> a_fields;
    for (std::size_t j = 0; j < steps; j += std::max<std::size_t>(1, steps / 16))
        a_fields.push_back(GridField::sample(lp.grid, [&](double x) { return lp.data.diff.a(fp.tgrid.time(j), x); }));
    const double C = divergence_constant(drifts, a_fields);
    std::vector<double> times;
    for (std::size_t j = 0; j <= steps; ++j) times.push_back(fp.tgrid.time(j));
    run.manifest["diagnostics"]["fokker_planck"] = {{"times", times},
                                                    {"mass_series", io::series(path.mass_series)},
                                                    {"linf_series", io::series(path.linf_series)},
                                                    {"p_moment_series", io::series(path.p_moment_series)},
                                                    {"holder_times", path.holder_times},
                                                    {"holder_d2_series", io::series(path.holder_d2_series)},
                                                    {"holder_constant", path.holder_constant()},
                                                    {"min_value", path.min_value},
                                                    {"max_mass_drift", path.max_mass_drift},
                                                    {"divergence_constant", C},
                                                    {"linf_growth_holds", verify_linf_growth(path, C)},
                                                    {"epsilon", fp.epsilon},
                                                    {"mollify_delta", delta}};
}

void export_mfg(Run& run, const MFGProblem& prob, const MFGSolution& sol) {
    const NoiseTree& tree = prob.tree;
    const std::size_t N = tree.n_levels(), S = prob.steps_per_slab;
    const TreeSnapshots original = to_original(snapshots(sol, tree, S));
    io::FieldCsv values(run.file("mfg_values.csv")), density(run.file("mfg_density.csv"));
    for (std::size_t j = 0; j <= N * S; j += std::max<std::size_t>(1, S / 2)) {
        const std::size_t level = original.level_at(j);
        const double t = j == N * S ? tree.horizon() : static_cast<double>(j) * prob.dt();
        for (std::size_t k = 0; k < original.u[j].size(); ++k) {
            values.add(t, io::node_id(level, k), original.u[j][k]);
            density.add(t, io::node_id(level, k), original.m[j][k]);
        }
    }
    // martingale integrands at jump resolution, in original coordinates
    io::FieldCsv integrand(run.file("mfg_martingale_integrand.csv"));
    for (std::size_t n = 1; n < N; ++n)
        for (std::size_t k = 0; k < tree.width(n); ++k) {
            const std::size_t j = n * S;
            integrand.add(tree.jump_time(n), io::node_id(n, k),
                          martingale_integrand(tree, n, k, sol.hjb.dM[n][k], original.u[j][k]));
        }
}

int solve_mfg_cmd(Run& run, const LibraryProblem& lp, const MFGProblem& prob) {
    log_info("mfg: " + std::string(to_string(prob.fixpoint.mode)) + ", tol " + std::to_string(prob.fixpoint.tol_d2) +
             ", at most " + std::to_string(prob.fixpoint.max_iters) + " iterations");
    io::write_json(run.file("tree.json"), io::tree_manifest(prob.tree));
    const auto t0 = std::chrono::steady_clock::now();
    json d;
    try {
        const MFGSolution sol = solve_mfg(prob);
        run.timing("solve", t0);
        io::write_residual_csv(run.file("residuals.csv"), sol.residual_series);
        if (!sol.refinement_series.empty())
            io::write_residual_csv(run.file("refinement_residuals.csv"), sol.refinement_series);
        for (std::size_t k = 0; k < sol.residual_series.size(); ++k)
            log_debug("iteration " + std::to_string(k + 1) + ": residual " + std::to_string(sol.residual_series[k]));
        export_mfg(run, prob, sol);
        const auto b = uniform_bounds(sol.hjb);
        d["residual_series"] = io::series(sol.residual_series);
        d["refinement_series"] = io::series(sol.refinement_series);
        d["iterations"] = sol.iterations;
        d["converged"] = true;
        d["fp_epsilon_loop"] = sol.fp_epsilon_loop;
        d["fp_epsilon_final"] = sol.fp_epsilon_final;
        d["martingale_residual"] = sol.martingale_residual;
        d["uniform_bounds"] = {{"sup", b.sup}, {"lip", b.lip}, {"sc", b.sc}};
        d["martingale_integrand_note"] =
            "reported at jump resolution only: the continuum integrand is the derivative of a locally finite measure";
        if (lp.dependence.mode == MeasureDependence::Mode::separated) {
            // probe monotonicity on shifted Gaussians and the duality gap against a twin run
            std::vector<GridField> probes;
            for (double mu : {-1.0, -0.5, 0.0, 0.5, 1.0})
                for (double sd : {0.3, 0.6}) probes.push_back(gaussian_density_on(prob.grid(), mu, sd));
            const auto mono = monotonicity_check(lp.data.coupling, probes, 0.0);
            d["monotonicity"] = {{"passed", mono.passed}, {"min_F", mono.min_F}, {"min_G", mono.min_G},
                                 {"min_total_separated", io::number(mono.min_total_separated)}, {"pairs", mono.pairs}};
            const SlabFlow init = uniform_flow(prob.tree, prob.steps_per_slab, prob.grid());
            try {
                const auto t1 = std::chrono::steady_clock::now();
                const MFGSolution twin = solve_mfg(prob, &init);
                run.timing("twin_run", t1);
                const DualityGap gap = duality_gap(sol, twin, prob);
                d["duality_gap"] = {{"total", gap.total()},
                                    {"terminal", gap.terminal},
                                    {"running", gap.running},
                                    {"bregman", gap.bregman},
                                    {"min_bregman_integrand", gap.min_bregman_integrand},
                                    {"twin_distance", flow_distance(prob.tree, prob.steps_per_slab, sol.m, twin.m)}};
            } catch (const Error& e) {
                d["duality_gap"] = {{"error", e.what()}};
            }
        }
        run.manifest["diagnostics"]["mfg"] = d;
        log_info("mfg converged: " + std::to_string(sol.residual_series.size()) + " iterations, residual " +
                 std::to_string(sol.residual_series.back()));
        return 0;
    } catch (const NonConvergenceError& e) {
        run.timing("solve", t0);
        io::write_residual_csv(run.file("residuals.csv"), e.residual_series);
        if (!e.partial_solution.refinement_series.empty())
            io::write_residual_csv(run.file("refinement_residuals.csv"), e.partial_solution.refinement_series);
        d["residual_series"] = io::series(e.residual_series);
        d["refinement_series"] = io::series(e.partial_solution.refinement_series);
        d["converged"] = false;
        d["martingale_residual"] = e.partial_solution.martingale_residual;
        run.manifest["diagnostics"]["mfg"] = d;
        throw;
    }
}

int verify_cmd(Run& run) {
    verify::BatteryOptions opt;
    opt.seed = run.cfg.seed;
    opt.mc_paths = run.cfg.mc_paths;
    verify::Battery battery(opt);
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = battery.run_all([](const verify::CriterionResult& r) {
        log_info(std::string(r.passed ? "PASS " : "FAIL ") + r.id + " (" + std::to_string(r.seconds) + " s)");
        log_debug(r.detail);
    });
    run.timing("battery", t0);
    json table = json::array();
    bool all = true;
    for (const auto& r : results) {
        table.push_back(verify::to_json(r));
        all = all && r.passed;
        std::printf("%s %-28s %s\n", r.passed ? "PASS" : "FAIL", r.id.c_str(), r.detail.c_str());
    }
    run.manifest["pass_table"] = table;
    const auto& eq = battery.equilibrium();
    if (eq.solution) {
        io::write_residual_csv(run.file("residuals.csv"), eq.solution->residual_series);
        if (!eq.solution->refinement_series.empty())
            io::write_residual_csv(run.file("refinement_residuals.csv"), eq.solution->refinement_series);
        export_mfg(run, *eq.problem, *eq.solution);
        io::write_json(run.file("tree.json"), io::tree_manifest(eq.problem->tree));
    }
    if (!all) {
        std::size_t failed = 0;
        for (const auto& r : results) failed += r.passed ? 0 : 1;
        run.manifest["error"] = {{"kind", "validation"},
                                 {"module", "verify"},
                                 {"message", std::to_string(failed) + " of " + std::to_string(results.size()) +
                                                 " criteria failed"}};
        return 2;
    }
    return 0;
}

int sweep_cmd(Run& run, const LibraryProblem& lp) {
    const std::string kind = run.cfg.sweep_kind;
    json d;
    d["kind"] = kind;
    std::ofstream csv(run.file("sweep.csv"));
    csv << std::setprecision(17);
    const auto t0 = std::chrono::steady_clock::now();
    if (kind == "stability") {
        // perturb H, Sigma and G by delta on the configured problem's tree
        csv << "delta,lhs,rhs,ratio\n";
        const std::size_t S = (lp.steps_per_slab * 3 + 1) / 2;
        std::vector<double> ratios;
        const MFGProblem base = io::mfg_problem(lp, run.cfg);
        const SlabFlow flow = constant_flow(lp.tree, S, lp.m0);
        MFGProblem p1 = base;
        p1.steps_per_slab = S;
        for (double delta : {0.1, 0.05, 0.025}) {
            MFGProblem p2 = p1;
            p2.data.h = verify::detail::add_potential(
                lp.data.h, [delta](double x) { return 0.5 * delta * (1.0 + std::sin(x)); },
                [delta](double x) { return 0.5 * delta * std::cos(x); });
            const auto sigma = lp.data.diff.sigma;
            p2.data.diff.sigma = [sigma, delta](double t, double x) { return (1.0 + delta) * sigma(t, x); };
            p2.data.coupling.G =
                verify::detail::add_to_field(lp.data.coupling.G, [delta](double x) { return delta * std::cos(x); });
            const auto est = stability_estimate(mfgcn::detail::hjb_problem(p1, flow),
                                                mfgcn::detail::hjb_problem(p2, flow), 2.0, lp.p_bound);
            csv << delta << ',' << est.lhs << ',' << est.rhs << ',' << est.ratio() << '\n';
            ratios.push_back(est.ratio());
            log_info("delta " + std::to_string(delta) + ": ratio " + std::to_string(est.ratio()));
        }
        d["ratios"] = ratios;
    } else if (kind == "refinement") {
        // semiconcavity propagation constant of the deterministic problem under dx refinement
        csv << "dx,C_fit,sc_max,lip_max\n";
        std::vector<double> Cs;
        for (double dx : {1.0 / 64, 1.0 / 128, 1.0 / 256}) {
            const Grid1D g = Grid1D::symmetric_with_spacing(lp.grid.x_max(), dx);
            DetHJBProblem pr;
            pr.h = lp.data.h;
            pr.diff = lp.data.diff;
            pr.terminal = GridField(g, lp.data.coupling.G(lp.params.T, g.nodes(), gaussian_density_on(g, 0.0, 0.5)));
            pr.tgrid = TimeGrid(lp.params.T, hjb_auto_steps(pr.h, pr.diff, 0.0, g, 0.0, lp.params.T, lp.p_bound));
            const DetHJBSolution sol = solve_det_hjb(pr);
            const auto rep = check_propagation(sol, 0.0);
            const double sc = *std::max_element(sol.sc_series.begin(), sol.sc_series.end());
            const double lip = *std::max_element(sol.lip_series.begin(), sol.lip_series.end());
            csv << dx << ',' << rep.C_min << ',' << sc << ',' << lip << '\n';
            Cs.push_back(rep.C_min);
            log_info("dx " + std::to_string(dx) + ": C_fit " + std::to_string(rep.C_min));
        }
        d["C_fit"] = Cs;
    } else {
        // tree refinement N/2, N, 2N: root values and noise projection errors
        csv << "levels,root_distance_to_previous,projection_error\n";
        const std::size_t N = lp.tree.n_levels();
        std::vector<std::size_t> levels{std::max<std::size_t>(1, N / 2), N, std::min<std::size_t>(14, 2 * N)};
        std::vector<GridField> roots;
        std::vector<double> dists;
        for (std::size_t L : levels) {
            io::RunConfig c = run.cfg;
            c.problem.n_levels = L;
            const LibraryProblem lpl = make_problem(c.problem);
            const MFGSolution sol = solve_mfg(io::mfg_problem(lpl, c));
            roots.push_back(sol.hjb.root());
            const double dist = roots.size() > 1 ? weighted_sup_distance(roots[roots.size() - 2], roots.back(), 1.0, 1.0, 0.0)
                                                 : 0.0;
            const double proj = project_path_error(std::min<std::size_t>(L, 12), 400, run.cfg.seed);
            csv << L << ',' << dist << ',' << proj << '\n';
            if (roots.size() > 1) dists.push_back(dist);
            log_info("levels " + std::to_string(L) + ": distance " + std::to_string(dist) + ", projection error " +
                     std::to_string(proj));
        }
        d["levels"] = levels;
        d["distances"] = dists;
    }
    run.timing("sweep", t0);
    run.manifest["diagnostics"]["sweep"] = d;
    return 0;
}

int dispatch(Run& run) {
    if (run.command == "verify") return verify_cmd(run);
    const LibraryProblem lp = make_problem(run.cfg.problem);
    run.manifest["problem"] = problem_json(lp);
    const MFGProblem prob = io::mfg_problem(lp, run.cfg);
    if (run.command == "solve-hjb") {
        solve_hjb(run, lp);
        return 0;
    }
    if (run.command == "solve-bshjb") {
        solve_bshjb_cmd(run, lp, prob);
        return 0;
    }
    if (run.command == "solve-fp") {
        solve_fp_cmd(run, lp);
        return 0;
    }
    if (run.command == "solve-mfg") return solve_mfg_cmd(run, lp, prob);
    return sweep_cmd(run, lp);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mean field games with common noise on a binary noise tree"};
    app.require_subcommand(1, 1);
    std::string config_path, output_dir;
    std::optional<std::uint64_t> seed;
    std::size_t workers = 0;
    for (const char* name : {"solve-hjb", "solve-bshjb", "solve-fp", "solve-mfg", "verify", "sweep"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "configuration file (key = value, [section] headers)");
        sub->add_option("--workers", workers, "worker threads (default: available cores)");
        sub->add_option("--output", output_dir, "output directory (overrides output_dir)");
        sub->add_option("--seed", seed, "random seed (overrides seed)");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    Run run;
    run.command = app.get_subcommands().front()->get_name();
    run.manifest["version"] = io::version;
    run.manifest["command"] = run.command;
    run.manifest["config_path"] = config_path;
    run.manifest["error"] = nullptr;

    int code = 0;
    std::string failure;
    try {
        if (const char* env = std::getenv("MFG_LOG")) {
            const std::string level = env;
            if (level == "quiet")
                log_level = LogLevel::quiet;
            else if (level == "info")
                log_level = LogLevel::info;
            else if (level == "debug")
                log_level = LogLevel::debug;
            else
                fail(ErrorKind::configuration, "cli-io", "MFG_LOG must be quiet, info or debug, got '" + level + "'");
        }
        if (!config_path.empty()) run.cfg = io::load_run_config(config_path);
        if (seed) run.cfg.seed = *seed;
        if (!output_dir.empty()) run.cfg.output_dir = output_dir;
        worker_setting() = workers;
        run.manifest["workers"] = worker_count();
        run.manifest["config"] = run.cfg.to_json();
    } catch (const Error& e) {
        failure = e.what();
        code = exit_code_for(e.kind());
        run.manifest["error"] = {{"kind", to_string(e.kind())}, {"module", e.module()}, {"message", e.what()}};
    }
    run.out = output_dir.empty() ? fs::path(run.cfg.output_dir) : fs::path(output_dir);
    std::error_code ec;
    fs::create_directories(run.out, ec);
    if (ec) {
        std::cerr << "mfgcn: cannot create output directory '" << run.out.string() << "': " << ec.message() << '\n';
        return 2;
    }

    if (code == 0) {
        try {
            code = dispatch(run);
        } catch (const Error& e) {
            failure = e.what();
            code = exit_code_for(e.kind());
            run.manifest["error"] = {{"kind", to_string(e.kind())}, {"module", e.module()}, {"message", e.what()}};
        } catch (const std::exception& e) {
            failure = e.what();
            code = 3;
            run.manifest["error"] = {{"kind", "internal"}, {"module", "cli-io"}, {"message", e.what()}};
        }
    }
    run.manifest["exit_code"] = code;
    run.manifest["status"] = code == 0 ? "ok" : "failed";
    run.timing("total", run.started);
    run.manifest["outputs"] = run.outputs;
    try {
        io::write_json(run.out / "manifest.json", run.manifest);
    } catch (const Error& e) {
        std::cerr << "mfgcn: " << e.what() << '\n';
    }
    if (!failure.empty()) std::cerr << "mfgcn: error: " << failure << '\n';
    return code;
}
