#pragma once

// Deterministic degenerate HJB terminal-value problem
//   -d_t u - (a + eps) u_xx + H_t(x, D u) = 0 on [t0, T),  u_T = G,
// solved by an explicit monotone scheme: centred second differences for the
// diffusion and a local Lax-Friedrichs flux for H.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mfgcn/core.hpp"
#include "mfgcn/hamiltonian.hpp"

namespace mfgcn {

/// Called once per backward step j+1 -> j with the time at which the coefficients
/// are evaluated. `diffusion` arrives filled with a(t, x_i) + eps and `source`
/// with zeros; the step then uses H - source.
using CoefficientHook =
    std::function<void(std::size_t j, double t, std::span<double> diffusion, std::span<double> source)>;

struct DetHJBProblem {
    HamiltonianSpec h;
    DiffusionSpec diff = DiffusionSpec::zero();
    GridField terminal;
    TimeGrid tgrid;
    double epsilon = 0.0;
    std::optional<double> frozen_time;  // evaluate a and H at this time on every step
    CoefficientHook hook;
    double cfl_safety = 0.9;
};

struct DetHJBSolution {
    TimeGrid tgrid;
    std::vector<GridField> u;  // u[j] at tgrid.time(j); u.back() is the terminal datum
    std::vector<double> gamma_series, sup_series, lip_series, sc_series;
    double theta_max = 0.0;  // largest Lax-Friedrichs coefficient used
    double dt_limit = std::numeric_limits<double>::infinity();  // tightest stability bound met

    const GridField& at_step(std::size_t j) const { return u.at(j); }
};

/// sup_i { (m_+(D^2 u)^2 + (Du)^2)^(1/2) - sqrt(2) lambda0 u }_+ over interior nodes.
inline double gamma_functional(const GridField& u, double lambda0) {
    const double dx = u.grid.dx();
    double best = 0.0;
    for (std::size_t i = 1; i + 1 < u.size(); ++i) {
        const double s = std::max(second_difference(u.values, i, dx), 0.0);
        const double g = centered_gradient(u.values, i, dx);
        best = std::max(best, std::sqrt(s * s + g * g) - std::numbers::sqrt2 * lambda0 * u[i]);
    }
    return best;
}

/// Stable step bound for the explicit scheme: safety * dx^2 / (2 (sup a + eps) + dx theta).
inline double hjb_dt_bound(double sup_a_eps, double theta, double dx, double safety = 0.9) {
    return safety * dx * dx / (2.0 * sup_a_eps + dx * theta);
}

namespace detail {

inline double sup_diffusion(const DiffusionSpec& diff, const Grid1D& grid, double t0, double T) {
    double best = 0.0;
    for (int k = 0; k <= 16; ++k) {
        const double t = t0 + (T - t0) * k / 16.0;
        for (std::size_t i = 0; i < grid.size(); ++i) best = std::max(best, diff.a(t, grid.x(i)));
    }
    return best;
}

}  // namespace detail

/// Smallest number of steps meeting the stability bound when |Du| stays below p_bound.
inline std::size_t hjb_auto_steps(const HamiltonianSpec& h, const DiffusionSpec& diff, double epsilon,
                                  const Grid1D& grid, double t0, double T, double p_bound) {
    const double a = detail::sup_diffusion(diff, grid, t0, T) + epsilon;
    double theta = 0.0;
    for (int k = 0; k <= 4; ++k)
        theta = std::max(theta, sup_grad_p(h, t0 + (T - t0) * k / 4.0, grid.x_min(), grid.x_max(), p_bound,
                                           std::min<std::size_t>(grid.size(), 129), 65));
    const double dt = hjb_dt_bound(a, theta, grid.dx());
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((T - t0) / dt - 1e-9)));
}

inline DetHJBSolution solve_det_hjb(const DetHJBProblem& prob) {
    const Grid1D& grid = prob.terminal.grid;
    const std::size_t n = grid.size();
    const double dx = grid.dx();
    const double dt = prob.tgrid.dt();
    if (!(prob.epsilon >= 0.0)) fail(ErrorKind::invalid_argument, "det-hjb", "epsilon must be >= 0");
    if (!prob.terminal.all_finite()) fail(ErrorKind::invalid_argument, "det-hjb", "terminal datum not finite");

    DetHJBSolution sol;
    sol.tgrid = prob.tgrid;
    sol.u.resize(prob.tgrid.n_steps + 1);
    sol.u.back() = prob.terminal;

    auto monitor = [&](const GridField& u) {
        sol.gamma_series.push_back(gamma_functional(u, prob.h.lambda0));
        sol.sup_series.push_back(sup_norm(u));
        sol.lip_series.push_back(lipschitz_constant(u));
        sol.sc_series.push_back(semiconcavity_constant(u));
    };
    monitor(prob.terminal);

    std::vector<double> a(n), src(n), next(n), pm(n + 1);
    for (std::size_t j = prob.tgrid.n_steps; j-- > 0;) {
        const double t_eval = prob.frozen_time.value_or(prob.tgrid.time(j + 1));
        const std::vector<double>& u = sol.u[j + 1].values;
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = prob.diff.a(t_eval, grid.x(i)) + prob.epsilon;
            src[i] = 0.0;
        }
        if (prob.hook) prob.hook(j, t_eval, a, src);

        // one-sided slopes pm[k] between nodes k-1 and k, with linear ghost cells
        for (std::size_t k = 1; k < n; ++k) pm[k] = (u[k] - u[k - 1]) / dx;
        pm[0] = pm[1];
        pm[n] = pm[n - 1];

        double a_max = 0.0, theta_step = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = grid.x(i);
            const double p_minus = pm[i], p_plus = pm[i + 1];
            const double theta = std::max(std::abs(prob.h.grad_p(t_eval, x, p_minus)),
                                          std::abs(prob.h.grad_p(t_eval, x, p_plus)));
            const double h_num = prob.h.eval(t_eval, x, 0.5 * (p_minus + p_plus)) - 0.5 * theta * (p_plus - p_minus);
            const double d2u = (p_plus - p_minus) / dx;
            next[i] = u[i] + dt * (a[i] * d2u - (h_num - src[i]));
            a_max = std::max(a_max, a[i]);
            theta_step = std::max(theta_step, theta);
            if (a[i] < 0.0)
                fail(ErrorKind::invalid_argument, "det-hjb", "negative diffusion coefficient");
        }
        const double bound = hjb_dt_bound(a_max, theta_step, dx, prob.cfl_safety);
        if (dt > bound * (1.0 + 1e-12)) {
            std::ostringstream os;
            os << "CFL violated at t=" << t_eval << ": dt=" << dt << " > " << prob.cfl_safety
               << "*dx^2/(2(sup a+eps)+dx*theta) = " << bound << " (sup a+eps=" << a_max
               << ", theta=" << theta_step << ", dx=" << dx << ")";
            fail(ErrorKind::configuration, "det-hjb", os.str());
        }
        sol.theta_max = std::max(sol.theta_max, theta_step);
        sol.dt_limit = std::min(sol.dt_limit, bound);
        for (std::size_t i = 0; i < n; ++i)
            if (!std::isfinite(next[i])) {
                std::ostringstream os;
                os << "non-finite value at time level " << j << " (t=" << prob.tgrid.time(j) << ")";
                fail(ErrorKind::numerical, "det-hjb", os.str());
            }
        sol.u[j] = GridField(grid, next);
        monitor(sol.u[j]);
    }
    // monitors were collected backward in time
    std::reverse(sol.gamma_series.begin(), sol.gamma_series.end());
    std::reverse(sol.sup_series.begin(), sol.sup_series.end());
    std::reverse(sol.lip_series.begin(), sol.lip_series.end());
    std::reverse(sol.sc_series.begin(), sol.sc_series.end());
    return sol;
}

// ---------------------------------------------------------------------------
// Propagation of the gamma functional: gamma_t <= C (T - t) + exp(C (T - t)) gamma_T

struct PropagationReport {
    double C_given = 0.0;
    bool holds_with_given = true;
    double C_min = 0.0;  // smallest C for which the bound holds at every time level
    double worst_excess_given = 0.0;
};

inline double propagation_bound(double C, double tau, double gamma_T) {
    return C * tau + std::exp(C * tau) * gamma_T;
}

inline PropagationReport check_propagation(const DetHJBSolution& sol, double C_fit) {
    PropagationReport rep;
    rep.C_given = C_fit;
    const double T = sol.tgrid.T;
    const double gT = sol.gamma_series.back();
    for (std::size_t j = 0; j + 1 < sol.gamma_series.size(); ++j) {
        const double tau = T - sol.tgrid.time(j);
        const double g = sol.gamma_series[j];
        const double excess = g - propagation_bound(C_fit, tau, gT);
        if (excess > 1e-12) {
            rep.holds_with_given = false;
            rep.worst_excess_given = std::max(rep.worst_excess_given, excess);
        }
        if (g <= propagation_bound(rep.C_min, tau, gT)) continue;
        double lo = rep.C_min, hi = std::max(1.0, 2.0 * rep.C_min);
        while (propagation_bound(hi, tau, gT) < g) hi *= 2.0;
        for (int it = 0; it < 200 && hi - lo > 1e-12 * (1.0 + hi); ++it) {
            const double mid = 0.5 * (lo + hi);
            (propagation_bound(mid, tau, gT) >= g ? hi : lo) = mid;
        }
        rep.C_min = hi;
    }
    return rep;
}

/// Sup bound ||u_t|| <= ||G|| + sup_x |H_t(x, 0)| (T - t) at every level; returns the
/// largest excess (<= 0 when the bound holds).
inline double sup_bound_excess(const DetHJBSolution& sol, const HamiltonianSpec& h) {
    const Grid1D& grid = sol.u.back().grid;
    double h0 = 0.0;
    for (int k = 0; k <= 16; ++k) {
        const double t = sol.tgrid.t0 + (sol.tgrid.T - sol.tgrid.t0) * k / 16.0;
        for (std::size_t i = 0; i < grid.size(); ++i) h0 = std::max(h0, std::abs(h.eval(t, grid.x(i), 0.0)));
    }
    const double g = sup_norm(sol.u.back());
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < sol.u.size(); ++j)
        worst = std::max(worst, sol.sup_series[j] - (g + h0 * (sol.tgrid.T - sol.tgrid.time(j))));
    return worst;
}

}  // namespace mfgcn
