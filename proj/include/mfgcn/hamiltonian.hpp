#pragma once

// Problem data: Hamiltonians, diffusion coefficients, measure couplings,
// the numerical Legendre transform and lattice checks of the structural
// conditions on H.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mfgcn/core.hpp"

namespace mfgcn {

using HamiltonianFn = std::function<double(double t, double x, double p)>;

struct HamiltonianSpec {
    std::string name;
    HamiltonianFn eval;    // H_t(x, p)
    HamiltonianFn grad_p;  // D_p H
    HamiltonianFn grad_x;  // D_x H
    double lambda0 = 1.0;
    double C0 = 1.0;
    double convexity_modulus = 1.0;  // lower bound on D_pp H over the working p-range

    double operator()(double t, double x, double p) const { return eval(t, x, p); }
};

/// Sigma(t, x); the diffusion matrix is a = Sigma^2 in one dimension.
struct DiffusionSpec {
    std::function<double(double t, double x)> sigma;
    double sigma_c11_bound = 0.0;

    double a(double t, double x) const {
        const double s = sigma(t, x);
        return s * s;
    }
    bool degenerate_zero() const { return !sigma; }

    static DiffusionSpec zero() { return {[](double, double) { return 0.0; }, 0.0}; }
    static DiffusionSpec constant_a(double a) {
        const double s = std::sqrt(a);
        return {[s](double, double) { return s; }, 0.0};
    }
};

/// Measure couplings F_t(x, m) and G(x, m), evaluated on a list of points for a
/// density m given on a grid.
using CouplingFieldFn =
    std::function<std::vector<double>(double t, std::span<const double> xs, const GridField& m)>;

struct CouplingSpec {
    std::string name;
    CouplingFieldFn F;  // running coupling, may be empty (F = 0)
    CouplingFieldFn G;  // terminal cost
    bool declared_monotone = false;
    bool G_depends_on_measure = true;
    double lipschitz_d2 = 0.0;  // Lipschitz constant of (F, G) in the d_2 distance

    double F_at(double t, double x, const GridField& m) const {
        if (!F) return 0.0;
        const double xs[1] = {x};
        return F(t, xs, m)[0];
    }
    double G_at(double x, const GridField& m) const {
        const double xs[1] = {x};
        return G(0.0, xs, m)[0];
    }
};

struct MeasureDependence {
    enum class Mode { none, separated, general_lipschitz };
    Mode mode = Mode::none;
    double lipschitz_in_d2 = 0.0;
};

inline const char* to_string(MeasureDependence::Mode mode) {
    switch (mode) {
        case MeasureDependence::Mode::none: return "none";
        case MeasureDependence::Mode::separated: return "separated";
        case MeasureDependence::Mode::general_lipschitz: return "general-lipschitz";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Legendre transform

/// H*_t(x, alpha) = sup_p (p alpha - H_t(x, p)) by lattice search on
/// [-p_radius, p_radius] refined with three Newton steps.
inline double legendre(const HamiltonianSpec& h, double t, double x, double alpha, double p_radius,
                       std::size_t n_samples = 401) {
    if (n_samples < 5) fail(ErrorKind::invalid_argument, "hamiltonian", "legendre needs >= 5 samples");
    const double dp = 2.0 * p_radius / static_cast<double>(n_samples - 1);
    std::vector<double> g(n_samples);
    std::size_t best = 0;
    for (std::size_t k = 0; k < n_samples; ++k) {
        const double p = -p_radius + static_cast<double>(k) * dp;
        g[k] = p * alpha - h.eval(t, x, p);
        if (g[k] > g[best]) best = k;
    }
    for (std::size_t k = 1; k + 1 < n_samples; ++k) {
        // g concave <=> H convex
        if (g[k + 1] - 2.0 * g[k] + g[k - 1] > 1e-9 * (1.0 + std::abs(g[k])))
            fail(ErrorKind::structural, "hamiltonian",
                 "negative second difference of H in p near p = " + std::to_string(-p_radius + k * dp) +
                     " (H not convex)");
    }
    if (best == 0 || best + 1 == n_samples)
        fail(ErrorKind::numerical, "hamiltonian",
             "legendre maximizer at the lattice boundary, p_radius " + std::to_string(p_radius) + " too small");

    double p = -p_radius + static_cast<double>(best) * dp;
    double value = g[best];
    const double lo = p - dp, hi = p + dp;
    for (int it = 0; it < 3; ++it) {
        const double hstep = 1e-5 * (1.0 + std::abs(p));
        const double hpp = (h.grad_p(t, x, p + hstep) - h.grad_p(t, x, p - hstep)) / (2.0 * hstep);
        if (!(hpp > 0.0)) break;
        const double next = std::clamp(p + (alpha - h.grad_p(t, x, p)) / hpp, lo, hi);
        const double v = next * alpha - h.eval(t, x, next);
        if (v < value) break;
        p = next;
        value = v;
    }
    return value;
}

// ---------------------------------------------------------------------------
// Structural checks

struct StructureLattice {
    double T = 1.0;
    double x_min = -4.0, x_max = 4.0;
    double p_radius = 4.0;
    std::size_t n_t = 33, n_x = 33, n_p = 33;
    double fd_step = 1e-4;
    double tolerance = 1e-6;
};

struct CheckResult {
    std::string name;
    bool passed = true;
    double worst_margin = std::numeric_limits<double>::infinity();
    std::string where;
    std::size_t samples = 0;
};

struct ValidationReport {
    std::vector<CheckResult> checks;
    std::string note;

    bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
    }
    const CheckResult* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }
};

namespace detail {

struct HSample {
    double H, Hp, Hx, Hpp, Hpx, Hxx;
};

inline HSample sample_derivatives(const HamiltonianSpec& h, double t, double x, double p, double e) {
    HSample s{};
    s.H = h.eval(t, x, p);
    s.Hp = h.grad_p(t, x, p);
    s.Hx = h.grad_x(t, x, p);
    s.Hpp = (h.grad_p(t, x, p + e) - h.grad_p(t, x, p - e)) / (2.0 * e);
    s.Hpx = (h.grad_p(t, x + e, p) - h.grad_p(t, x - e, p)) / (2.0 * e);
    s.Hxx = (h.grad_x(t, x + e, p) - h.grad_x(t, x - e, p)) / (2.0 * e);
    return s;
}

inline double lattice_point(double lo, double hi, std::size_t k, std::size_t n) {
    return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
}

inline void record(CheckResult& c, double margin, double tol, double t, double x, double p) {
    ++c.samples;
    if (margin < c.worst_margin) {
        c.worst_margin = margin;
        std::ostringstream os;
        os << "t=" << t << " x=" << x << " p=" << p;
        c.where = os.str();
    }
    if (margin < -tol) c.passed = false;
}

}  // namespace detail

/// Smallest C0 for which both conditions on H hold on the lattice, given lambda0.
/// Returns +inf when D_pp H vanishes somewhere (the second condition has no finite C0).
inline double required_C0(const HamiltonianSpec& h, const StructureLattice& lat) {
    double need = 0.0;
    for (std::size_t it = 0; it < lat.n_t; ++it)
        for (std::size_t ix = 0; ix < lat.n_x; ++ix)
            for (std::size_t ip = 0; ip < lat.n_p; ++ip) {
                const double t = detail::lattice_point(0.0, lat.T, it, lat.n_t);
                const double x = detail::lattice_point(lat.x_min, lat.x_max, ix, lat.n_x);
                const double p = detail::lattice_point(-lat.p_radius, lat.p_radius, ip, lat.n_p);
                const auto s = detail::sample_derivatives(h, t, x, p, lat.fd_step);
                const double legendre_gap = p * s.Hp - s.H;
                need = std::max(need, std::abs(s.Hx) - h.lambda0 * legendre_gap);
                if (!(s.Hpp > 0.0)) return std::numeric_limits<double>::infinity();
                // min over q and |z| = 1 of Hpp q^2 + 2 Hpx z q + Hxx z^2 is Hxx - Hpx^2 / Hpp
                need = std::max(need, -(h.lambda0 * legendre_gap + s.Hxx - s.Hpx * s.Hpx / s.Hpp));
            }
    return need;
}

/// Lattice verification of uniform convexity, the two structural inequalities
/// on H and a spot check of the equivalent conditions on the Legendre transform.
inline ValidationReport check_structure(const HamiltonianSpec& h, const StructureLattice& lat) {
    ValidationReport rep;
    auto named = [](const char* name) {
        CheckResult c;
        c.name = name;
        return c;
    };
    CheckResult convex = named("uniform_convexity"), grad_x = named("gradient_x_bound"),
                second = named("second_order_bound");
    CheckResult lag_grad = named("lagrangian_gradient_bound"), lag_hess = named("lagrangian_hessian_bound");

    for (std::size_t it = 0; it < lat.n_t; ++it)
        for (std::size_t ix = 0; ix < lat.n_x; ++ix)
            for (std::size_t ip = 0; ip < lat.n_p; ++ip) {
                const double t = detail::lattice_point(0.0, lat.T, it, lat.n_t);
                const double x = detail::lattice_point(lat.x_min, lat.x_max, ix, lat.n_x);
                const double p = detail::lattice_point(-lat.p_radius, lat.p_radius, ip, lat.n_p);
                const auto s = detail::sample_derivatives(h, t, x, p, lat.fd_step);
                const double legendre_gap = p * s.Hp - s.H;
                // uniform convexity uses a lattice second difference of H itself so kinks are seen
                const double dp = 2.0 * lat.p_radius / static_cast<double>(lat.n_p - 1);
                const double hpp_lattice =
                    (h.eval(t, x, p + dp) - 2.0 * s.H + h.eval(t, x, p - dp)) / (dp * dp);
                detail::record(convex, hpp_lattice - h.convexity_modulus, lat.tolerance, t, x, p);
                detail::record(grad_x, h.C0 + h.lambda0 * legendre_gap - std::abs(s.Hx), lat.tolerance, t, x, p);
                const double worst_q = s.Hpp > 0.0 ? s.Hxx - s.Hpx * s.Hpx / s.Hpp
                                                   : -std::numeric_limits<double>::infinity();
                detail::record(second, h.lambda0 * legendre_gap + worst_q + h.C0, lat.tolerance, t, x, p);
            }

    // Conditions on H*: |D_x H*| <= C0 + lambda0 H*, D_xx H* <= C0 + lambda0 H*, at alpha = D_p H(p)
    // for a coarse sub-lattice (each H* value costs a Legendre transform).
    if (convex.passed) {
        const std::size_t nx = std::min<std::size_t>(lat.n_x, 9), np = std::min<std::size_t>(lat.n_p, 9);
        const double e = 1e-3;
        double alpha_radius = 0.0;
        for (std::size_t ix = 0; ix < nx; ++ix) {
            const double x = detail::lattice_point(lat.x_min, lat.x_max, ix, nx);
            alpha_radius = std::max({alpha_radius, std::abs(h.grad_p(0.0, x, 0.5 * lat.p_radius)),
                                     std::abs(h.grad_p(0.0, x, -0.5 * lat.p_radius))});
        }
        for (std::size_t ix = 1; ix + 1 < nx; ++ix)
            for (std::size_t ip = 0; ip < np; ++ip) {
                const double t = 0.0;
                const double x = detail::lattice_point(lat.x_min, lat.x_max, ix, nx);
                const double alpha = detail::lattice_point(-alpha_radius, alpha_radius, ip, np);
                try {
                    const double L0 = legendre(h, t, x, alpha, 2.0 * lat.p_radius, 801);
                    const double Lp = legendre(h, t, x + e, alpha, 2.0 * lat.p_radius, 801);
                    const double Lm = legendre(h, t, x - e, alpha, 2.0 * lat.p_radius, 801);
                    const double dx_L = (Lp - Lm) / (2.0 * e);
                    const double dxx_L = (Lp - 2.0 * L0 + Lm) / (e * e);
                    const double bound = h.C0 + h.lambda0 * L0;
                    // the legendre lattice error is O(dp^2); allow a matching slack here
                    detail::record(lag_grad, bound - std::abs(dx_L), 1e-3, t, x, alpha);
                    detail::record(lag_hess, bound - dxx_L, 1e-2, t, x, alpha);
                } catch (const Error&) {
                    detail::record(lag_grad, -std::numeric_limits<double>::infinity(), 0.0, t, x, alpha);
                }
            }
        rep.checks = {convex, grad_x, second, lag_grad, lag_hess};
    } else {
        rep.checks = {convex, grad_x, second};
    }
    rep.note = "lattice " + std::to_string(lat.n_t) + "x" + std::to_string(lat.n_x) + "x" +
               std::to_string(lat.n_p) + " (t, x, p); mixed Hessians by central differences";
    return rep;
}

/// sup |D_p H| over the lattice x-range and |p| <= p_radius.
inline double sup_grad_p(const HamiltonianSpec& h, double t, double x_min, double x_max, double p_radius,
                         std::size_t n_x = 65, std::size_t n_p = 65) {
    double best = 0.0;
    for (std::size_t ix = 0; ix < n_x; ++ix)
        for (std::size_t ip = 0; ip < n_p; ++ip) {
            const double x = detail::lattice_point(x_min, x_max, ix, n_x);
            const double p = detail::lattice_point(-p_radius, p_radius, ip, n_p);
            best = std::max(best, std::abs(h.grad_p(t, x, p)));
        }
    return best;
}

}  // namespace mfgcn
