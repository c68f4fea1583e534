#pragma once

// Grids, grid fields, difference stencils, semiconcavity and Lipschitz
// estimators, norms, the expanding-cone weight psi and the sup/Lp
// interpolation bound. State dimension is 1 throughout.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mfgcn/error.hpp"

namespace mfgcn {

/// Uniform truncated state grid on [x_min, x_max].
class Grid1D {
public:
    Grid1D() = default;
    Grid1D(double x_min, double x_max, std::size_t n_points)
        : x_min_(x_min), x_max_(x_max), n_(n_points) {
        if (!std::isfinite(x_min) || !std::isfinite(x_max) || !(x_max > x_min))
            fail(ErrorKind::invalid_argument, "core", "grid bounds must satisfy x_min < x_max");
        if (n_points < 8)
            fail(ErrorKind::invalid_argument, "core", "grid needs at least 8 points");
        dx_ = (x_max - x_min) / static_cast<double>(n_points - 1);
    }

    /// Symmetric grid [-half_width, half_width] whose spacing is exactly dx.
    static Grid1D symmetric_with_spacing(double half_width, double dx) {
        const auto cells = static_cast<std::size_t>(std::ceil(half_width / dx - 1e-9));
        return Grid1D(-static_cast<double>(cells) * dx, static_cast<double>(cells) * dx, 2 * cells + 1);
    }

    double x_min() const noexcept { return x_min_; }
    double x_max() const noexcept { return x_max_; }
    std::size_t size() const noexcept { return n_; }
    double dx() const noexcept { return dx_; }
    double x(std::size_t i) const noexcept { return x_min_ + static_cast<double>(i) * dx_; }

    std::vector<double> nodes() const {
        std::vector<double> xs(n_);
        for (std::size_t i = 0; i < n_; ++i) xs[i] = x(i);
        return xs;
    }

    bool operator==(const Grid1D& other) const noexcept {
        return n_ == other.n_ && x_min_ == other.x_min_ && x_max_ == other.x_max_;
    }

private:
    double x_min_ = 0.0;
    double x_max_ = 1.0;
    std::size_t n_ = 0;
    double dx_ = 0.0;
};

/// Values of a scalar quantity at every node of a grid.
struct GridField {
    Grid1D grid;
    std::vector<double> values;

    GridField() = default;
    GridField(Grid1D g, std::vector<double> v) : grid(g), values(std::move(v)) {
        if (values.size() != grid.size())
            fail(ErrorKind::invalid_argument, "core", "field length does not match grid");
    }
    explicit GridField(Grid1D g, double fill = 0.0) : grid(g), values(g.size(), fill) {}

    template <class F>
    static GridField sample(const Grid1D& g, F&& f) {
        std::vector<double> v(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) v[i] = f(g.x(i));
        return GridField(g, std::move(v));
    }

    std::size_t size() const noexcept { return values.size(); }
    double operator[](std::size_t i) const noexcept { return values[i]; }
    double& operator[](std::size_t i) noexcept { return values[i]; }
    std::span<const double> view() const noexcept { return values; }

    bool all_finite() const {
        return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
    }
};

/// Time partition t0 + j * dt, j = 0..n_steps, ending at T.
struct TimeGrid {
    double T = 1.0;
    std::size_t n_steps = 1;
    double t0 = 0.0;

    TimeGrid() = default;
    TimeGrid(double horizon, std::size_t steps, double start = 0.0) : T(horizon), n_steps(steps), t0(start) {
        if (!(horizon > start) || steps == 0)
            fail(ErrorKind::invalid_argument, "core", "time grid needs T > t0 and n_steps >= 1");
    }
    double dt() const noexcept { return (T - t0) / static_cast<double>(n_steps); }
    double time(std::size_t j) const noexcept {
        return j == n_steps ? T : t0 + static_cast<double>(j) * dt();
    }
};

// ---------------------------------------------------------------------------
// Pointwise operators and stencils

/// Largest non-negative eigenvalue; in one dimension max(x, 0).
inline double m_plus(double x_second_diff) {
    if (!std::isfinite(x_second_diff))
        fail(ErrorKind::invalid_argument, "core", "m_plus of a non-finite value");
    return std::max(x_second_diff, 0.0);
}

inline double second_difference(std::span<const double> u, std::size_t i, double dx) {
    return (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (dx * dx);
}

/// Centered gradient in the interior, one-sided at the two ends.
inline double centered_gradient(std::span<const double> u, std::size_t i, double dx) {
    const std::size_t n = u.size();
    if (i == 0) return (u[1] - u[0]) / dx;
    if (i + 1 == n) return (u[n - 1] - u[n - 2]) / dx;
    return (u[i + 1] - u[i - 1]) / (2.0 * dx);
}

inline std::vector<double> gradient_field(std::span<const double> u, double dx) {
    std::vector<double> g(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) g[i] = centered_gradient(u, i, dx);
    return g;
}

/// Discrete ess sup m_+(D^2 u): the largest interior second difference, clipped at 0.
inline double semiconcavity_constant(const GridField& u) {
    if (u.size() < 3) fail(ErrorKind::invalid_argument, "core", "semiconcavity needs >= 3 points");
    double best = 0.0;
    const double dx = u.grid.dx();
    for (std::size_t i = 1; i + 1 < u.size(); ++i)
        best = std::max(best, second_difference(u.values, i, dx));
    return best;
}

inline double lipschitz_constant(std::span<const double> u, double dx) {
    if (u.size() < 2) fail(ErrorKind::invalid_argument, "core", "lipschitz constant needs >= 2 points");
    double best = 0.0;
    for (std::size_t i = 0; i + 1 < u.size(); ++i) best = std::max(best, std::abs(u[i + 1] - u[i]) / dx);
    return best;
}

inline double lipschitz_constant(const GridField& u) { return lipschitz_constant(u.values, u.grid.dx()); }

inline double sup_norm(std::span<const double> u) {
    double best = 0.0;
    for (double v : u) best = std::max(best, std::abs(v));
    return best;
}

inline double sup_norm(const GridField& u) { return sup_norm(u.values); }

/// Sup norm restricted to nodes with |x| <= radius.
inline double sup_norm_ball(const GridField& u, double radius) {
    double best = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
        if (std::abs(u.grid.x(i)) <= radius + 1e-12) best = std::max(best, std::abs(u[i]));
    return best;
}

/// Lp norm of the piecewise-linear interpolant by the trapezoid rule on |u|^p.
/// |u|^p is convex on each cell for p >= 1, so this never underestimates.
inline double lp_norm(const GridField& u, double p) {
    if (!(p >= 1.0)) fail(ErrorKind::invalid_argument, "core", "lp_norm needs p >= 1");
    const double dx = u.grid.dx();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < u.size(); ++i)
        acc += 0.5 * dx * (std::pow(std::abs(u[i]), p) + std::pow(std::abs(u[i + 1]), p));
    return std::pow(acc, 1.0 / p);
}

/// Riemann sum of a density: sum m_i dx.
inline double mass(const GridField& m) {
    double acc = 0.0;
    for (double v : m.values) acc += v;
    return acc * m.grid.dx();
}

/// sum_i f_i g_i dx
inline double pairing(std::span<const double> f, std::span<const double> g, double dx) {
    double acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) acc += f[i] * g[i];
    return acc * dx;
}

// ---------------------------------------------------------------------------
// Interpolation and mollification

/// Linear interpolation; outside the grid the end slopes are continued.
inline double interpolate(const GridField& u, double x) {
    const auto& g = u.grid;
    const double pos = (x - g.x_min()) / g.dx();
    const auto last = static_cast<double>(g.size() - 1);
    double base = std::floor(pos);
    base = std::clamp(base, 0.0, last - 1.0);
    const auto i = static_cast<std::size_t>(base);
    const double w = pos - base;
    return (1.0 - w) * u[i] + w * u[i + 1];
}

/// Linear interpolation with zero extension outside [x_min, x_max].
inline double interpolate_zero(const GridField& u, double x) {
    const auto& g = u.grid;
    const double pos = (x - g.x_min()) / g.dx();
    const auto last = static_cast<double>(g.size() - 1);
    if (pos < 0.0 || pos > last) return 0.0;
    const double base = std::min(std::floor(pos), last - 1.0);
    const auto i = static_cast<std::size_t>(base);
    const double w = pos - base;
    return (1.0 - w) * u[i] + w * u[i + 1];
}

/// C^2 bump supported in [-1, 1], unnormalised: (1 - z^2)^3.
inline double mollifier_kernel(double z) {
    const double s = 1.0 - z * z;
    return s > 0.0 ? s * s * s : 0.0;
}

/// rho_delta * u with discretely normalised weights; u is continued linearly past the ends.
inline GridField mollify(const GridField& u, double delta) {
    const double dx = u.grid.dx();
    const auto half = static_cast<std::ptrdiff_t>(std::floor(delta / dx));
    if (half < 1) return u;
    std::vector<double> w(static_cast<std::size_t>(2 * half + 1));
    double total = 0.0;
    for (std::ptrdiff_t k = -half; k <= half; ++k) {
        const double v = mollifier_kernel(static_cast<double>(k) * dx / delta);
        w[static_cast<std::size_t>(k + half)] = v;
        total += v;
    }
    for (double& v : w) v /= total;

    const auto n = static_cast<std::ptrdiff_t>(u.size());
    auto ext = [&](std::ptrdiff_t j) {
        if (j < 0) return u[0] + static_cast<double>(j) * (u[1] - u[0]);
        if (j >= n) return u[n - 1] + static_cast<double>(j - n + 1) * (u[n - 1] - u[n - 2]);
        return u[static_cast<std::size_t>(j)];
    };
    GridField out(u.grid);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -half; k <= half; ++k) acc += w[static_cast<std::size_t>(k + half)] * ext(i + k);
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sup-norm interpolation inequality

/// Constant C_{d,p} from the cone argument: for the cone of height h and slope L,
/// ||cone||_p^p = d * omega_d * B(d, p + 1) * h^(d+p) / L^d.
inline double interp_constant(double p, int d = 1) {
    const double dd = static_cast<double>(d);
    const double omega = std::pow(std::numbers::pi, dd / 2.0) / std::tgamma(dd / 2.0 + 1.0);
    const double beta = std::tgamma(dd) * std::tgamma(p + 1.0) / std::tgamma(dd + p + 1.0);
    return std::pow(1.0 / (dd * omega * beta), 1.0 / (dd + p));
}

/// Upper bound for ||w||_inf from ||Dw||_inf and ||w||_p.
inline double interp_sup_bound(double p, double grad_inf, double lp, int d = 1) {
    if (!(p >= 1.0)) fail(ErrorKind::invalid_argument, "core", "interp_sup_bound needs p >= 1");
    if (!(grad_inf > 0.0)) fail(ErrorKind::invalid_argument, "core", "interp_sup_bound needs grad_inf > 0");
    if (!(lp >= 0.0)) fail(ErrorKind::invalid_argument, "core", "interp_sup_bound needs lp_norm >= 0");
    if (d < 1) fail(ErrorKind::invalid_argument, "core", "dimension must be positive");
    const double dd = static_cast<double>(d);
    return interp_constant(p, d) * std::pow(grad_inf, dd / (dd + p)) * std::pow(lp, p / (dd + p));
}

// ---------------------------------------------------------------------------
// Expanding-cone weight psi_{lambda,K}(t, x) = exp(-(|x| - K t)_+^2 / (4 lambda (t + 1)))

struct PsiValue {
    double value;
    double time_derivative;
    double gradient;
    double second_derivative;
};

inline PsiValue psi_test(double lambda, double K, double t, double x) {
    if (!(lambda > 0.0)) fail(ErrorKind::invalid_argument, "core", "psi needs lambda > 0");
    if (!(K > 0.0)) fail(ErrorKind::invalid_argument, "core", "psi needs K > 0");
    if (!(t >= 0.0)) fail(ErrorKind::invalid_argument, "core", "psi needs t >= 0");
    const double r = std::max(std::abs(x) - K * t, 0.0);
    const double s = t + 1.0;
    const double value = std::exp(-r * r / (4.0 * lambda * s));
    if (r == 0.0) return {value, 0.0, 0.0, 0.0};
    const double sign = x > 0.0 ? 1.0 : -1.0;
    const double dt = value * (r * r / (4.0 * lambda * s * s) + K * r / (2.0 * lambda * s));
    const double dx = -value * r / (2.0 * lambda * s) * sign;
    const double dxx = value * (r * r / (4.0 * lambda * lambda * s * s) - 1.0 / (2.0 * lambda * s));
    return {value, dt, dx, dxx};
}

/// d_t psi - lambda m_+(D^2 psi) - K |D psi|, nonnegative everywhere.
inline double psi_residual(double lambda, double K, double t, double x) {
    const PsiValue v = psi_test(lambda, K, t, x);
    return v.time_derivative - lambda * std::max(v.second_derivative, 0.0) - K * std::abs(v.gradient);
}

/// Weighted sup distance sup_x |f - g| psi(t, x).
inline double weighted_sup_distance(const GridField& f, const GridField& g, double lambda, double K, double t) {
    double best = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
        best = std::max(best, std::abs(f[i] - g[i]) * psi_test(lambda, K, t, f.grid.x(i)).value);
    return best;
}

}  // namespace mfgcn
