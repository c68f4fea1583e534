#pragma once

// Forward Fokker-Planck equation
//   d_t m = d_x [ eps d_x m + d_x(a m) + m b ]
// by an explicit conservative finite-volume scheme (upwind transport with
// velocity -b, centred diffusion, zero flux at the truncation boundary), and
// exact one-dimensional Wasserstein distances through quantile functions.

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
#include "mfgcn/hamiltonian.hpp"

namespace mfgcn {

// ---------------------------------------------------------------------------
// Moments

inline double mean_position(const GridField& m) {
    double acc = 0.0, tot = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        acc += m.grid.x(i) * m[i];
        tot += m[i];
    }
    return acc / tot;
}

inline double variance(const GridField& m) {
    const double mu = mean_position(m);
    double acc = 0.0, tot = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double d = m.grid.x(i) - mu;
        acc += d * d * m[i];
        tot += m[i];
    }
    return acc / tot;
}

/// sum |x_i|^p m_i dx
inline double absolute_moment(const GridField& m, double p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) acc += std::pow(std::abs(m.grid.x(i)), p) * m[i];
    return acc * m.grid.dx();
}

// ---------------------------------------------------------------------------
// Wasserstein distance

/// Quantile function of a grid density, each m_i spread uniformly over its
/// cell [x_i - dx/2, x_i + dx/2] so the CDF is piecewise linear.
class QuantileFunction {
public:
    explicit QuantileFunction(const GridField& m) {
        const std::size_t n = m.size();
        if (n == 0) fail(ErrorKind::invalid_argument, "fokker-planck", "empty density");
        const double dx = m.grid.dx();
        edges_.resize(n + 1);
        cdf_.resize(n + 1);
        cdf_[0] = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (m[i] < -1e-8) fail(ErrorKind::invalid_argument, "fokker-planck", "negative density in d_2");
            cdf_[i + 1] = cdf_[i] + std::max(m[i], 0.0) * dx;
        }
        for (std::size_t i = 0; i <= n; ++i) edges_[i] = m.grid.x_min() + (static_cast<double>(i) - 0.5) * dx;
        mass_ = cdf_[n];
        if (!(mass_ > 0.0)) fail(ErrorKind::invalid_argument, "fokker-planck", "zero-mass density in d_2");
        for (double& c : cdf_) c /= mass_;
    }

    double mass() const noexcept { return mass_; }

    double operator()(double q) const {
        auto it = std::lower_bound(cdf_.begin() + 1, cdf_.end(), q);
        if (it == cdf_.end()) it = cdf_.end() - 1;
        const auto k = static_cast<std::size_t>(it - cdf_.begin());
        const double lo = cdf_[k - 1], hi = cdf_[k];
        const double w = hi > lo ? (q - lo) / (hi - lo) : 0.0;
        return edges_[k - 1] + std::clamp(w, 0.0, 1.0) * (edges_[k] - edges_[k - 1]);
    }

    /// Values at the midpoint quantiles (k + 1/2) / K, by a single sweep over the cells.
    std::vector<double> sample(std::size_t K) const {
        std::vector<double> out(K);
        std::size_t c = 1;
        for (std::size_t k = 0; k < K; ++k) {
            const double q = (static_cast<double>(k) + 0.5) / static_cast<double>(K);
            while (c + 1 < cdf_.size() && cdf_[c] < q) ++c;
            const double lo = cdf_[c - 1], hi = cdf_[c];
            const double w = hi > lo ? std::clamp((q - lo) / (hi - lo), 0.0, 1.0) : 0.0;
            out[k] = edges_[c - 1] + w * (edges_[c] - edges_[c - 1]);
        }
        return out;
    }

private:
    std::vector<double> edges_, cdf_;
    double mass_ = 0.0;
};

inline constexpr std::size_t wasserstein_quantiles = 10000;

inline double wasserstein2_sampled(const std::vector<double>& qa, const std::vector<double>& qb) {
    double acc = 0.0;
    for (std::size_t k = 0; k < qa.size(); ++k) acc += (qa[k] - qb[k]) * (qa[k] - qb[k]);
    return std::sqrt(acc / static_cast<double>(qa.size()));
}

inline double wasserstein2_1d(const GridField& mu, const GridField& nu) {
    const QuantileFunction qa(mu), qb(nu);
    if (std::abs(qa.mass() - qb.mass()) > 1e-8 * std::max(1.0, qa.mass()))
        fail(ErrorKind::invalid_argument, "fokker-planck", "d_2 between measures of different mass");
    return wasserstein2_sampled(qa.sample(wasserstein_quantiles), qb.sample(wasserstein_quantiles));
}

// ---------------------------------------------------------------------------
// Solver

/// Drift b on the grid for the step [t_j, t_{j+1}).
using DriftFn = std::function<GridField(std::size_t j, double t)>;
/// Optional override of a(t, x_i) for step j (a may depend on a frozen measure flow).
using DiffusionFieldFn = std::function<void(std::size_t j, double t, std::span<double> a)>;

struct FPProblem {
    GridField m0;
    DriftFn drift;  // empty means b = 0
    DiffusionSpec diff = DiffusionSpec::zero();
    DiffusionFieldFn diffusion_field;
    double epsilon = 0.0;
    TimeGrid tgrid;
    double cfl_safety = 0.9;
    double moment_p = 4.0;
    std::size_t holder_samples = 33;  // time levels used for the Hoelder-in-d_2 series
    bool check_initial = true;
};

struct DensityPath {
    TimeGrid tgrid;
    std::vector<GridField> m;
    std::vector<double> mass_series, linf_series, p_moment_series;
    std::vector<double> holder_times, holder_d2_series;  // max_{s < t} d_2(m_s, m_t) / |t - s|^(1/2)
    double min_value = 0.0;
    double max_mass_drift = 0.0;  // max |mass_t - mass_0|

    double holder_constant() const {
        double best = 0.0;
        for (double v : holder_d2_series) best = std::max(best, v);
        return best;
    }
};

/// Stable step for the explicit scheme with |b| <= b_max.
inline double fp_dt_bound(double sup_a_eps, double b_max, double dx, double safety = 0.9) {
    return safety * dx * dx / (2.0 * sup_a_eps + 2.0 * dx * b_max);
}

inline std::size_t fp_auto_steps(double sup_a_eps, double b_max, double dx, double duration) {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(duration / fp_dt_bound(sup_a_eps, b_max, dx) - 1e-9)));
}

/// One explicit step in place. Returns false if the positivity condition fails.
inline bool fp_step(std::vector<double>& m, std::span<const double> b, std::span<const double> a, double eps,
                    double dx, double dt, std::vector<double>& flux, double& dt_bound) {
    const std::size_t n = m.size();
    flux.assign(n + 1, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double v = -0.5 * (b[i] + b[i + 1]);
        const double diffusive = -eps * (m[i + 1] - m[i]) / dx - (a[i + 1] * m[i + 1] - a[i] * m[i]) / dx;
        flux[i + 1] = diffusive + std::max(v, 0.0) * m[i] + std::min(v, 0.0) * m[i + 1];
    }
    // diagonal coefficient of the update must stay nonnegative
    dt_bound = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        double out_rate = 0.0;
        if (i + 1 < n) out_rate += (eps + a[i]) / (dx * dx) + std::max(-0.5 * (b[i] + b[i + 1]), 0.0) / dx;
        if (i > 0) out_rate += (eps + a[i]) / (dx * dx) + std::max(0.5 * (b[i - 1] + b[i]), 0.0) / dx;
        if (out_rate > 0.0) dt_bound = std::min(dt_bound, 1.0 / out_rate);
    }
    for (std::size_t i = 0; i < n; ++i) m[i] -= dt / dx * (flux[i + 1] - flux[i]);
    return dt <= dt_bound * (1.0 + 1e-12);
}

namespace detail {

inline void holder_series(DensityPath& path, std::size_t samples) {
    const std::size_t steps = path.m.size() - 1;
    samples = std::max<std::size_t>(2, std::min(samples, steps + 1));
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < samples; ++k) {
        const std::size_t j = (k * steps) / (samples - 1);
        if (idx.empty() || idx.back() != j) idx.push_back(j);
    }
    std::vector<std::vector<double>> q;
    for (std::size_t j : idx) q.push_back(QuantileFunction(path.m[j]).sample(wasserstein_quantiles));
    for (std::size_t b = 0; b < idx.size(); ++b) {
        double best = 0.0;
        for (std::size_t a = 0; a < b; ++a) {
            const double gap = path.tgrid.time(idx[b]) - path.tgrid.time(idx[a]);
            best = std::max(best, wasserstein2_sampled(q[a], q[b]) / std::sqrt(gap));
        }
        path.holder_times.push_back(path.tgrid.time(idx[b]));
        path.holder_d2_series.push_back(best);
    }
}

}  // namespace detail

inline DensityPath solve_fp(const FPProblem& prob) {
    const Grid1D& grid = prob.m0.grid;
    const std::size_t n = grid.size();
    const double dx = grid.dx();
    const double dt = prob.tgrid.dt();
    if (!(prob.epsilon >= 0.0)) fail(ErrorKind::invalid_argument, "fokker-planck", "epsilon must be >= 0");
    if (prob.check_initial) {
        for (double v : prob.m0.values)
            if (!(v >= 0.0) || !std::isfinite(v))
                fail(ErrorKind::invalid_argument, "fokker-planck", "initial density must be finite and >= 0");
        if (std::abs(mass(prob.m0) - 1.0) > 1e-10)
            fail(ErrorKind::invalid_argument, "fokker-planck", "initial density must have unit mass");
    }

    DensityPath path;
    path.tgrid = prob.tgrid;
    path.m.reserve(prob.tgrid.n_steps + 1);
    path.m.push_back(prob.m0);
    const double mass0 = mass(prob.m0);
    auto record = [&](const GridField& m) {
        const double ms = mass(m);
        path.mass_series.push_back(ms);
        path.max_mass_drift = std::max(path.max_mass_drift, std::abs(ms - mass0));
        path.linf_series.push_back(sup_norm(m));
        path.p_moment_series.push_back(absolute_moment(m, prob.moment_p));
        path.min_value = std::min(path.min_value, *std::min_element(m.values.begin(), m.values.end()));
    };
    record(prob.m0);

    std::vector<double> cur = prob.m0.values, a(n), flux;
    const GridField zero_drift(grid, 0.0);
    for (std::size_t j = 0; j < prob.tgrid.n_steps; ++j) {
        const double t = prob.tgrid.time(j);
        for (std::size_t i = 0; i < n; ++i) a[i] = prob.diff.a(t, grid.x(i));
        if (prob.diffusion_field) prob.diffusion_field(j, t, a);
        const GridField b = prob.drift ? prob.drift(j, t) : zero_drift;
        if (!(b.grid == grid)) fail(ErrorKind::invalid_argument, "fokker-planck", "drift off the density grid");
        double bound = 0.0;
        if (!fp_step(cur, b.values, a, prob.epsilon, dx, dt, flux, bound)) {
            std::ostringstream os;
            os << "CFL violated at t=" << t << ": dt=" << dt << " exceeds the positivity bound " << bound;
            fail(ErrorKind::configuration, "fokker-planck", os.str());
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(cur[i]))
                fail(ErrorKind::numerical, "fokker-planck", "non-finite density at step " + std::to_string(j + 1));
            if (cur[i] < -1e-8) {
                std::ostringstream os;
                os << "negative density " << cur[i] << " at x=" << grid.x(i) << ", step " << j + 1;
                fail(ErrorKind::numerical, "fokker-planck", os.str());
            }
        }
        path.m.emplace_back(grid, cur);
        record(path.m.back());
    }
    if (prob.holder_samples > 1) detail::holder_series(path, prob.holder_samples);
    return path;
}

/// Growth constant for the sup bound: the largest positive part of
/// d_x b + d_xx a over the supplied drift fields (centred differences).
inline double divergence_constant(const std::vector<GridField>& drifts, const std::vector<GridField>& diffusions = {}) {
    double c = 0.0;
    for (const GridField& b : drifts)
        for (std::size_t i = 1; i + 1 < b.size(); ++i) c = std::max(c, (b[i + 1] - b[i - 1]) / (2.0 * b.grid.dx()));
    for (const GridField& a : diffusions)
        for (std::size_t i = 1; i + 1 < a.size(); ++i) c = std::max(c, second_difference(a.values, i, a.grid.dx()));
    return c;
}

/// ||m_t||_inf <= exp(C t) ||m_0||_inf (1 + 10 dx) at every time level.
inline bool verify_linf_growth(const DensityPath& path, double C_div) {
    const double m0 = path.linf_series.front();
    const double dx = path.m.front().grid.dx();
    for (std::size_t j = 0; j < path.linf_series.size(); ++j)
        if (path.linf_series[j] > std::exp(C_div * path.tgrid.time(j) - C_div * path.tgrid.t0) * m0 * (1.0 + 10.0 * dx))
            return false;
    return true;
}

}  // namespace mfgcn
