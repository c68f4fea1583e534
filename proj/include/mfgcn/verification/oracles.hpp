#pragma once

// Reference solutions used by the tests and the verification battery. None of
// these call the solvers: each is a closed form or a brute-force evaluation.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>

namespace mfgcn::oracle {

/// e^{nu tau Laplacian} applied to A exp(-x^2 / (2 s^2)).
inline double heat_gaussian(double amplitude, double s, double nu, double tau, double x) {
    const double v = s * s + 2.0 * nu * tau;
    return amplitude * s / std::sqrt(v) * std::exp(-x * x / (2.0 * v));
}

/// inf_y [ g(y) + |x - y|^2 / (2 tau) ] by exhaustive search over y in
/// [y_min, y_max] with n_y samples followed by golden-section polishing.
inline double hopf_lax(const std::function<double(double)>& g, double tau, double x, double y_min, double y_max,
                       std::size_t n_y = 20001) {
    if (tau <= 0.0) return g(x);
    auto f = [&](double y) { return g(y) + (x - y) * (x - y) / (2.0 * tau); };
    const double h = (y_max - y_min) / static_cast<double>(n_y - 1);
    double best = std::numeric_limits<double>::infinity();
    double y_best = x;
    for (std::size_t k = 0; k < n_y; ++k) {
        const double y = y_min + h * static_cast<double>(k);
        const double v = f(y);
        if (v < best) {
            best = v;
            y_best = y;
        }
    }
    double lo = y_best - h, hi = y_best + h;
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 60; ++it) {
        const double c = hi - r * (hi - lo), d = lo + r * (hi - lo);
        if (f(c) < f(d))
            hi = d;
        else
            lo = c;
    }
    return std::min(best, f(0.5 * (lo + hi)));
}

/// Value of the LQ problem with H = p^2/2, constant diffusion a and G = x^2/2:
/// u(t, x) = x^2 / (2 (1 + tau)) + a log(1 + tau), tau = T - t.
inline double riccati_lq(double tau, double x, double a = 0.0) {
    return x * x / (2.0 * (1.0 + tau)) + a * std::log1p(tau);
}

/// d_2 between N(m1, s1^2) and N(m2, s2^2).
inline double gaussian_w2(double m1, double s1, double m2, double s2) {
    return std::sqrt((m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2));
}

inline double gaussian_density(double mean, double s, double x) {
    const double z = (x - mean) / s;
    return std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * std::numbers::pi));
}

/// Sup of the density at time t of X_t = X_0 e^{-k t}, X_0 ~ N(0, s^2): the
/// flow of velocity -k x, i.e. drift b = k x in d_t m = div(m b).
inline double linear_flow_gaussian_peak(double s, double k, double t) {
    return 1.0 / (s * std::exp(-k * t) * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace mfgcn::oracle
