#pragma once

// Closed-form reference values used by the tests. Everything here is computed
// independently of the library's solvers.

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

namespace oracle {

using cplx = std::complex<double>;
inline constexpr double pi = 3.14159265358979323846;

/// Heat equation u_t = u_xx with u(x, 0) = exp(-x^2 / 2), at complex x and complex t.
inline cplx heat_gaussian(cplx x, cplx t) {
    cplx a = 1.0 + 2.0 * t;
    return std::exp(-x * x / (2.0 * a)) / std::sqrt(a);
}

/// 2-D version: product of two 1-D kernels.
inline cplx heat_gaussian_2d(cplx x, cplx y, cplx t) { return heat_gaussian(x, t) * heat_gaussian(y, t); }

/// d/dx and d^2/dx^2 of the 1-D heat Gaussian.
inline cplx heat_gaussian_dx(cplx x, cplx t) { return -x / (1.0 + 2.0 * t) * heat_gaussian(x, t); }
inline cplx heat_gaussian_dxx(cplx x, cplx t) {
    cplx a = 1.0 + 2.0 * t;
    return (x * x / (a * a) - 1.0 / a) * heat_gaussian(x, t);
}

/// Standard normal CDF.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Black-Scholes call with dividend-like carry: F = S exp((q - gamma) tau), discount exp(-r tau).
inline double black_scholes_call(double S, double K, double r, double q, double gamma, double sigma, double tau) {
    double F = S * std::exp((q - gamma) * tau);
    double sd = sigma * std::sqrt(tau);
    double d1 = (std::log(F / K) + 0.5 * sd * sd) / sd;
    double d2 = d1 - sd;
    return std::exp(-r * tau) * (F * norm_cdf(d1) - K * norm_cdf(d2));
}

/// Adaptive Simpson on [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-12,
                        int depth = 40) {
    std::function<double(double, double, double, double, double, double, int)> rec =
        [&](double lo, double hi, double flo, double fmid, double fhi, double whole, int d) {
            double mid = 0.5 * (lo + hi);
            double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
            double flm = f(lm), frm = f(rm);
            double left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
            double right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
            if (d <= 0 || std::abs(left + right - whole) <= 15.0 * tol) return left + right + (left + right - whole) / 15.0;
            return rec(lo, mid, flo, flm, fmid, left, d - 1) + rec(mid, hi, fmid, frm, fhi, right, d - 1);
        };
    double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    return rec(a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), depth);
}

/// Max-regularity ratio for u' + k^2 u = e^{ikx} on [0, T], u(0) = 0:
/// [int_0^T e^{-p k^2 t} + (1 - e^{-k^2 t})^p dt] / T.
inline double single_mode_max_reg(double k, double p, double T) {
    double k2 = k * k;
    return integrate([&](double t) { return std::exp(-p * k2 * t) + std::pow(1.0 - std::exp(-k2 * t), p); }, 0.0,
                     T, 1e-14) /
           T;
}

/// sup over v in [-1, 1] of d/dv [v (1/2 + arctan(v / eps) / pi)] by dense scan.
inline double smoother_slope_sup(double eps) {
    double best = 0.0;
    for (int i = 0; i <= 200000; ++i) {
        double v = -1.0 + 2.0 * i / 200000.0;
        double w = v / eps;
        double d = 0.5 + std::atan(w) / pi + w / (pi * (1.0 + w * w));
        best = std::max(best, std::abs(d));
    }
    return best;
}

}  // namespace oracle
