#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "parastrip/core.hpp"
#include "parastrip/grid.hpp"

namespace parastrip {

/// Exponent p, order m and smoothness s = 2m(1 - 1/p) of the Besov scale B^{s;p,p},
/// plus the number J of Littlewood-Paley blocks used by the discrete proxy.
struct NormParams {
    double p = 4.0;
    int m = 1;
    double s = 1.5;
    int dyadic_blocks = 3;

    /// s derived from p and m; J left for the caller (or `auto_blocks`).
    static NormParams standard(double p, int m, int blocks) {
        NormParams np;
        np.p = p;
        np.m = m;
        np.s = 2.0 * m * (1.0 - 1.0 / p);
        np.dyadic_blocks = blocks;
        return np;
    }

    /// Largest J with 2^{J+1} <= Nyquist, at least 3.
    static int auto_blocks(const Grid& g) {
        int j = 3;
        while (std::pow(2.0, j + 2) <= g.nyquist()) ++j;
        return j;
    }

    static NormParams for_grid(const Grid& g, double p = 4.0, int m = 1) {
        return standard(p, m, auto_blocks(g));
    }

    void validate(const Grid& g) const {
        if (!(p > 1.0)) throw ConfigError("norm p must exceed 1");
        if (m < 1) throw ConfigError("norm order m must be >= 1");
        if (!(p > 2.0 + double(g.dim()) / m))
            throw ConfigError("norm p must satisfy p > 2 + N/m");
        if (!(s > 0.0 && s < 2.0 * m)) throw ConfigError("norm smoothness s must lie in (0, 2m)");
        if (dyadic_blocks < 3) throw ConfigError("norm needs at least 3 dyadic blocks");
        if (std::pow(2.0, dyadic_blocks + 1) > g.nyquist())
            throw ConfigError("dyadic_blocks too large: 2^(J+1) exceeds the grid Nyquist frequency " +
                              std::to_string(g.nyquist()));
    }
};

inline double lp_norm(const ComplexField& field, double p) {
    if (!(p >= 1.0)) throw ConfigError("lp_norm needs p >= 1");
    double acc = 0.0;
    for (auto v : field.values()) acc += std::pow(std::abs(v), p);
    return std::pow(acc * field.grid().cell_volume(), 1.0 / p);
}

inline double l2_norm(const ComplexField& field) { return lp_norm(field, 2.0); }

/// ||(1 + |xi|^2)^{s/2} u||_2 evaluated through Parseval.
inline double sobolev_hs_norm(const ComplexField& field, double s) {
    if (!(s >= 0.0)) throw ConfigError("sobolev_hs_norm needs s >= 0");
    const Grid& g = field.grid();
    double acc = 0.0;
    std::vector<cplx> spec;
    for (int c = 0; c < field.components(); ++c) {
        auto comp = field.component(c);
        spec.assign(comp.begin(), comp.end());
        to_fourier(g, spec);
        for (std::size_t f = 0; f < spec.size(); ++f) {
            auto [j0, j1] = g.unflatten(f);
            double k2 = std::pow(g.wavenumber(j0), 2);
            if (g.dim() == 2) k2 += std::pow(g.wavenumber(j1), 2);
            acc += std::pow(1.0 + k2, s) * std::norm(spec[f]);
        }
    }
    return std::sqrt(acc * g.cell_volume() / double(g.size()));
}

namespace detail {

inline double smooth_step_kernel(double x) { return x > 0.0 ? std::exp(-1.0 / x) : 0.0; }

/// C-infinity radial cutoff: 1 on [0, 1], 0 on [2, inf).
inline double lp_bump(double r) {
    if (r <= 1.0) return 1.0;
    if (r >= 2.0) return 0.0;
    double a = smooth_step_kernel(2.0 - r);
    double b = smooth_step_kernel(r - 1.0);
    return a / (a + b);
}

/// Weight of Littlewood-Paley block j at radial frequency r. Block 0 is the
/// low-pass part; the last block J carries the whole tail above 2^{J-1}.
inline double lp_weight(int j, int last, double r) {
    if (j == 0) return lp_bump(r);
    if (j == last) return 1.0 - lp_bump(r / std::pow(2.0, j - 1));
    return lp_bump(r / std::pow(2.0, j)) - lp_bump(r / std::pow(2.0, j - 1));
}

}  // namespace detail

/// Littlewood-Paley block Delta_j u of every component.
inline ComplexField lp_block(const ComplexField& field, int j, int last) {
    const Grid& g = field.grid();
    ComplexField out(field);
    for (int c = 0; c < field.components(); ++c) {
        auto comp = out.component(c);
        to_fourier(g, comp);
        for (std::size_t f = 0; f < comp.size(); ++f) {
            auto [j0, j1] = g.unflatten(f);
            double k2 = std::pow(g.wavenumber(j0), 2);
            if (g.dim() == 2) k2 += std::pow(g.wavenumber(j1), 2);
            comp[f] *= detail::lp_weight(j, last, std::sqrt(k2));
        }
        to_physical(g, comp);
    }
    return out;
}

/// Discrete B^{s;p,p} proxy: (||S_0 u||_p^p + sum_j 2^{jsp} ||Delta_j u||_p^p)^{1/p}.
/// `standing` enforces p > 2 + N/m; pass false to evaluate the proxy at other exponents.
inline double besov_norm(const ComplexField& field, const NormParams& params, bool standing = true) {
    if (standing) {
        params.validate(field.grid());
    } else if (params.dyadic_blocks < 1 || std::pow(2.0, params.dyadic_blocks + 1) > field.grid().nyquist()) {
        throw ConfigError("dyadic_blocks too large for the grid");
    }
    const Grid& g = field.grid();
    const int last = params.dyadic_blocks;
    const double p = params.p;

    std::vector<std::vector<cplx>> spectra(field.components());
    for (int c = 0; c < field.components(); ++c) {
        auto comp = field.component(c);
        spectra[c].assign(comp.begin(), comp.end());
        to_fourier(g, spectra[c]);
    }
    std::vector<double> radius(g.size());
    for (std::size_t f = 0; f < g.size(); ++f) {
        auto [j0, j1] = g.unflatten(f);
        double k2 = std::pow(g.wavenumber(j0), 2);
        if (g.dim() == 2) k2 += std::pow(g.wavenumber(j1), 2);
        radius[f] = std::sqrt(k2);
    }

    double total = 0.0;
    std::vector<cplx> block(g.size());
    for (int j = 0; j <= last; ++j) {
        double acc = 0.0;
        for (int c = 0; c < field.components(); ++c) {
            bool any = false;
            for (std::size_t f = 0; f < g.size(); ++f) {
                double w = detail::lp_weight(j, last, radius[f]);
                block[f] = spectra[c][f] * w;
                any = any || (w != 0.0 && spectra[c][f] != cplx(0.0));
            }
            if (!any) continue;
            to_physical(g, block);
            for (auto v : block) acc += std::pow(std::abs(v), p);
        }
        total += std::pow(2.0, j * params.s * p) * acc * g.cell_volume();
    }
    return std::pow(total, 1.0 / p);
}

/// W^{k,p} norm (sum_{|alpha| <= k} ||D^alpha u||_p^p)^{1/p}; k = 2m gives the E_1 norm.
inline double sobolev_wp_norm(const ComplexField& field, int k, double p) {
    double acc = 0.0;
    for (const auto& alpha : multi_indices_up_to(field.grid().dim(), k))
        acc += std::pow(lp_norm(spectral_derivative(field, alpha), p), p);
    return std::pow(acc, 1.0 / p);
}

/// Discrete strip norm: the maximum Besov norm over shifted traces u(. + iy).
inline double strip_norm(const std::vector<std::pair<std::vector<double>, ComplexField>>& samples,
                         const NormParams& params) {
    if (samples.empty()) throw ConfigError("strip_norm needs at least one shift sample");
    double best = 0.0;
    for (const auto& [y, field] : samples) best = std::max(best, besov_norm(field, params));
    return best;
}

}  // namespace parastrip
