#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "parastrip/grid.hpp"
#include "parastrip/solver.hpp"

namespace parastrip {

/// Random band-limited fields, band 2..11 cycling; Gaussian Fourier coefficients.
inline std::vector<ComplexField> bandlimited_ensemble(const Grid& g, int count, std::uint64_t seed,
                                                      int components = 1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<ComplexField> out;
    auto sgn = [&](int j) { return j <= g.n() / 2 ? j : j - g.n(); };
    for (int i = 0; i < count; ++i) {
        int band = std::min(2 + i % 10, g.n() / 2 - 1);
        ComplexField u(g, components);
        for (int c = 0; c < components; ++c) {
            auto v = u.component(c);
            for (std::size_t f = 0; f < g.size(); ++f) {
                auto [j0, j1] = g.unflatten(f);
                bool keep = std::abs(sgn(j0)) <= band && (g.dim() == 1 || std::abs(sgn(j1)) <= band);
                v[f] = keep ? cplx(nd(rng), nd(rng)) : cplx(0.0);
            }
            to_physical(g, v);
        }
        out.push_back(std::move(u));
    }
    return out;
}

/// Max-regularity ensemble: low-mode u0 and separable sources g(x) cos(w t), w ~ 1 + 0.3 N(0, 1).
inline std::vector<MaxRegSample> max_reg_ensemble(const Grid& g, int count, std::uint64_t seed, int modes = 5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<MaxRegSample> out;
    const double L = g.half_length();
    for (int i = 0; i < count; ++i) {
        std::vector<cplx> a(modes * modes), b(modes * modes);
        for (auto& v : a) v = cplx(nd(rng), nd(rng)) * 0.3;
        for (auto& v : b) v = cplx(nd(rng), nd(rng));
        auto series = [&](const std::vector<cplx>& c) {
            return sample(g, 1, [&](std::span<const double> x, std::span<cplx> o) {
                o[0] = 0.0;
                for (int q = 0; q < modes; ++q) {
                    cplx e0 = std::exp(I * (pi / L) * double(q - modes / 2) * x[0]);
                    if (g.dim() == 1) {
                        o[0] += c[q] * e0;
                        continue;
                    }
                    for (int r = 0; r < modes; ++r)
                        o[0] += c[q * modes + r] * e0 * std::exp(I * (pi / L) * double(r - modes / 2) * x[1]);
                }
            });
        };
        MaxRegSample s;
        s.u0 = series(a);
        s.g_space = series(b);
        double w = 1.0 + 0.3 * nd(rng);
        s.g_time = [w](double t) { return cplx(std::cos(w * t)); };
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace parastrip
