#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "parastrip/core.hpp"
#include "parastrip/grid.hpp"

namespace parastrip {

// ---------------------------------------------------------------------------
// Holomorphic smoothers of the positive and negative part

struct SmootherParams {
    double epsilon = 0.01;

    void validate() const {
        if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("smoother epsilon must lie in (0, 1)");
    }
};

/// True iff z avoids the cuts {+-iy : y >= eps}.
inline bool in_branch_domain(double eps, cplx z) {
    return !(z.real() == 0.0 && std::abs(z.imag()) >= eps);
}

namespace detail {

inline void check_smoother_point(double eps, cplx z) {
    if (!(eps > 0.0)) throw ConfigError("smoother epsilon must be positive");
    bool near_tip = std::abs(z - I * eps) < 1e-9 * eps || std::abs(z + I * eps) < 1e-9 * eps;
    if (!in_branch_domain(eps, z) || near_tip) {
        std::ostringstream msg;
        msg << "smoother evaluated at z = " << z << " on or next to the branch cut +-i[" << eps << ", inf)";
        throw DomainError(msg.str());
    }
}

/// (i / 2pi) log((1 - iz/eps) / (1 + iz/eps)), principal branch. Equals arctan(z/eps)/pi on R.
inline cplx smoother_log_term(double eps, cplx z) {
    cplx w = z / eps;
    return I / (2.0 * pi) * std::log((1.0 - I * w) / (1.0 + I * w));
}

}  // namespace detail

inline cplx f_plus(double eps, cplx z) {
    detail::check_smoother_point(eps, z);
    return z * (0.5 + detail::smoother_log_term(eps, z));
}

inline cplx f_minus(double eps, cplx z) {
    detail::check_smoother_point(eps, z);
    return z * (0.5 - detail::smoother_log_term(eps, z));
}

/// d/dz f_plus; the derivative of f_minus is 1 - f_plus'.
inline cplx f_plus_derivative(double eps, cplx z) {
    detail::check_smoother_point(eps, z);
    cplx w = z / eps;
    return 0.5 + detail::smoother_log_term(eps, z) + w / (pi * (1.0 + w * w));
}

inline cplx f_minus_derivative(double eps, cplx z) { return 1.0 - f_plus_derivative(eps, z); }

/// max |f_plus + f_minus - z| over the samples.
inline double smoother_identity_check(double eps, std::span<const cplx> samples) {
    double worst = 0.0;
    for (auto z : samples) worst = std::max(worst, std::abs(f_plus(eps, z) + f_minus(eps, z) - z));
    return worst;
}

// ---------------------------------------------------------------------------
// Reactions on m-jets

/// Where a reaction is evaluated: spatial point (shift included), time, flat grid index.
struct PointContext {
    std::span<const cplx> z;
    cplx t{0.0};
    std::size_t index = 0;
};

/// f(z, t; X) with X the m-jet. Jet slot b (an ordered tuple of axes of length <= m,
/// see `jet_indices`) holds d^beta u for every component: X[b * M + k].
struct ReactionSpec {
    int dim = 1;
    int order_half = 1;
    int components = 1;
    /// Highest derivative order f actually reads; higher slots are left zero.
    int max_jet_order = 0;
    std::function<void(const PointContext&, std::span<const cplx> jet, std::span<cplx> out)> eval;
    /// Optional df_j / dX_s, M x jet_size row-major.
    std::function<void(const PointContext&, std::span<const cplx> jet, std::span<cplx> jac)> jacobian;
    /// Optional admissibility test of a jet value (e.g. branch cuts).
    std::function<bool(std::span<const cplx> jet)> in_domain;
    bool identically_zero = false;
    bool time_dependent = false;
    /// Declared sup of |df/dX| on bounded jet sets, when known.
    double lipschitz_bound = -1.0;

    /// Ordered tuples (i1..ik) with k <= m, mapped to multi-indices; sum_k N^k entries.
    std::vector<MultiIndex> jet_indices() const {
        std::vector<MultiIndex> out;
        for (int k = 0; k <= order_half; ++k) {
            int count = 1;
            for (int i = 0; i < k; ++i) count *= dim;
            for (int code = 0; code < count; ++code) {
                MultiIndex mi{0, 0};
                int c = code;
                for (int i = 0; i < k; ++i) {
                    mi[c % dim] += 1;
                    c /= dim;
                }
                out.push_back(mi);
            }
        }
        return out;
    }

    int jet_slots() const { return int(jet_indices().size()); }
    int jet_size() const { return jet_slots() * components; }

    void validate() const {
        if (dim != 1 && dim != 2) throw ConfigError("reaction dim must be 1 or 2");
        if (order_half < 1) throw ConfigError("reaction order m must be >= 1");
        if (components < 1) throw ConfigError("reaction needs M >= 1");
        if (max_jet_order < 0 || max_jet_order > order_half)
            throw ConfigError("reaction max_jet_order must lie in [0, m]");
        if (!identically_zero && !eval) throw ConfigError("reaction without evaluator");
    }
};

inline ReactionSpec zero_reaction(int dim, int m = 1, int components = 1) {
    ReactionSpec r;
    r.dim = dim;
    r.order_half = m;
    r.components = components;
    r.identically_zero = true;
    r.lipschitz_bound = 0.0;
    r.eval = [](const PointContext&, std::span<const cplx>, std::span<cplx> out) {
        std::fill(out.begin(), out.end(), cplx(0.0));
    };
    r.jacobian = [](const PointContext&, std::span<const cplx>, std::span<cplx> jac) {
        std::fill(jac.begin(), jac.end(), cplx(0.0));
    };
    return r;
}

/// Componentwise f_k = g(u_k) of the 0-jet, with derivative dg.
inline ReactionSpec pointwise_reaction(int dim, std::function<cplx(cplx)> g, std::function<cplx(cplx)> dg,
                                       int m = 1, int components = 1) {
    ReactionSpec r;
    r.dim = dim;
    r.order_half = m;
    r.components = components;
    r.eval = [g](const PointContext&, std::span<const cplx> jet, std::span<cplx> out) {
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = g(jet[k]);
    };
    if (dg) {
        r.jacobian = [dg, components](const PointContext&, std::span<const cplx> jet, std::span<cplx> jac) {
            std::fill(jac.begin(), jac.end(), cplx(0.0));
            std::size_t cols = jac.size() / components;
            for (int k = 0; k < components; ++k) jac[k * cols + k] = dg(jet[k]);
        };
    }
    return r;
}

/// f = c u.
inline ReactionSpec linear_reaction(int dim, cplx c, int m = 1, int components = 1) {
    auto r = pointwise_reaction(
        dim, [c](cplx u) { return c * u; }, [c](cplx) { return c; }, m, components);
    r.lipschitz_bound = std::abs(c);
    return r;
}

/// f = X_0, the identity on the 0-jet.
inline ReactionSpec identity_reaction(int dim, int m = 1, int components = 1) {
    return linear_reaction(dim, 1.0, m, components);
}

/// f = c u^2 (holomorphic).
inline ReactionSpec quadratic_reaction(int dim, cplx c, int m = 1) {
    return pointwise_reaction(
        dim, [c](cplx u) { return c * u * u; }, [c](cplx u) { return 2.0 * c * u; }, m);
}

/// f = c |u|^2; not holomorphic, agrees with c u^2 on real values.
inline ReactionSpec modulus_squared_reaction(int dim, cplx c, int m = 1) {
    auto r = pointwise_reaction(
        dim, [c](cplx u) { return c * std::norm(u); }, [c](cplx u) { return 2.0 * c * u; }, m);
    return r;
}

/// Jacobian of f at one jet: the supplied one, otherwise the four-point complex-plane
/// stencil f'(x) ~ sum_k i^{-k} f(x + h i^k) / (4h), exact up to O(h^4) for holomorphic f.
inline std::vector<cplx> reaction_jacobian(const ReactionSpec& spec, const PointContext& ctx,
                                           std::span<const cplx> jet) {
    const int M = spec.components;
    const std::size_t cols = jet.size();
    std::vector<cplx> jac(M * cols, 0.0);
    if (spec.identically_zero) return jac;
    if (spec.jacobian) {
        spec.jacobian(ctx, jet, jac);
        return jac;
    }
    static const cplx dirs[4] = {1.0, I, -1.0, -I};
    std::vector<cplx> val(M);
    std::vector<cplx> x(jet.begin(), jet.end());
    for (std::size_t s = 0; s < cols; ++s) {
        double h = 1e-4 * std::max(1.0, std::abs(jet[s]));
        for (const cplx& d : dirs) {
            x[s] = jet[s] + h * d;
            spec.eval(ctx, x, val);
            for (int j = 0; j < M; ++j) jac[j * cols + s] += val[j] / (4.0 * h * d);
        }
        x[s] = jet[s];
    }
    return jac;
}

/// Plain partial derivatives d^beta u of a field for every jet slot up to `max_order`;
/// higher slots are zero fields.
inline std::vector<ComplexField> compute_jets(const ComplexField& field, const ReactionSpec& spec) {
    std::vector<ComplexField> jets;
    std::map<MultiIndex, ComplexField> cache;
    for (const auto& beta : spec.jet_indices()) {
        if (order(beta) > spec.max_jet_order) {
            jets.emplace_back(field.grid(), field.components());
            continue;
        }
        auto it = cache.find(beta);
        if (it == cache.end()) it = cache.emplace(beta, partial_derivative(field, beta)).first;
        jets.push_back(it->second);
    }
    return jets;
}

/// F^{(z0)}(t, v)(x) = f(x + z0, t; jets(x)).
inline ComplexField nemytskii(const ReactionSpec& spec, const std::vector<ComplexField>& jets,
                              std::span<const cplx> shift, cplx t) {
    if (jets.empty()) throw ConfigError("nemytskii needs the jet fields");
    const Grid& g = jets.front().grid();
    const int M = spec.components;
    const int slots = spec.jet_slots();
    if (int(jets.size()) != slots) throw ConfigError("nemytskii: jet list does not cover all |beta| <= m");
    ComplexField out(g, M);
    if (spec.identically_zero) return out;
    std::vector<cplx> jet(std::size_t(slots) * M), value(M);
    std::array<cplx, 2> z{};
    for (std::size_t f = 0; f < g.size(); ++f) {
        auto p = g.point(f);
        for (int ax = 0; ax < g.dim(); ++ax)
            z[ax] = p[ax] + (ax < int(shift.size()) ? shift[ax] : cplx(0.0));
        for (int b = 0; b < slots; ++b)
            for (int k = 0; k < M; ++k) jet[b * M + k] = jets[b](k, f);
        if (spec.in_domain && !spec.in_domain(jet)) {
            std::ostringstream msg;
            msg << "reaction argument outside its holomorphy domain at grid point " << f << " (x = " << z[0];
            if (g.dim() == 2) msg << ", " << z[1];
            msg << "), t = " << t << ", u = " << jet[0];
            throw DomainError(msg.str());
        }
        PointContext ctx{std::span<const cplx>(z.data(), g.dim()), t, f};
        spec.eval(ctx, jet, value);
        for (int k = 0; k < M; ++k) out(k, f) = value[k];
    }
    return out;
}

inline ComplexField nemytskii(const ReactionSpec& spec, const ComplexField& field, std::span<const cplx> shift,
                              cplx t) {
    return nemytskii(spec, compute_jets(field, spec), shift, t);
}

/// Box of jet values: each entry ranges over [lower, upper] in real and imaginary parts.
/// Jet coordinates past the end of the box are held at 0.
struct JetBox {
    std::vector<cplx> lower;
    std::vector<cplx> upper;
};

/// Sampled sup of |df_j / dX_s| over the box: every corner (when there are few) plus
/// `samples` uniform draws.
inline double jet_lipschitz_estimate(const ReactionSpec& spec, const JetBox& box, int samples,
                                     std::uint64_t seed = 0) {
    const std::size_t n = box.lower.size();
    if (box.upper.size() != n || int(n) > spec.jet_size() || n == 0)
        throw ConfigError("jet box needs matching bounds for at most jet_size coordinates");
    if (spec.identically_zero) return 0.0;
    std::array<cplx, 2> z{};
    PointContext ctx{std::span<const cplx>(z.data(), spec.dim), 0.0, 0};
    double worst = 0.0;
    auto visit = [&](const std::vector<cplx>& jet) {
        for (auto v : reaction_jacobian(spec, ctx, jet)) worst = std::max(worst, std::abs(v));
    };
    std::vector<cplx> jet(spec.jet_size(), 0.0);
    if (n <= 8) {
        const std::size_t corners = std::size_t(1) << (2 * n);
        for (std::size_t code = 0; code < corners; ++code) {
            for (std::size_t s = 0; s < n; ++s) {
                double re = (code >> (2 * s)) & 1 ? box.upper[s].real() : box.lower[s].real();
                double im = (code >> (2 * s + 1)) & 1 ? box.upper[s].imag() : box.lower[s].imag();
                jet[s] = cplx(re, im);
            }
            visit(jet);
        }
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < samples; ++i) {
        for (std::size_t s = 0; s < n; ++s) {
            double re = box.lower[s].real() + unit(rng) * (box.upper[s].real() - box.lower[s].real());
            double im = box.lower[s].imag() + unit(rng) * (box.upper[s].imag() - box.lower[s].imag());
            jet[s] = cplx(re, im);
        }
        visit(jet);
    }
    return worst;
}

}  // namespace parastrip
