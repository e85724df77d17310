#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "parastrip/core.hpp"
#include "parastrip/norms.hpp"
#include "parastrip/parallel.hpp"
#include "parastrip/solver.hpp"

namespace parastrip {

/// Solutions u^{(iy)} of the problem shifted by z0 = i y, for y on a line along `axis`.
struct ShiftFamily {
    std::vector<std::vector<double>> y_values;
    std::vector<SolveResult> results;
    StripSpec strip;
    int axis = 0;
    double t0 = 0.0;
    double T = 0.0;

    std::size_t size() const { return y_values.size(); }
    double y(std::size_t i) const { return y_values[i][axis]; }

    std::size_t index_of(double y0, double tol = 1e-12) const {
        for (std::size_t i = 0; i < size(); ++i)
            if (std::abs(y(i) - y0) <= tol) return i;
        return size();
    }

    /// Rejects families that are unsorted, asymmetric about 0, or whose members disagree on time stamps.
    void validate() const {
        if (y_values.empty() || y_values.size() != results.size())
            throw ConfigError("shift family needs one result per y value");
        for (std::size_t i = 1; i < size(); ++i)
            if (!(y(i) > y(i - 1))) throw ConfigError("shift family y values must be strictly increasing");
        for (std::size_t i = 0; i < size(); ++i)
            if (std::abs(y(i) + y(size() - 1 - i)) > 1e-12)
                throw ConfigError("shift family y grid must be symmetric about 0");
        if (index_of(0.0) == size()) throw ConfigError("shift family y grid must contain 0");
        for (const auto& r : results) {
            if (r.times.size() != results.front().times.size())
                throw ConfigError("shift family members have different time stamps");
            for (std::size_t j = 0; j < r.times.size(); ++j)
                if (std::abs(r.times[j] - results.front().times[j]) > 1e-12)
                    throw ConfigError("shift family members have different time stamps");
        }
    }
};

inline std::vector<double> axis_vector(int dim, int axis, double value) {
    std::vector<double> v(dim, 0.0);
    v[axis] = value;
    return v;
}

/// Assembles a family from already computed members (used for controls built outside the solver).
inline ShiftFamily make_family(std::vector<double> ys, std::vector<SolveResult> results, int axis = 0) {
    ShiftFamily fam;
    const int dim = results.empty() ? 1 : results.front().grid.dim();
    double rmax = 0.0;
    for (double y : ys) {
        fam.y_values.push_back(axis_vector(dim, axis, y));
        rmax = std::max(rmax, std::abs(y));
    }
    fam.results = std::move(results);
    fam.axis = axis;
    fam.strip.half_width = std::nextafter(rmax, std::numeric_limits<double>::infinity());
    if (!fam.results.empty() && !fam.results.front().parameters.empty()) {
        fam.t0 = fam.results.front().parameters.front();
        fam.T = fam.results.front().parameters.back();
    }
    fam.validate();
    return fam;
}

/// One solve_real per y in `y_grid`, run in parallel. A failing member is reported with its shift.
inline ShiftFamily solve_shift_family(const CauchyProblem& pb, std::vector<double> y_grid, double t0, double T,
                                      const SolverConfig& cfg, int jobs = 1, int axis = 0) {
    if (axis < 0 || axis >= pb.grid.dim()) throw ConfigError("shift family axis out of range");
    std::sort(y_grid.begin(), y_grid.end());
    auto results = parallel_map(y_grid.size(), jobs, [&](std::size_t i) {
        std::vector<cplx> shift(pb.grid.dim(), 0.0);
        shift[axis] = cplx(0.0, y_grid[i]);
        auto name = [&](const char* what) {
            std::ostringstream msg;
            msg << "shift family member y = " << y_grid[i] << ": " << what;
            return msg.str();
        };
        try {
            return solve_real(pb, t0, T, cfg, shift);
        } catch (const DivergenceError& e) {
            throw DivergenceError(name(e.what()), e.last_ratio());
        } catch (const DomainError& e) {
            throw DomainError(name(e.what()));
        } catch (const InstabilityError& e) {
            throw InstabilityError(name(e.what()));
        }
    });
    auto fam = make_family(y_grid, std::move(results), axis);
    fam.t0 = t0;
    fam.T = T;
    return fam;
}

/// ||(1/2)(d_x + i d_y) u||_2 / ||u||_2 at member `center`, y-derivative by central differences
/// over members center +- stride.
inline double cr_residual_at(const ShiftFamily& fam, std::size_t center, std::size_t stride, double t) {
    if (stride == 0 || center < stride || center + stride >= fam.size())
        throw ConfigError("CR residual needs members on both sides of the centre");
    const double dy_lo = fam.y(center) - fam.y(center - stride);
    const double dy_hi = fam.y(center + stride) - fam.y(center);
    if (std::abs(dy_lo - dy_hi) > 1e-12 * std::max(1.0, dy_hi))
        throw ConfigError("CR residual needs a uniform y spacing around the centre");
    const auto& mid = fam.results[center];
    const std::size_t j = mid.nearest(t);
    const ComplexField& u = mid.snapshots[j];
    MultiIndex ex{0, 0};
    ex[fam.axis] = 1;
    ComplexField dx = partial_derivative(u, ex);
    ComplexField dy = fam.results[center + stride].snapshots[j] - fam.results[center - stride].snapshots[j];
    dy *= 1.0 / (2.0 * dy_hi);
    ComplexField cr = dx + I * dy;
    cr *= 0.5;
    double nu = l2_norm(u);
    if (nu == 0.0) return l2_norm(cr) == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return l2_norm(cr) / nu;
}

/// Largest CR residual over all members with neighbours at distance `stride`.
inline double cr_residual_space(const ShiftFamily& fam, double t, std::size_t stride = 1) {
    if (fam.size() < 3) throw ConfigError("CR residual needs at least 3 shifts");
    double worst = 0.0;
    bool any = false;
    for (std::size_t c = stride; c + stride < fam.size(); ++c) {
        worst = std::max(worst, cr_residual_at(fam, c, stride, t));
        any = true;
    }
    if (!any) throw ConfigError("CR residual stride too large for the family");
    return worst;
}

struct CrRefinement {
    std::vector<double> deltas;     // decreasing
    std::vector<double> residuals;
    std::vector<double> orders;     // log2 of successive residual ratios
    double observed_order = 0.0;    // smallest order over the halving pairs
    double floor = 0.0;             // smallest residual reached, small-delta triples included
};

/// CR residual at y = 0 for strides 4, 2, 1 of the family, then for tiny triples {-d, 0, d}
/// solved on the side to expose the floor set by the solver error.
inline CrRefinement cr_refinement_study(const CauchyProblem& pb, const ShiftFamily& fam, double t,
                                        const std::vector<double>& floor_deltas, const SolverConfig& cfg,
                                        int jobs = 1) {
    const std::size_t c = fam.index_of(0.0);
    CrRefinement out;
    for (std::size_t stride : {4u, 2u, 1u}) {
        if (c < stride || c + stride >= fam.size()) continue;
        out.deltas.push_back(fam.y(c + stride) - fam.y(c));
        out.residuals.push_back(cr_residual_at(fam, c, stride, t));
    }
    if (out.residuals.size() < 2) throw ConfigError("refinement study needs at least 5 shifts");
    out.observed_order = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < out.residuals.size(); ++k) {
        double ord = std::log(out.residuals[k - 1] / out.residuals[k]) / std::log(out.deltas[k - 1] / out.deltas[k]);
        out.orders.push_back(ord);
        out.observed_order = std::min(out.observed_order, ord);
    }
    out.floor = *std::min_element(out.residuals.begin(), out.residuals.end());
    for (double d : floor_deltas) {
        auto tiny = solve_shift_family(pb, {-d, 0.0, d}, fam.t0, fam.T, cfg, jobs, fam.axis);
        out.floor = std::min(out.floor, cr_residual_at(tiny, 1, 1, t));
    }
    return out;
}

/// sup over t_grid of |u^{(x0 + i y0)}(x, t) - u^{(i y0)}(x + x0, t)|; x0 must be a lattice vector.
inline double shift_consistency_check(const ShiftFamily& fam, const CauchyProblem& pb, const std::vector<double>& x0,
                                      double y0, const std::vector<double>& t_grid, const SolverConfig& cfg) {
    const Grid& g = pb.grid;
    if (int(x0.size()) != g.dim()) throw ConfigError("lattice shift must have one entry per axis");
    std::array<long, 2> k{};
    for (int ax = 0; ax < g.dim(); ++ax) {
        double q = x0[ax] / g.spacing();
        k[ax] = std::lround(q);
        if (std::abs(q - double(k[ax])) > 1e-9) {
            std::ostringstream msg;
            msg << "real shift " << x0[ax] << " is not a multiple of the grid spacing " << g.spacing();
            throw ConfigError(msg.str());
        }
    }
    std::size_t idx = fam.index_of(y0);
    SolveResult plain_storage;
    const SolveResult* plain = nullptr;
    if (idx < fam.size()) {
        plain = &fam.results[idx];
    } else {
        std::vector<cplx> s(g.dim(), 0.0);
        s[fam.axis] = cplx(0.0, y0);
        plain_storage = solve_real(pb, fam.t0, fam.T, cfg, s);
        plain = &plain_storage;
    }
    bool zero = std::all_of(k.begin(), k.begin() + g.dim(), [](long v) { return v == 0; });
    SolveResult moved_storage;
    const SolveResult* moved = plain;
    if (!zero) {
        std::vector<cplx> s(g.dim(), 0.0);
        for (int ax = 0; ax < g.dim(); ++ax) s[ax] = x0[ax];
        s[fam.axis] += cplx(0.0, y0);
        moved_storage = solve_real(pb, fam.t0, fam.T, cfg, s);
        moved = &moved_storage;
    }
    const int n = g.n();
    auto wrap = [n](long v) { return int(((v % n) + n) % n); };
    double worst = 0.0;
    for (double t : t_grid) {
        std::size_t j = plain->nearest(t);
        const auto& a = moved->snapshots[j];
        const auto& b = plain->snapshots[j];
        for (int c = 0; c < a.components(); ++c)
            for (std::size_t f = 0; f < g.size(); ++f) {
                auto [i0, i1] = g.unflatten(f);
                std::size_t rot = g.dim() == 1 ? std::size_t(wrap(i0 + k[0])) : g.flatten(wrap(i0 + k[0]), wrap(i1 + k[1]));
                worst = std::max(worst, std::abs(a(c, f) - b(c, rot)));
            }
    }
    return worst;
}

/// CR residual of mu -> omega_mu(rho) from four rays at mu_c +- d, mu_c +- i d.
inline double cr_residual_time(const CauchyProblem& pb, cplx mu_center, double d_mu, double rho,
                               const SolverConfig& cfg, int jobs = 1, std::span<const cplx> shift = {}) {
    if (!(d_mu > 0.0)) throw ConfigError("d_mu must be positive");
    const double radius = std::sin(pb.op.temporal().angle);
    const std::array<cplx, 4> mus{mu_center + d_mu, mu_center - d_mu, mu_center + I * d_mu, mu_center - I * d_mu};
    for (auto m : mus)
        if (!(std::abs(m - 1.0) < radius)) {
            std::ostringstream msg;
            msg << "time CR stencil point " << m << " leaves the disc |mu - 1| < " << radius;
            throw DomainError(msg.str());
        }
    if (rho == 0.0) return 0.0;
    std::vector<cplx> sh(shift.begin(), shift.end());
    auto ends = parallel_map(4, jobs, [&](std::size_t i) {
        return solve_complex_ray(pb, mus[i], rho, cfg, sh).final_state();
    });
    ComplexField dre = ends[0] - ends[1], dim = ends[2] - ends[3];
    ComplexField cr = dre + I * dim;
    cr *= 0.5 / (2.0 * d_mu);
    ComplexField mean = ends[0] + ends[1] + ends[2] + ends[3];
    mean *= 0.25;
    double nm = l2_norm(mean);
    return nm == 0.0 ? l2_norm(cr) : l2_norm(cr) / nm;
}

struct PathIndependence {
    double spread = 0.0;
    std::vector<double> t_primes;
    std::vector<ComplexField> endpoints;
};

/// Largest pairwise sup distance between the endpoints of the paths ending at sigma + i tau.
inline PathIndependence path_independence_check(const CauchyProblem& pb, double sigma, double tau,
                                                const std::vector<double>& t_primes, const SolverConfig& cfg,
                                                int jobs = 1, std::span<const cplx> shift = {}) {
    if (t_primes.size() < 2) throw ConfigError("path independence needs at least two T' values");
    std::vector<cplx> sh(shift.begin(), shift.end());
    PathIndependence out;
    out.t_primes = t_primes;
    out.endpoints = parallel_map(t_primes.size(), jobs, [&](std::size_t i) {
        return solve_along_path(pb, sigma, tau, t_primes[i], cfg, sh).final_state();
    });
    for (std::size_t a = 0; a < out.endpoints.size(); ++a)
        for (std::size_t b = a + 1; b < out.endpoints.size(); ++b)
            out.spread = std::max(out.spread, sup_distance(out.endpoints[a], out.endpoints[b]));
    return out;
}

struct HardyValue {
    double derivative_part = 0.0;  // int_0^sigma int |d_t u|^p
    double sobolev_part = 0.0;     // sum_{|alpha| <= 2m} int_0^sigma int |D^alpha u|^p
    double endpoint_besov = 0.0;   // ||u(end)||_B^p
    double value = 0.0;            // derivative_part + c0 sobolev_part
    double companion = 0.0;        // endpoint_besov + c0 sobolev_part
};

namespace detail {

/// Simpson over a nonuniform node set, split into runs of equal spacing.
inline double piecewise_simpson(const std::vector<double>& s, const std::vector<double>& v) {
    double total = 0.0;
    std::size_t a = 0;
    while (a + 1 < s.size()) {
        double h = s[a + 1] - s[a];
        std::size_t b = a + 1;
        while (b + 1 < s.size() && std::abs((s[b + 1] - s[b]) - h) <= 1e-9 * h) ++b;
        std::vector<double> run(v.begin() + a, v.begin() + b + 1);
        total += simpson(run, h);
        a = b;
    }
    return total;
}

}  // namespace detail

/// Discrete Hardy-type integrals along a stored trajectory (path parameter s is the integration variable).
inline HardyValue hardy_integral(const SolveResult& traj, int m, double p, double c0) {
    if (traj.snapshots.empty()) throw ConfigError("hardy_integral needs a trajectory");
    for (const auto& d : traj.derivatives)
        if (d.size() == 0) throw ConfigError("hardy_integral needs the stored time derivatives");
    std::vector<double> du, dx;
    for (std::size_t j = 0; j < traj.snapshots.size(); ++j) {
        du.push_back(std::pow(lp_norm(traj.derivatives[j], p), p));
        dx.push_back(std::pow(sobolev_wp_norm(traj.snapshots[j], 2 * m, p), p));
    }
    HardyValue out;
    out.derivative_part = detail::piecewise_simpson(traj.parameters, du);
    out.sobolev_part = detail::piecewise_simpson(traj.parameters, dx);
    const auto& last = traj.final_state();
    if (last.max_abs() > 0.0) {
        NormParams params = NormParams::for_grid(last.grid(), p, m);
        out.endpoint_besov = std::pow(besov_norm(last, params, false), p);
    }
    out.value = out.derivative_part + c0 * out.sobolev_part;
    out.companion = out.endpoint_besov + c0 * out.sobolev_part;
    return out;
}

struct StripSup {
    double value = 0.0;
    double y = 0.0;
    cplx t{0.0};
};

/// sup over members and stored times of the Besov norm of u(. + iy, t).
inline StripSup strip_sup_over_time(const ShiftFamily& fam, const NormParams& params) {
    if (fam.size() == 0) throw ConfigError("strip_sup_over_time needs a nonempty family");
    StripSup out;
    bool first = true;
    for (std::size_t i = 0; i < fam.size(); ++i)
        for (std::size_t j = 0; j < fam.results[i].snapshots.size(); ++j) {
            const auto& u = fam.results[i].snapshots[j];
            double v = u.max_abs() == 0.0 ? 0.0 : besov_norm(u, params);
            if (first || v > out.value) {
                out = {v, fam.y(i), fam.results[i].times[j]};
                first = false;
            }
        }
    return out;
}

}  // namespace parastrip
