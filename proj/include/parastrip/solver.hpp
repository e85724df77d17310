#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "parastrip/core.hpp"
#include "parastrip/grid.hpp"
#include "parastrip/norms.hpp"
#include "parastrip/operator.hpp"
#include "parastrip/parallel.hpp"
#include "parastrip/reaction.hpp"

namespace parastrip {

/// Source term g(t) on the grid shifted by z0; `out` arrives zeroed.
using SourceFn = std::function<void(cplx t, std::span<const cplx> shift, ComplexField& out)>;

/// du/dt + P(x, t, D) u = f(x, t; jet u) + g(t), u(0) = u0.
struct CauchyProblem {
    DivergenceOperator op;
    ReactionSpec reaction;
    InitialData initial;
    SourceFn source;
    Grid grid;

    void validate() const {
        reaction.validate();
        if (op.dim() != grid.dim() || reaction.dim != grid.dim() || initial.dim != grid.dim())
            throw ConfigError("operator, reaction, initial data and grid must share the dimension N");
        if (op.components() != reaction.components || initial.components != op.components())
            throw ConfigError("operator, reaction and initial data must share the component count M");
        if (reaction.order_half != op.order_half())
            throw ConfigError("reaction jet order must equal the operator half-order m");
        if (!initial.eval) throw ConfigError("initial data without evaluator");
    }
};

struct StepConstants {
    double c1 = 1.0;
    double C1 = 1.0;
    double c2 = 0.0;
    double C2 = 0.0;
    double C_delta = 1.0;
    double M_T = 1.0;
    double p = 2.0;
};

struct StepSizes {
    double delta = 0.0;
    double T1 = 0.0;
};

/// delta = 2^{-(3p-2)/p} (c1/C1) M_T^{-1/p}, clamped below 1;
/// T1 = (p / [2^p M_T (2^{p-1} C2^p delta^p + C_delta^p) + c2^p])^{1/p}.
inline StepSizes step_size_from_estimates(const StepConstants& k) {
    if (!(k.c1 > 0.0 && k.C1 > 0.0 && k.M_T > 0.0))
        throw ConfigError("step constants need c1 > 0, C1 > 0 and M_T > 0");
    if (!(k.p >= 1.0)) throw ConfigError("step constants need p >= 1");
    if (k.c2 < 0.0 || k.C2 < 0.0 || k.C_delta < 0.0) throw ConfigError("step constants must be nonnegative");
    const double p = k.p;
    StepSizes out;
    out.delta = std::pow(2.0, -(3.0 * p - 2.0) / p) * (k.c1 / k.C1) * std::pow(k.M_T, -1.0 / p);
    out.delta = std::min(out.delta, 1.0 - 1e-12);
    double denom = std::pow(2.0, p) * k.M_T *
                       (std::pow(2.0, p - 1.0) * std::pow(k.C2, p) * std::pow(out.delta, p) +
                        std::pow(k.C_delta, p)) +
                   std::pow(k.c2, p);
    if (!(denom > 0.0)) throw ConfigError("T1 formula has a nonpositive denominator");
    out.T1 = std::pow(p / denom, 1.0 / p);
    return out;
}

enum class Integrator { picard_voc, imex };

inline const char* to_string(Integrator i) { return i == Integrator::picard_voc ? "picard_voc" : "imex"; }

struct SolverConfig {
    double dt = 1e-3;
    double picard_tol = 1e-10;
    int picard_max_iter = 50;
    /// Exponent of the Besov norm used for the Picard stopping test.
    double p = 4.0;
    Integrator integrator = Integrator::picard_voc;
    /// Picard window length in steps; overridden by `step_constants` when set.
    int window_steps = 16;
    std::optional<StepConstants> step_constants;
    /// 2/3-rule on variable-coefficient products (see `apply`).
    bool dealias = false;
    double gmres_tol = 1e-12;
    int gmres_restart = 40;

    void validate() const {
        if (!(dt > 0.0)) throw ConfigError("solver.dt must be positive");
        if (!(picard_tol > 0.0)) throw ConfigError("solver.picard_tol must be positive");
        if (picard_max_iter < 1) throw ConfigError("solver.picard_max_iter must be >= 1");
        if (window_steps < 1) throw ConfigError("solver.window_steps must be >= 1");
        if (!(p > 1.0)) throw ConfigError("solver.p must exceed 1");
        if (!(gmres_tol > 0.0)) throw ConfigError("solver.gmres_tol must be positive");
    }
};

struct SolveDiagnostics {
    std::vector<int> picard_iterations;       // per accepted window
    std::vector<double> contraction_ratios;   // last observed ratio per accepted window
    std::vector<int> window_steps;
    std::vector<double> residuals;            // L^p strict-solution residual per interior node
    double final_residual = 0.0;
    int window_halvings = 0;
    int gmres_iterations = 0;
};

struct SolveResult {
    Grid grid;
    std::vector<cplx> shift;
    std::vector<double> parameters;       // real path parameter (rho or s)
    std::vector<cplx> times;              // complex time at each node
    std::vector<ComplexField> snapshots;
    std::vector<ComplexField> derivatives;  // du/dt (complex time derivative) at each node
    SolveDiagnostics diagnostics;

    const ComplexField& final_state() const { return snapshots.back(); }

    std::size_t nearest(cplx t) const {
        std::size_t best = 0;
        for (std::size_t j = 1; j < times.size(); ++j)
            if (std::abs(times[j] - t) < std::abs(times[best] - t)) best = j;
        return best;
    }
};

namespace detail {

struct Phi {
    cplx e, p1, p2;
};

/// e^z, phi1(z) = (e^z - 1)/z and phi2(z) = (e^z - 1 - z)/z^2, Taylor near 0.
inline Phi phi_functions(cplx z) {
    Phi out;
    out.e = std::exp(z);
    if (std::abs(z) < 0.5) {
        cplx term = 1.0, p1 = 0.0, p2 = 0.0;
        double fact1 = 1.0, fact2 = 2.0;
        for (int k = 0; k < 24; ++k) {
            p1 += term / fact1;
            p2 += term / fact2;
            term *= z;
            fact1 *= k + 2;
            fact2 *= k + 3;
        }
        out.p1 = p1;
        out.p2 = p2;
    } else {
        out.p1 = (out.e - 1.0) / z;
        out.p2 = (out.e - 1.0 - z) / (z * z);
    }
    return out;
}

/// Composite Simpson on uniform nodes; a trailing odd interval uses the trapezoid rule.
inline double simpson(const std::vector<double>& v, double h) {
    const std::size_t n = v.size();
    if (n < 2) return 0.0;
    std::size_t intervals = n - 1;
    std::size_t even = intervals - intervals % 2;
    double acc = 0.0;
    for (std::size_t i = 0; i + 2 <= even; i += 2) acc += h / 3.0 * (v[i] + 4.0 * v[i + 1] + v[i + 2]);
    if (even < intervals) acc += 0.5 * h * (v[n - 2] + v[n - 1]);
    return acc;
}

/// Restarted right-preconditioned GMRES on flat complex vectors. Returns iterations used.
template <class ApplyA, class ApplyMinv>
int gmres(ApplyA&& A, ApplyMinv&& Minv, const std::vector<cplx>& b, std::vector<cplx>& x, double tol,
          int restart, int max_restarts) {
    const std::size_t n = b.size();
    auto dot = [&](const std::vector<cplx>& u, const std::vector<cplx>& v) {
        cplx s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += std::conj(u[i]) * v[i];
        return s;
    };
    auto nrm = [&](const std::vector<cplx>& u) { return std::sqrt(std::real(dot(u, u))); };
    const double bnorm = std::max(nrm(b), 1e-300);
    int total = 0;
    for (int cycle = 0; cycle < max_restarts; ++cycle) {
        std::vector<cplx> r = A(x);
        for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
        double beta = nrm(r);
        if (beta <= tol * bnorm) return total;
        std::vector<std::vector<cplx>> V;
        V.reserve(restart + 1);
        for (auto& v : r) v /= beta;
        V.push_back(std::move(r));
        std::vector<std::vector<cplx>> H(restart + 1, std::vector<cplx>(restart, 0.0));
        std::vector<double> cs(restart);
        std::vector<cplx> sn(restart), gvec(restart + 1, 0.0);
        gvec[0] = beta;
        int k = 0;
        for (; k < restart; ++k) {
            ++total;
            std::vector<cplx> w = A(Minv(V[k]));
            for (int i = 0; i <= k; ++i) {
                H[i][k] = dot(V[i], w);
                for (std::size_t q = 0; q < n; ++q) w[q] -= H[i][k] * V[i][q];
            }
            double hn = nrm(w);
            H[k + 1][k] = hn;
            for (int i = 0; i < k; ++i) {
                cplx a = H[i][k], c = H[i + 1][k];
                H[i][k] = cs[i] * a + sn[i] * c;
                H[i + 1][k] = -std::conj(sn[i]) * a + cs[i] * c;
            }
            cplx h1 = H[k][k], h2 = H[k + 1][k];
            double d = std::sqrt(std::norm(h1) + std::norm(h2));
            if (std::abs(h1) == 0.0) {
                cs[k] = 0.0;
                sn[k] = 1.0;
                H[k][k] = h2;
            } else {
                double t = std::abs(h1);
                cs[k] = t / d;
                sn[k] = (h1 / t) * std::conj(h2) / d;
                H[k][k] = (h1 / t) * d;
            }
            H[k + 1][k] = 0.0;
            gvec[k + 1] = -std::conj(sn[k]) * gvec[k];
            gvec[k] = cs[k] * gvec[k];
            bool done = std::abs(gvec[k + 1]) <= tol * bnorm;
            if (!done && hn > 0.0) {
                for (auto& v : w) v /= hn;
                V.push_back(std::move(w));
            }
            if (done || hn == 0.0) {
                ++k;
                break;
            }
        }
        std::vector<cplx> y(k, 0.0);
        for (int i = k - 1; i >= 0; --i) {
            cplx s = gvec[i];
            for (int j = i + 1; j < k; ++j) s -= H[i][j] * y[j];
            y[i] = s / H[i][i];
        }
        std::vector<cplx> upd(n, 0.0);
        for (int i = 0; i < k; ++i)
            for (std::size_t q = 0; q < n; ++q) upd[q] += y[i] * V[i][q];
        upd = Minv(upd);
        for (std::size_t q = 0; q < n; ++q) x[q] += upd[q];
    }
    std::vector<cplx> r = A(x);
    double res = 0.0;
    for (std::size_t i = 0; i < n; ++i) res += std::norm(b[i] - r[i]);
    if (std::sqrt(res) > 1e3 * tol * bnorm) throw InstabilityError("GMRES did not converge in the implicit step");
    return total;
}

/// Evaluation context of one (problem, shift): operator tables, reaction, source.
class Evaluator {
public:
    Evaluator(const CauchyProblem& pb, const SolverConfig& cfg, std::vector<cplx> shift)
        : pb_(pb), cfg_(cfg), shift_(std::move(shift)) {
        shift_.resize(pb.grid.dim(), 0.0);
        const int N = pb.grid.dim();
        double p_eff = std::max(cfg.p, 2.0 + double(N) / pb.op.order_half() + 1.0);
        norm_ = NormParams::for_grid(pb.grid, p_eff, pb.op.order_half());
        try {
            norm_.validate(pb.grid);
            besov_ok_ = true;
        } catch (const ConfigError&) {
            besov_ok_ = false;
        }
    }

    const Grid& grid() const { return pb_.grid; }
    int components() const { return pb_.op.components(); }
    std::span<const cplx> shift() const { return shift_; }
    const CauchyProblem& problem() const { return pb_; }

    const CoefficientTable& table(cplx t) {
        cplx key = pb_.op.autonomous() ? cplx(0.0) : t;
        auto k = std::make_pair(key.real(), key.imag());
        auto it = tables_.find(k);
        if (it != tables_.end()) return it->second;
        if (tables_.size() > 512) tables_.clear();
        check_shift(pb_.op, shift_, t);
        return tables_.emplace(k, tabulate(pb_.op, pb_.grid, shift_, t)).first->second;
    }

    void check_time(cplx t) const { check_shift(pb_.op, shift_, t); }

    /// P(t) u with shift and coefficient caching.
    ComplexField apply_P(const ComplexField& u, cplx t) {
        bool variable = !pb_.op.spatially_constant();
        return apply(pb_.op, u, t, shift_, &table(t), cfg_.dealias && variable);
    }

    ComplexField reaction(const ComplexField& u, cplx t) const {
        if (pb_.reaction.identically_zero) return ComplexField(u.grid(), u.components());
        return nemytskii(pb_.reaction, u, shift_, t);
    }

    bool has_source() const { return bool(pb_.source); }

    ComplexField source(cplx t) const {
        ComplexField g(pb_.grid, components());
        if (pb_.source) pb_.source(t, shift_, g);
        return g;
    }

    /// -P u + f + g.
    ComplexField rhs(const ComplexField& u, cplx t) {
        ComplexField out = reaction(u, t);
        out -= apply_P(u, t);
        if (has_source()) out += source(t);
        return out;
    }

    /// Spatial mean of the diagonal 0-jet Jacobian of f at u, per component.
    std::vector<cplx> mean_jacobian(const ComplexField& u, cplx t) const {
        const int M = components();
        std::vector<cplx> out(M, 0.0);
        const auto& rs = pb_.reaction;
        if (rs.identically_zero) return out;
        auto jets = compute_jets(u, rs);
        const int slots = rs.jet_slots();
        std::vector<cplx> jet(std::size_t(slots) * M);
        std::array<cplx, 2> z{};
        const Grid& g = pb_.grid;
        for (std::size_t f = 0; f < g.size(); ++f) {
            auto p = g.point(f);
            for (int ax = 0; ax < g.dim(); ++ax) z[ax] = p[ax] + shift_[ax];
            for (int b = 0; b < slots; ++b)
                for (int k = 0; k < M; ++k) jet[b * M + k] = jets[b](k, f);
            if (rs.in_domain && !rs.in_domain(jet)) continue;
            PointContext ctx{std::span<const cplx>(z.data(), g.dim()), t, f};
            auto jac = reaction_jacobian(rs, ctx, jet);
            for (int k = 0; k < M; ++k) out[k] += jac[k * jet.size() + k];
        }
        for (auto& v : out) v /= double(g.size());
        return out;
    }

    /// Relative distance used by the Picard stopping test.
    double relative_distance(const ComplexField& a, const ComplexField& b) const {
        ComplexField d = a - b;
        if (besov_ok_) {
            double nd = besov_norm(d, norm_);
            if (nd == 0.0) return 0.0;
            return nd / std::max(besov_norm(a, norm_), 1e-300);
        }
        double nd = lp_norm(d, norm_.p);
        if (nd == 0.0) return 0.0;
        return nd / std::max(lp_norm(a, norm_.p), 1e-300);
    }

    double residual_p() const { return norm_.p; }

private:
    const CauchyProblem& pb_;
    const SolverConfig& cfg_;
    std::vector<cplx> shift_;
    NormParams norm_;
    bool besov_ok_ = false;
    std::map<std::pair<double, double>, CoefficientTable> tables_;
};

inline void fourier_all(const Grid& g, ComplexField& u) {
    for (int c = 0; c < u.components(); ++c) to_fourier(g, u.component(c));
}
inline void physical_all(const Grid& g, ComplexField& u) {
    for (int c = 0; c < u.components(); ++c) to_physical(g, u.component(c));
}

struct WindowOutcome {
    bool ok = false;
    int iterations = 0;
    double ratio = 0.0;
};

/// One Picard variation-of-constants window of J steps of size h in rho from w0 at
/// complex time t_w, direction mu. Fills nodes[0..J] and their time derivatives.
inline WindowOutcome picard_window(Evaluator& ev, const SolverConfig& cfg, cplx t_w, cplx mu, double h, int J,
                                   const ComplexField& w0, std::vector<ComplexField>& nodes,
                                   std::vector<ComplexField>& derivs) {
    const Grid& g = ev.grid();
    const int M = ev.components();
    const std::size_t S = g.size();
    const auto& op = ev.problem().op;
    const auto& rs = ev.problem().reaction;

    std::vector<cplx> times(J + 1);
    for (int j = 0; j <= J; ++j) {
        times[j] = t_w + mu * (h * j);
        ev.check_time(times[j]);
    }

    auto P0 = frozen_symbol(op, g, ev.shift(), t_w, &ev.table(t_w));
    auto J0 = ev.mean_jacobian(w0, t_w);
    std::vector<cplx> E(M * S), W1(M * S), W2(M * S), A0(M * S);
    for (int c = 0; c < M; ++c)
        for (std::size_t f = 0; f < S; ++f) {
            std::size_t i = c * S + f;
            A0[i] = -P0[i] + J0[c];
            auto ph = phi_functions(h * mu * A0[i]);
            E[i] = ph.e;
            W1[i] = h * ph.p1;
            W2[i] = h * ph.p2;
        }

    const bool exact_linear_part = op.spatially_constant() && M == 1;
    const bool trivial_reaction = rs.identically_zero;
    bool any_J0 = std::any_of(J0.begin(), J0.end(), [](cplx v) { return v != cplx(0.0); });

    // N_j = mu [ (P0 - P(t_j)) w + f - J0 w + g ], returned in Fourier space.
    auto nonlinear = [&](const ComplexField& w, cplx t) {
        ComplexField N(g, M);
        if (!trivial_reaction) N = ev.reaction(w, t);
        if (ev.has_source()) N += ev.source(t);
        if (any_J0)
            for (int c = 0; c < M; ++c)
                for (std::size_t f = 0; f < S; ++f) N(c, f) -= J0[c] * w(c, f);
        if (!exact_linear_part) N -= ev.apply_P(w, t);
        fourier_all(g, N);
        if (!exact_linear_part) {
            ComplexField wh(w);
            fourier_all(g, wh);
            for (std::size_t i = 0; i < M * S; ++i) N.values()[i] += P0[i] * wh.values()[i];
        }
        N *= mu;
        return N;
    };

    ComplexField w0hat(w0);
    fourier_all(g, w0hat);
    nodes.assign(J + 1, w0);
    std::vector<ComplexField> Nhat(J + 1);
    Nhat[0] = nonlinear(w0, times[0]);

    WindowOutcome out;
    double prev = std::numeric_limits<double>::infinity();
    bool converged = false;
    for (int k = 0; k < cfg.picard_max_iter; ++k) {
        for (int j = 1; j <= J; ++j) Nhat[j] = nonlinear(nodes[j], times[j]);
        std::vector<ComplexField> next(J + 1);
        next[0] = w0;
        ComplexField cur(w0hat);
        double diff = 0.0;
        for (int j = 0; j < J; ++j) {
            ComplexField nxt(g, M);
            auto& nv = nxt.values();
            const auto& cv = cur.values();
            const auto& a = Nhat[j].values();
            const auto& b = Nhat[j + 1].values();
            for (std::size_t i = 0; i < M * S; ++i) nv[i] = E[i] * cv[i] + W1[i] * a[i] + W2[i] * (b[i] - a[i]);
            cur = nxt;
            physical_all(g, nxt);
            if (!nxt.all_finite()) {
                out.ok = false;
                out.ratio = std::numeric_limits<double>::infinity();
                return out;
            }
            diff = std::max(diff, ev.relative_distance(nxt, nodes[j + 1]));
            next[j + 1] = std::move(nxt);
        }
        nodes = std::move(next);
        if (k > 0) out.ratio = diff / prev;
        if (!std::isfinite(diff)) return out;
        if (diff <= cfg.picard_tol) {
            out.iterations = k;
            converged = true;
            break;
        }
        if (k >= 2 && out.ratio >= 1.0) return out;
        prev = diff;
    }
    if (!converged) return out;

    derivs.assign(J + 1, ComplexField());
    for (int j = 0; j <= J; ++j) {
        ComplexField N = j == 0 ? Nhat[0] : nonlinear(nodes[j], times[j]);
        ComplexField wh(nodes[j]);
        fourier_all(g, wh);
        ComplexField d(g, M);
        for (std::size_t i = 0; i < M * S; ++i) d.values()[i] = N.values()[i] / mu + A0[i] * wh.values()[i];
        physical_all(g, d);
        derivs[j] = std::move(d);
    }
    out.ok = true;
    return out;
}

/// Segment d w / d rho = mu [ -P(t) w + f(t, w) + g(t) ], t = t_start + mu rho, rho in [0, rho_end].
struct Segment {
    cplx t_start{0.0};
    cplx mu{1.0};
    double rho_end = 0.0;
    double s_offset = 0.0;  // added to rho in SolveResult::parameters
};

inline int step_count(double length, double dt) {
    return std::max(1, int(std::ceil(length / dt - 1e-9)));
}

inline void run_picard_segment(Evaluator& ev, const SolverConfig& cfg, const Segment& seg, const ComplexField& w0,
                               SolveResult& res, bool append_first) {
    const int steps = step_count(seg.rho_end, cfg.dt);
    const double h = seg.rho_end / steps;
    int J = cfg.window_steps;
    if (cfg.step_constants) J = std::max(1, int(std::floor(step_size_from_estimates(*cfg.step_constants).T1 / h)));
    ComplexField w = w0;
    int done = 0;
    bool first = true;
    while (done < steps) {
        int len = std::min(J, steps - done);
        std::vector<ComplexField> nodes, derivs;
        cplx tw = seg.t_start + seg.mu * (h * done);
        auto outcome = picard_window(ev, cfg, tw, seg.mu, h, len, w, nodes, derivs);
        if (!outcome.ok) {
            if (len == 1) {
                std::ostringstream msg;
                msg << "Picard iteration failed to contract on a single step of size " << h << " at t = " << tw
                    << " (last ratio " << outcome.ratio << "); reduce dt or the window length";
                if (!std::isfinite(outcome.ratio)) throw InstabilityError(msg.str());
                throw DivergenceError(msg.str(), outcome.ratio);
            }
            J = std::max(1, len / 2);
            res.diagnostics.window_halvings++;
            continue;
        }
        res.diagnostics.picard_iterations.push_back(outcome.iterations);
        res.diagnostics.contraction_ratios.push_back(outcome.ratio);
        res.diagnostics.window_steps.push_back(len);
        for (int j = first && append_first ? 0 : 1; j <= len; ++j) {
            res.parameters.push_back(seg.s_offset + h * (done + j));
            res.times.push_back(seg.t_start + seg.mu * (h * (done + j)));
            res.snapshots.push_back(nodes[j]);
            res.derivatives.push_back(derivs[j]);
        }
        first = false;
        w = nodes[len];
        done += len;
    }
}

inline void run_imex_segment(Evaluator& ev, const SolverConfig& cfg, const Segment& seg, const ComplexField& w0,
                             SolveResult& res, bool append_first) {
    const Grid& g = ev.grid();
    const int M = ev.components();
    const std::size_t S = g.size();
    const auto& op = ev.problem().op;
    const bool has_reaction = !ev.problem().reaction.identically_zero;
    const int steps = step_count(seg.rho_end, cfg.dt);
    const double h = seg.rho_end / steps;
    const cplx c = 0.5 * h * seg.mu;
    const bool direct = op.spatially_constant() && M == 1;

    auto time_at = [&](int n) { return seg.t_start + seg.mu * (h * n); };

    // (I + c P(t)) x = b
    auto implicit_solve = [&](const ComplexField& b, cplx t, const ComplexField& guess) {
        auto P0 = frozen_symbol(op, g, ev.shift(), t, &ev.table(t));
        if (direct) {
            ComplexField x(b);
            fourier_all(g, x);
            for (std::size_t i = 0; i < S; ++i) x.values()[i] /= (1.0 + c * P0[i]);
            physical_all(g, x);
            return x;
        }
        auto A = [&](const std::vector<cplx>& v) {
            ComplexField u(g, M, v);
            ComplexField Pu = ev.apply_P(u, t);
            std::vector<cplx> out(v);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * Pu.values()[i];
            return out;
        };
        auto Minv = [&](const std::vector<cplx>& v) {
            ComplexField u(g, M, v);
            fourier_all(g, u);
            for (std::size_t i = 0; i < M * S; ++i) u.values()[i] /= (1.0 + c * P0[i]);
            physical_all(g, u);
            return u.values();
        };
        std::vector<cplx> x = guess.values();
        res.diagnostics.gmres_iterations +=
            gmres(A, Minv, b.values(), x, cfg.gmres_tol, cfg.gmres_restart, 50);
        return ComplexField(g, M, std::move(x));
    };

    ComplexField u = w0;
    ComplexField f_prev;
    for (int n = 0; n < steps; ++n) {
        cplx tn = time_at(n), tn1 = time_at(n + 1);
        ev.check_time(tn1);
        ComplexField Pu = ev.apply_P(u, tn);
        ComplexField fn = has_reaction ? ev.reaction(u, tn) : ComplexField(g, M);
        ComplexField gn = ev.source(tn);
        ComplexField gn1 = ev.source(tn1);
        ComplexField deriv = fn + gn - Pu;
        if (n == 0 && append_first) {
            res.parameters.push_back(seg.s_offset);
            res.times.push_back(tn);
            res.snapshots.push_back(u);
            res.derivatives.push_back(deriv);
        } else if (n > 0) {
            res.derivatives.back() = deriv;
        }

        ComplexField base = u - c * Pu + c * (gn + gn1);
        ComplexField explicit_f = n == 0 ? fn : 1.5 * fn - 0.5 * f_prev;
        ComplexField next = implicit_solve(base + (h * seg.mu) * explicit_f, tn1, u);
        if (n == 0 && has_reaction) {
            ComplexField f1 = ev.reaction(next, tn1);
            next = implicit_solve(base + (0.5 * h * seg.mu) * (fn + f1), tn1, next);
        }
        if (!next.all_finite()) {
            std::ostringstream msg;
            msg << "IMEX step produced non-finite values at t = " << tn1;
            throw InstabilityError(msg.str());
        }
        f_prev = std::move(fn);
        u = std::move(next);
        res.parameters.push_back(seg.s_offset + h * (n + 1));
        res.times.push_back(tn1);
        res.snapshots.push_back(u);
        res.derivatives.push_back(ComplexField());
    }
    res.derivatives.back() = ev.rhs(u, time_at(steps));
}

inline void run_segment(Evaluator& ev, const SolverConfig& cfg, const Segment& seg, const ComplexField& w0,
                        SolveResult& res, bool append_first) {
    if (seg.rho_end <= 0.0) {
        if (append_first) {
            res.parameters.push_back(seg.s_offset);
            res.times.push_back(seg.t_start);
            res.snapshots.push_back(w0);
            res.derivatives.push_back(ev.rhs(w0, seg.t_start));
        }
        return;
    }
    if (cfg.integrator == Integrator::picard_voc)
        run_picard_segment(ev, cfg, seg, w0, res, append_first);
    else
        run_imex_segment(ev, cfg, seg, w0, res, append_first);
}

/// Central-difference strict-solution residual || (u_{j+1} - u_{j-1}) / (t_{j+1} - t_{j-1}) - du/dt_j ||_p.
inline void fill_residuals(SolveResult& res, double p) {
    res.diagnostics.residuals.clear();
    for (std::size_t j = 1; j + 1 < res.snapshots.size(); ++j) {
        cplx dt = res.times[j + 1] - res.times[j - 1];
        ComplexField d = res.snapshots[j + 1] - res.snapshots[j - 1];
        d *= 1.0 / dt;
        d -= res.derivatives[j];
        res.diagnostics.residuals.push_back(lp_norm(d, p));
    }
    res.diagnostics.final_residual = res.diagnostics.residuals.empty() ? 0.0 : res.diagnostics.residuals.back();
}

inline SolveResult start_result(const CauchyProblem& pb, std::span<const cplx> shift) {
    SolveResult res;
    res.grid = pb.grid;
    res.shift.assign(shift.begin(), shift.end());
    res.shift.resize(pb.grid.dim(), 0.0);
    return res;
}

}  // namespace detail

/// Solves on the real interval [t0, T] with the data sampled at x + z0.
inline SolveResult solve_real(const CauchyProblem& pb, double t0, double T, const SolverConfig& cfg,
                              std::span<const cplx> shift = {}) {
    pb.validate();
    cfg.validate();
    if (!(T > t0)) throw ConfigError("solve_real needs T > t0");
    auto res = detail::start_result(pb, shift);
    detail::Evaluator ev(pb, cfg, res.shift);
    ComplexField u0 = sample_on_shifted_grid(pb.initial, pb.grid, res.shift);
    detail::run_segment(ev, cfg, {cplx(t0), 1.0, T - t0, t0}, u0, res, true);
    detail::fill_residuals(res, ev.residual_p());
    return res;
}

/// A single Picard window [t0, t0 + T1] along direction mu from w0; no adaptive halving.
inline SolveResult picard_step(const CauchyProblem& pb, double t0, double T1, const ComplexField& w0, cplx mu,
                               const SolverConfig& cfg, std::span<const cplx> shift = {}) {
    pb.validate();
    cfg.validate();
    const double theta0 = pb.op.temporal().angle;
    if (!(std::abs(mu - 1.0) < std::sin(theta0)))
        throw DomainError("picard_step needs |mu - 1| < sin(theta0)");
    auto res = detail::start_result(pb, shift);
    detail::Evaluator ev(pb, cfg, res.shift);
    const int steps = detail::step_count(T1, cfg.dt);
    const double h = T1 / steps;
    std::vector<ComplexField> nodes, derivs;
    auto outcome = detail::picard_window(ev, cfg, cplx(t0), mu, h, steps, w0, nodes, derivs);
    if (!outcome.ok) {
        std::ostringstream msg;
        msg << "Picard window of length " << T1 << " did not contract (ratio " << outcome.ratio
            << "); choose a smaller T1";
        throw DivergenceError(msg.str(), outcome.ratio);
    }
    res.diagnostics.picard_iterations.push_back(outcome.iterations);
    res.diagnostics.contraction_ratios.push_back(outcome.ratio);
    res.diagnostics.window_steps.push_back(steps);
    for (int j = 0; j <= steps; ++j) {
        res.parameters.push_back(t0 + h * j);
        res.times.push_back(cplx(t0) + mu * (h * j));
        res.snapshots.push_back(nodes[j]);
        res.derivatives.push_back(derivs[j]);
    }
    detail::fill_residuals(res, ev.residual_p());
    return res;
}

/// u at complex times t = rho mu for rho in [0, rho_max].
inline SolveResult solve_complex_ray(const CauchyProblem& pb, cplx mu, double rho_max, const SolverConfig& cfg,
                                     std::span<const cplx> shift = {}) {
    pb.validate();
    cfg.validate();
    const auto& td = pb.op.temporal();
    if (!(std::abs(mu - 1.0) < std::sin(td.angle) || mu == cplx(1.0)))
        throw DomainError("complex ray needs |mu - 1| < sin(theta0)");
    if (!td.contains(mu * rho_max)) {
        std::ostringstream msg;
        msg << "complex ray end point " << mu * rho_max << " leaves the temporal domain";
        throw DomainError(msg.str());
    }
    auto res = detail::start_result(pb, shift);
    detail::Evaluator ev(pb, cfg, res.shift);
    ComplexField u0 = sample_on_shifted_grid(pb.initial, pb.grid, res.shift);
    detail::run_segment(ev, cfg, {0.0, mu, rho_max, 0.0}, u0, res, true);
    detail::fill_residuals(res, ev.residual_p());
    return res;
}

/// Two-segment path: t = s (1 + i tau / T') for s <= T', then t = s + i tau up to sigma + i tau.
inline SolveResult solve_along_path(const CauchyProblem& pb, double sigma, double tau, double t_prime,
                                    const SolverConfig& cfg, std::span<const cplx> shift = {}) {
    pb.validate();
    cfg.validate();
    const auto& td = pb.op.temporal();
    if (!(t_prime > 0.0 && t_prime <= sigma)) throw DomainError("path needs 0 < T' <= sigma");
    if (std::abs(tau / t_prime) > std::tan(td.angle) + 1e-12)
        throw DomainError("path needs |tau / T'| <= tan(theta0)");
    if (!td.contains(cplx(sigma, tau)) || !td.contains(cplx(t_prime, tau))) {
        std::ostringstream msg;
        msg << "path target " << cplx(sigma, tau) << " outside the temporal domain";
        throw DomainError(msg.str());
    }
    auto res = detail::start_result(pb, shift);
    detail::Evaluator ev(pb, cfg, res.shift);
    ComplexField u0 = sample_on_shifted_grid(pb.initial, pb.grid, res.shift);
    cplx mu1(1.0, tau / t_prime);
    detail::run_segment(ev, cfg, {0.0, mu1, t_prime, 0.0}, u0, res, true);
    if (sigma > t_prime + 1e-14) {
        ComplexField mid = res.snapshots.back();
        detail::run_segment(ev, cfg, {cplx(t_prime, tau), 1.0, sigma - t_prime, t_prime}, mid, res, false);
    }
    detail::fill_residuals(res, ev.residual_p());
    return res;
}

/// int ||u||_{W^{2m,p}}^p + int ||u'||_p^p along a trajectory (Simpson in the real parameter).
inline double trajectory_norm(const SolveResult& res, double p, int m) {
    std::vector<double> a, b;
    for (std::size_t j = 0; j < res.snapshots.size(); ++j) {
        a.push_back(std::pow(sobolev_wp_norm(res.snapshots[j], 2 * m, p), p));
        b.push_back(std::pow(lp_norm(res.derivatives[j], p), p));
    }
    double h = res.parameters.size() > 1 ? res.parameters[1] - res.parameters[0] : 0.0;
    return detail::simpson(a, h) + detail::simpson(b, h);
}

// ---------------------------------------------------------------------------
// Maximal regularity

/// One ensemble member: u0 and g(x, t) = g_space(x) g_time(t), switched off after g_cutoff.
struct MaxRegSample {
    ComplexField u0;
    ComplexField g_space;
    std::function<cplx(double)> g_time;
    double g_cutoff = std::numeric_limits<double>::infinity();
};

struct MaxRegTerms {
    double du = 0.0;        // int ||u'||_p^p
    double bu = 0.0;        // int ||B u||_p^p
    double data_u0 = 0.0;   // ||u0||_B^p
    double data_g = 0.0;    // int ||g||_p^p
    double ratio = 0.0;
    bool skipped = false;
};

/// Terms of [int ||u'||^p + int ||Bu||^p] / [||u0||_B^p + int ||g||^p] for u' + Bu = g on [0, T],
/// B = P(0) of the linear operator `op`. The source is switched off in a second leg past g_cutoff.
inline MaxRegTerms max_reg_ratio(const DivergenceOperator& op, const MaxRegSample& sample, double T, double p,
                                 const SolverConfig& cfg) {
    const Grid& g = sample.u0.grid();
    const int M = op.components();
    MaxRegTerms out;
    auto params = NormParams::for_grid(g, p, op.order_half());
    out.data_u0 = sample.u0.max_abs() == 0.0 ? 0.0 : std::pow(besov_norm(sample.u0, params), p);
    bool has_g = sample.g_space.size() > 0 && sample.g_space.max_abs() > 0.0;
    auto gt = [&](double t) { return sample.g_time ? sample.g_time(t) : cplx(1.0); };
    const double cut = std::min(T, sample.g_cutoff);

    CauchyProblem pb;
    pb.op = op;
    pb.reaction = zero_reaction(g.dim(), op.order_half(), M);
    pb.grid = g;
    ComplexField u0 = sample.u0;
    pb.initial.dim = g.dim();
    pb.initial.components = M;
    pb.initial.eval = [](std::span<const cplx>, std::span<cplx> o) { std::fill(o.begin(), o.end(), cplx(0.0)); };

    auto leg = [&](double a, double b, const ComplexField& start, bool with_g) {
        CauchyProblem q = pb;
        if (with_g && has_g)
            q.source = [&](cplx t, std::span<const cplx>, ComplexField& o) {
                o = gt(t.real()) * sample.g_space;
            };
        SolveResult res = detail::start_result(q, {});
        detail::Evaluator ev(q, cfg, res.shift);
        detail::run_segment(ev, cfg, {cplx(a), 1.0, b - a, a}, start, res, true);
        return res;
    };

    std::vector<SolveResult> legs;
    if (cut > 0.0) legs.push_back(leg(0.0, cut, u0, true));
    if (cut < T) legs.push_back(leg(cut, T, legs.empty() ? u0 : legs.back().final_state(), false));

    for (std::size_t l = 0; l < legs.size(); ++l) {
        const auto& res = legs[l];
        bool with_g = l == 0 && cut > 0.0 && has_g;
        std::vector<double> du, bu, gg;
        for (std::size_t j = 0; j < res.snapshots.size(); ++j) {
            du.push_back(std::pow(lp_norm(res.derivatives[j], p), p));
            bu.push_back(std::pow(lp_norm(apply(op, res.snapshots[j], 0.0), p), p));
            if (with_g) gg.push_back(std::pow(std::abs(gt(res.parameters[j])) * lp_norm(sample.g_space, p), p));
        }
        double h = res.parameters[1] - res.parameters[0];
        out.du += detail::simpson(du, h);
        out.bu += detail::simpson(bu, h);
        if (with_g) out.data_g += detail::simpson(gg, h);
    }
    double denom = out.data_u0 + out.data_g;
    if (!(denom > 0.0)) {
        out.skipped = true;
        return out;
    }
    out.ratio = (out.du + out.bu) / denom;
    return out;
}

/// Sup of the ratio over the ensemble: a lower bound for the optimal constant M(p, T).
inline double estimate_max_reg_constant(const DivergenceOperator& op, double T, double p,
                                        const std::vector<MaxRegSample>& ensemble, const SolverConfig& cfg,
                                        int jobs = 1) {
    if (ensemble.empty()) throw ConfigError("max-regularity ensemble is empty");
    auto terms = parallel_map(ensemble.size(), jobs,
                              [&](std::size_t i) { return max_reg_ratio(op, ensemble[i], T, p, cfg); });
    double best = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (terms[i].skipped) {
            std::cerr << "warning: max-regularity sample " << i << " has zero data norm; skipped\n";
            continue;
        }
        best = std::max(best, terms[i].ratio);
    }
    return best;
}

/// M_hat over increasing horizons. The ensemble at T contains every base member with its
/// source cut off at each earlier horizon T' <= T (zero extension), so the estimate is
/// nondecreasing in T by construction.
inline std::vector<double> max_reg_sweep(const DivergenceOperator& op, std::vector<double> horizons, double p,
                                         const std::vector<MaxRegSample>& base, const SolverConfig& cfg,
                                         int jobs = 1) {
    std::sort(horizons.begin(), horizons.end());
    std::vector<double> out;
    for (std::size_t k = 0; k < horizons.size(); ++k) {
        std::vector<MaxRegSample> ensemble;
        for (std::size_t q = 0; q <= k; ++q)
            for (const auto& s : base) {
                MaxRegSample m = s;
                m.g_cutoff = std::min(s.g_cutoff, horizons[q]);
                ensemble.push_back(std::move(m));
            }
        out.push_back(estimate_max_reg_constant(op, horizons[k], p, ensemble, cfg, jobs));
    }
    return out;
}

}  // namespace parastrip
