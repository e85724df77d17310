#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <limits>
#include <optional>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "parastrip/analyticity.hpp"
#include "parastrip/operator.hpp"
#include "parastrip/reaction.hpp"
#include "parastrip/solver.hpp"

namespace parastrip {

struct HestonParams {
    double kappa = 1.5;
    double theta = 0.04;
    double sigma_v = 0.3;
    double rho = -0.5;
    double v_min = 0.02;
    double v_max = 0.06;
};

/// Drift of the log-price. `ito` is q - gamma - sigma^2/2; `printed` keeps +sigma^2/2.
enum class DriftConvention { ito, printed };

struct XvaParams {
    double r = 0.0;
    double lambda_B = 0.0;
    double lambda_C = 0.0;
    double R_B = 1.0;
    double R_C = 1.0;
    double s_F = 0.0;
    double q_S = 0.0;
    double gamma_S = 0.0;
    double sigma = 0.2;
    double epsilon = 1e-3;
    std::optional<HestonParams> heston;
    /// Mark-to-market M = (1 - theta) V + theta V_hat; 1 is the nonlinear model, 0 the linear one.
    double theta_mtm = 1.0;
    DriftConvention drift = DriftConvention::ito;

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("xva." + m); };
        if (!(R_B >= 0.0 && R_B <= 1.0)) fail("R_B must lie in [0, 1]");
        if (!(R_C >= 0.0 && R_C <= 1.0)) fail("R_C must lie in [0, 1]");
        if (!(lambda_B >= 0.0)) fail("lambda_B must be >= 0");
        if (!(lambda_C >= 0.0)) fail("lambda_C must be >= 0");
        if (!(s_F >= 0.0)) fail("s_F must be >= 0");
        if (!(epsilon > 0.0 && epsilon < 1.0)) fail("epsilon must lie in (0, 1)");
        if (!(theta_mtm >= 0.0 && theta_mtm <= 1.0)) fail("theta_mtm must lie in [0, 1]");
        if (!heston && !(sigma > 0.0)) fail("sigma must be positive (ellipticity)");
        if (heston) {
            const auto& h = *heston;
            if (!(std::abs(h.rho) < 1.0)) fail("heston.rho must satisfy |rho| < 1");
            if (!(h.v_min > 0.0)) fail("heston.v_min must be positive (uniform ellipticity)");
            if (!(h.v_max > h.v_min)) fail("heston.v_max must exceed v_min");
            if (!(h.kappa >= 0.0 && h.theta > 0.0 && h.sigma_v > 0.0))
                fail("heston needs kappa >= 0, theta > 0, sigma_v > 0");
        }
    }

    double log_drift(double variance) const {
        double half = 0.5 * variance;
        return q_S - gamma_S + (drift == DriftConvention::ito ? -half : half);
    }
};

inline TemporalDomain pricing_domain(double T) { return {pi / 4.0, T, T}; }

/// Ã = sigma^2/2 d_XX + b d_X - r written as -P: P^{e1 e1} = sigma^2/2, P^{0 e1} = -i b, P^{00} = r.
inline DivergenceOperator bs_log_generator(const XvaParams& prm, TemporalDomain td = {}) {
    if (!(prm.sigma > 0.0)) throw ConfigError("xva.sigma must be positive (ellipticity)");
    std::vector<CoefficientTerm> terms;
    terms.push_back(constant_term({1, 0}, {1, 0}, 0.5 * prm.sigma * prm.sigma));
    double b = prm.log_drift(prm.sigma * prm.sigma);
    if (b != 0.0) terms.push_back(constant_term({0, 0}, {1, 0}, -I * b));
    if (prm.r != 0.0) terms.push_back(constant_term({0, 0}, {0, 0}, prm.r));
    return DivergenceOperator(1, 1, 1, std::move(terms), {}, td);
}

/// Periodised variance coordinate: v(y) = v_mid + v_half sin(pi y / L), slope beta = v_half pi / L at y = 0.
struct VarianceMap {
    double v_mid = 0.04;
    double v_half = 0.02;
    double L = 1.0;

    double beta() const { return v_half * pi / L; }
    cplx v(cplx y) const { return v_mid + v_half * std::sin(pi * y / L); }
    cplx dv(cplx y) const { return beta() * std::cos(pi * y / L); }
    /// Grid coordinate y with v(y) = variance (principal branch, |y| <= L/2).
    double coordinate(double variance) const {
        double s = (variance - v_mid) / v_half;
        if (std::abs(s) > 1.0) throw DomainError("variance outside [v_min, v_max]");
        return std::asin(s) * L / pi;
    }
};

inline VarianceMap variance_map(const HestonParams& h, double half_length) {
    return {0.5 * (h.v_min + h.v_max), 0.5 * (h.v_max - h.v_min), half_length};
}

/// Heston generator in (X, y), y the periodised variance coordinate on [-L, L).
inline DivergenceOperator heston_generator(const XvaParams& prm, double half_length, TemporalDomain td = {}) {
    if (!prm.heston) throw ConfigError("xva.heston block missing");
    const auto h = *prm.heston;
    if (!(h.v_min > 0.0))
        throw ConfigError("xva.heston.v_min must be positive: the generator degenerates at v = 0");
    if (!(h.v_max > h.v_min)) throw ConfigError("xva.heston.v_max must exceed v_min");
    const VarianceMap vm = variance_map(h, half_length);
    const double beta = vm.beta();
    const XvaParams p = prm;
    std::vector<CoefficientTerm> terms;
    auto add = [&](MultiIndex a, MultiIndex b, std::function<cplx(cplx)> fn) {
        terms.push_back(scalar_term(a, b, [fn](std::span<const cplx> z, cplx) { return fn(z[1]); }));
    };
    add({1, 0}, {1, 0}, [vm](cplx y) { return 0.5 * vm.v(y); });
    add({1, 0}, {0, 1}, [vm, h, beta](cplx y) { return 0.5 * h.rho * h.sigma_v * vm.v(y) / beta; });
    add({0, 1}, {1, 0}, [vm, h, beta](cplx y) { return 0.5 * h.rho * h.sigma_v * vm.v(y) / beta; });
    add({0, 1}, {0, 1}, [vm, h, beta](cplx y) { return 0.5 * h.sigma_v * h.sigma_v * vm.v(y) / (beta * beta); });
    // first-order part: drift minus the divergence of the diffusion matrix
    add({0, 0}, {1, 0}, [vm, h, beta, p](cplx y) {
        cplx v = vm.v(y);
        cplx bx = p.q_S - p.gamma_S + (p.drift == DriftConvention::ito ? -0.5 : 0.5) * v;
        cplx div = 0.5 * h.rho * h.sigma_v * vm.dv(y) / beta;
        return -I * (bx - div);
    });
    add({0, 0}, {0, 1}, [vm, h, beta](cplx y) {
        cplx by = h.kappa * (h.theta - vm.v(y)) / beta;
        cplx div = 0.5 * h.sigma_v * h.sigma_v * vm.dv(y) / (beta * beta);
        return -I * (by - div);
    });
    if (p.r != 0.0) terms.push_back(constant_term({0, 0}, {0, 0}, p.r));
    return DivergenceOperator(2, 1, 1, std::move(terms), {}, td);
}

/// Diffusion matrix of the Heston generator in (X, v) at variance v.
inline Eigen::Matrix2d heston_diffusion(const HestonParams& h, double v) {
    Eigen::Matrix2d a;
    a << 0.5 * v, 0.5 * h.rho * h.sigma_v * v, 0.5 * h.rho * h.sigma_v * v, 0.5 * h.sigma_v * h.sigma_v * v;
    return a;
}

// ---------------------------------------------------------------------------
// Payoffs

enum class PayoffKind { smoothed_call, smoothed_put, hermite_expansion };

struct PayoffSpec {
    PayoffKind kind = PayoffKind::smoothed_call;
    double strike = 1.0;
    double epsilon = 1e-3;
    /// Half-width a of the window exp(-(X/a)^16) that keeps the log-payoff bounded on the box.
    double window = 3.0;
    /// Used as is when set; otherwise a hermite_expansion fits the damped smoothed call.
    std::optional<HermiteData> hermite;
    int hermite_terms = 40;
    double hermite_scale = 1.0;
    double hermite_damping = 2.0;  // target multiplied by exp(-X^2 / (2 d^2))

    void validate() const {
        if (!(strike > 0.0)) throw ConfigError("payoff.strike must be positive");
        if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("payoff.epsilon must lie in (0, 1)");
        if (!(window > 0.0)) throw ConfigError("payoff.window must be positive");
        if (kind == PayoffKind::hermite_expansion && !hermite && hermite_terms < 1)
            throw ConfigError("payoff.hermite_terms must be >= 1");
    }

    /// kappa_0 = arctan(eps / K) for the smoothed payoffs: e^z - K then avoids the cuts of f_eps.
    double admissible_half_width() const {
        if (kind == PayoffKind::hermite_expansion) return std::numeric_limits<double>::infinity();
        return std::atan(epsilon / strike);
    }
};

/// Orthonormal Hermite functions psi_0..psi_{n-1} at complex z (three-term recurrence).
inline std::vector<cplx> hermite_functions(int n, cplx z) {
    std::vector<cplx> psi(n);
    psi[0] = std::pow(pi, -0.25) * std::exp(-0.5 * z * z);
    if (n > 1) psi[1] = std::sqrt(2.0) * z * psi[0];
    for (int k = 1; k + 1 < n; ++k)
        psi[k + 1] = std::sqrt(2.0 / (k + 1)) * z * psi[k] - std::sqrt(double(k) / (k + 1)) * psi[k - 1];
    return psi;
}

namespace detail {

inline cplx payoff_window(double a, cplx X) { return std::exp(-std::pow(X / a, 16)); }

inline cplx smoothed_payoff(const PayoffSpec& pay, cplx X) {
    cplx w = std::exp(X) - pay.strike;
    cplx core = pay.kind == PayoffKind::smoothed_put ? f_plus(pay.epsilon, -w) : f_plus(pay.epsilon, w);
    return core * payoff_window(pay.window, X);
}

/// Least-squares coefficients of the damped smoothed call on psi_k(X / scale).
inline std::vector<double> fit_hermite(const PayoffSpec& pay) {
    const int n = pay.hermite_terms;
    const double s = pay.hermite_scale;
    const double reach = s * (std::sqrt(2.0 * n + 1.0) + 4.0);
    const int samples = 8 * n + 400;
    PayoffSpec call = pay;
    call.kind = PayoffKind::smoothed_call;
    Eigen::MatrixXd A(samples, n);
    Eigen::VectorXd b(samples);
    for (int i = 0; i < samples; ++i) {
        double x = -reach + 2.0 * reach * i / (samples - 1);
        auto psi = hermite_functions(n, x / s);
        for (int k = 0; k < n; ++k) A(i, k) = psi[k].real();
        double d = pay.hermite_damping;
        b(i) = smoothed_payoff(call, x).real() * std::exp(-x * x / (2.0 * d * d));
    }
    Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
    return std::vector<double>(c.data(), c.data() + n);
}

}  // namespace detail

/// Initial datum H(exp X) on the grid's dimension (a Heston grid carries a flat variance axis).
inline InitialData payoff_data(const PayoffSpec& pay, int dim) {
    pay.validate();
    InitialData d;
    if (pay.kind == PayoffKind::hermite_expansion && pay.hermite) {
        if (pay.hermite->dim != 1) throw ConfigError("payoff.hermite must be one-dimensional in X");
        auto base = InitialData::from_hermite(*pay.hermite);
        d.eval = [base](std::span<const cplx> z, std::span<cplx> out) { base.eval(z.first(1), out); };
    } else if (pay.kind == PayoffKind::hermite_expansion) {
        auto coeffs = detail::fit_hermite(pay);
        double s = pay.hermite_scale;
        d.eval = [coeffs, s](std::span<const cplx> z, std::span<cplx> out) {
            auto psi = hermite_functions(int(coeffs.size()), z[0] / s);
            cplx acc = 0.0;
            for (std::size_t k = 0; k < coeffs.size(); ++k) acc += coeffs[k] * psi[k];
            out[0] = acc;
        };
    } else {
        d.eval = [pay](std::span<const cplx> z, std::span<cplx> out) { out[0] = detail::smoothed_payoff(pay, z[0]); };
    }
    d.dim = dim;
    d.components = 1;
    d.strip.half_width = pay.admissible_half_width();
    return d;
}

// ---------------------------------------------------------------------------
// Pricing

/// Looks a stored surface up at time t: exact node match, else linear interpolation in Re t.
class SurfaceLookup {
public:
    explicit SurfaceLookup(const SolveResult& res) : res_(res) {}

    const ComplexField& at(cplx t, ComplexField& scratch) const {
        const auto& ts = res_.times;
        auto it = std::lower_bound(ts.begin(), ts.end(), t, [](cplx a, cplx b) { return a.real() < b.real(); });
        std::size_t j = std::size_t(it - ts.begin());
        for (std::size_t k : {j, j == 0 ? j : j - 1})
            if (k < ts.size() && std::abs(ts[k] - t) <= 1e-9 * std::max(1.0, std::abs(t))) return res_.snapshots[k];
        if (j == 0 || j >= ts.size()) {
            std::ostringstream msg;
            msg << "surface lookup at t = " << t << " outside the stored range";
            throw DomainError(msg.str());
        }
        double w = (t.real() - ts[j - 1].real()) / (ts[j].real() - ts[j - 1].real());
        scratch = (1.0 - w) * res_.snapshots[j - 1] + w * res_.snapshots[j];
        return scratch;
    }

private:
    const SolveResult& res_;
};

inline void check_branch(double eps, cplx m, std::size_t f, cplx t) {
    if (!in_branch_domain(eps, m)) {
        std::ostringstream msg;
        msg << "mark-to-market value " << m << " on a branch cut of the smoother at grid point " << f
            << ", tau = " << t;
        throw DomainError(msg.str());
    }
}

inline DivergenceOperator xva_generator(const XvaParams& prm, const Grid& grid, double T) {
    if (prm.heston) {
        if (grid.dim() != 2) throw ConfigError("Heston pricing needs a 2-D grid (X, variance)");
        return heston_generator(prm, grid.half_length(), pricing_domain(T));
    }
    if (grid.dim() != 1) throw ConfigError("Black-Scholes pricing needs a 1-D grid");
    return bs_log_generator(prm, pricing_domain(T));
}

/// The XVA Cauchy problem in (X, tau). theta_mtm = 1 needs no V; otherwise `V` is the risk-free surface.
/// With M = (1 - theta) V + theta v:
///   v_tau = Ã v - (r + lB + lC) v + (R_B lB + lC) f-(M) + (lB + R_C lC) f+(M) - s_F f+(M).
/// For theta = 1 this is written directly as -(1-R_B) lB f-(v) - (1-R_C) lC f+(v) - s_F f+(v).
inline CauchyProblem xva_problem(const XvaParams& prm, const PayoffSpec& pay, const Grid& grid, double T,
                                 const SolveResult* V = nullptr) {
    prm.validate();
    CauchyProblem pb;
    pb.grid = grid;
    pb.op = xva_generator(prm, grid, T);
    pb.initial = payoff_data(pay, grid.dim());
    const double eps = prm.epsilon;
    const double lB = prm.lambda_B, lC = prm.lambda_C, sF = prm.s_F;
    const bool trivial = lB == 0.0 && lC == 0.0 && sF == 0.0;
    if (trivial) {
        pb.reaction = zero_reaction(grid.dim());
        return pb;
    }
    auto in_domain = [eps](std::span<const cplx> X) { return in_branch_domain(eps, X[0]); };
    const double theta = prm.theta_mtm;
    if (theta == 1.0) {
        const double a = (1.0 - prm.R_B) * lB, b = (1.0 - prm.R_C) * lC + sF;
        pb.reaction = pointwise_reaction(
            grid.dim(), [=](cplx v) { return -a * f_minus(eps, v) - b * f_plus(eps, v); },
            [=](cplx v) { return -a * f_minus_derivative(eps, v) - b * f_plus_derivative(eps, v); });
        if (a == 0.0 && b == 0.0) pb.reaction = zero_reaction(grid.dim());
        pb.reaction.in_domain = in_domain;
        return pb;
    }
    if (!V) throw ConfigError("mark-to-market theta < 1 needs the risk-free surface V");
    if (!(V->grid == grid)) throw ConfigError("risk-free surface V lives on a different grid");
    if (V->times.empty() || V->times.back().real() < T - 1e-12)
        throw ConfigError("risk-free surface V does not cover [0, T]");
    const double cm = prm.R_B * lB + lC, cp = prm.lambda_B + prm.R_C * lC;
    if (theta == 0.0) {
        pb.op = pb.op.with_zeroth_order(lB + lC);
        pb.reaction = zero_reaction(grid.dim());
        auto lookup = std::make_shared<SurfaceLookup>(*V);
        pb.source = [=](cplx t, std::span<const cplx>, ComplexField& out) {
            ComplexField scratch;
            const ComplexField& v = lookup->at(t, scratch);
            for (std::size_t f = 0; f < out.points(); ++f) {
                cplx m = v(0, f);
                check_branch(eps, m, f, t);
                out(0, f) = cm * f_minus(eps, m) + (cp - sF) * f_plus(eps, m);
            }
        };
        return pb;
    }
    auto lookup = std::make_shared<SurfaceLookup>(*V);
    ReactionSpec rs;
    rs.dim = grid.dim();
    rs.eval = [=](const PointContext& ctx, std::span<const cplx> X, std::span<cplx> out) {
        ComplexField scratch;
        cplx vf = lookup->at(ctx.t, scratch)(0, ctx.index);
        cplx m = (1.0 - theta) * vf + theta * X[0];
        out[0] = -(lB + lC) * X[0] + cm * f_minus(eps, m) + (cp - sF) * f_plus(eps, m);
    };
    rs.jacobian = [=](const PointContext& ctx, std::span<const cplx> X, std::span<cplx> jac) {
        std::fill(jac.begin(), jac.end(), cplx(0.0));
        ComplexField scratch;
        cplx vf = lookup->at(ctx.t, scratch)(0, ctx.index);
        cplx m = (1.0 - theta) * vf + theta * X[0];
        jac[0] = -(lB + lC) + theta * (cm * f_minus_derivative(eps, m) + (cp - sF) * f_plus_derivative(eps, m));
    };
    pb.reaction = rs;
    return pb;
}

inline SolveResult price_riskfree(const XvaParams& prm, const PayoffSpec& pay, const Grid& grid, double T,
                                  const SolverConfig& cfg, std::span<const cplx> shift = {}) {
    XvaParams rf = prm;
    rf.lambda_B = rf.lambda_C = rf.s_F = 0.0;
    return solve_real(xva_problem(rf, pay, grid, T), 0.0, T, cfg, shift);
}

inline SolveResult price_xva_nonlinear(const XvaParams& prm, const PayoffSpec& pay, const Grid& grid, double T,
                                       const SolverConfig& cfg, std::span<const cplx> shift = {}) {
    XvaParams nl = prm;
    nl.theta_mtm = 1.0;
    return solve_real(xva_problem(nl, pay, grid, T), 0.0, T, cfg, shift);
}

/// Linear model: mark-to-market M = V, so V enters only through the source.
inline SolveResult price_xva_linear(const XvaParams& prm, const PayoffSpec& pay, const SolveResult& V,
                                   const Grid& grid, double T, const SolverConfig& cfg) {
    XvaParams lin = prm;
    lin.theta_mtm = 0.0;
    return solve_real(xva_problem(lin, pay, grid, T, &V), 0.0, T, cfg, V.shift);
}

/// Convex mark-to-market M = (1 - theta) V + theta V_hat.
inline SolveResult price_xva_mtm(const XvaParams& prm, const PayoffSpec& pay, const SolveResult& V,
                                 const Grid& grid, double T, const SolverConfig& cfg) {
    return solve_real(xva_problem(prm, pay, grid, T, &V), 0.0, T, cfg, V.shift);
}


/// Trigonometric interpolation of a field at a real point (exact for band-limited fields).
/// The Nyquist bin is split symmetrically so real data give a real interpolant.
inline cplx fourier_interpolate(const ComplexField& u, std::span<const double> x, int component = 0) {
    const Grid& g = u.grid();
    std::vector<cplx> spec(u.component(component).begin(), u.component(component).end());
    to_fourier(g, spec);
    const double L = g.half_length();
    auto factor = [&](int j, double xa) -> cplx {
        // node(0) = -L, so bin j carries exp(i k_j (x + L))
        if (g.is_nyquist(j)) return std::cos(g.nyquist() * (xa + L));
        return std::exp(I * (g.wavenumber(j) * (xa + L)));
    };
    cplx acc = 0.0;
    for (std::size_t f = 0; f < g.size(); ++f) {
        auto [j0, j1] = g.unflatten(f);
        cplx e = factor(j0, x[0]);
        if (g.dim() == 2) e *= factor(j1, x[1]);
        acc += spec[f] * e;
    }
    return acc / double(g.size());
}

inline cplx fourier_interpolate(const ComplexField& u, std::initializer_list<double> x, int component = 0) {
    std::vector<double> v(x);
    return fourier_interpolate(u, std::span<const double>(v), component);
}

struct XvaAnalyticityReport {
    std::vector<double> dy;
    std::vector<double> cr_residual;      // spatial CR residual at tau = T per stride
    std::vector<double> path_tau;
    std::vector<double> path_spread;      // endpoint spread of two-segment paths at T + i tau
    StripSup strip;
};

/// Shift family, CR residuals, path independence and strip norm for the nonlinear XVA price.
inline XvaAnalyticityReport verify_price_analyticity(const XvaParams& prm, const PayoffSpec& pay, const Grid& grid,
                                                     double T, const std::vector<double>& y_grid,
                                                     const std::vector<double>& tau_grid, const SolverConfig& cfg,
                                                     int jobs = 1) {
    const double kappa0 = pay.admissible_half_width();
    for (double y : y_grid)
        if (!(std::abs(y) < kappa0)) {
            std::ostringstream msg;
            msg << "shift y = " << y << " crosses the smoother branch cut: need |K tan y| < eps, i.e. |y| < "
                << kappa0;
            throw DomainError(msg.str());
        }
    XvaParams nl = prm;
    nl.theta_mtm = 1.0;
    auto pb = xva_problem(nl, pay, grid, T);
    XvaAnalyticityReport rep;
    auto fam = solve_shift_family(pb, y_grid, 0.0, T, cfg, jobs, 0);
    const std::size_t c = fam.index_of(0.0);
    for (std::size_t s = 1; c >= s && c + s < fam.size(); s *= 2) {
        rep.dy.push_back(fam.y(c + s) - fam.y(c));
        rep.cr_residual.push_back(cr_residual_at(fam, c, s, T));
    }
    for (double tau : tau_grid) {
        rep.path_tau.push_back(tau);
        rep.path_spread.push_back(path_independence_check(pb, T, tau, {0.5 * T, T}, cfg, jobs).spread);
    }
    NormParams params = NormParams::for_grid(grid, 4.0, 1);
    rep.strip = strip_sup_over_time(fam, params);
    return rep;
}

}  // namespace parastrip
