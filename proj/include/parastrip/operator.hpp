#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "parastrip/core.hpp"
#include "parastrip/grid.hpp"
#include "parastrip/norms.hpp"

namespace parastrip {

/// Closed complex time region [0, T - T'] + sector of half-angle theta0 truncated at Re t < T'.
struct TemporalDomain {
    double angle = pi / 4.0;
    double t_prime = 1.0;
    double horizon = 1.0;

    void validate() const {
        if (!(angle > 0.0 && angle < pi / 2.0))
            throw ConfigError("temporal angle must lie in (0, pi/2)");
        if (!(t_prime > 0.0 && t_prime <= horizon))
            throw ConfigError("temporal domain needs 0 < T' <= T");
    }

    bool contains(cplx t, double tol = 1e-12) const {
        if (t.real() < -tol || t.real() > horizon + tol) return false;
        double reach = std::min(std::max(t.real(), 0.0), t_prime) * std::tan(angle);
        return std::abs(t.imag()) <= reach + tol;
    }
};

/// Writes the M x M coefficient matrix (row-major) at spatial point z and time t.
using CoefficientFn = std::function<void(std::span<const cplx> z, cplx t, std::span<cplx> out)>;

struct CoefficientTerm {
    MultiIndex alpha{0, 0};
    MultiIndex beta{0, 0};
    CoefficientFn eval;
    bool space_dependent = true;
    bool time_dependent = true;
};

/// Scalar (M = 1) coefficient term from a plain function of (z, t).
inline CoefficientTerm scalar_term(MultiIndex alpha, MultiIndex beta,
                                   std::function<cplx(std::span<const cplx>, cplx)> fn,
                                   bool space_dependent = true, bool time_dependent = false) {
    CoefficientTerm t;
    t.alpha = alpha;
    t.beta = beta;
    t.space_dependent = space_dependent;
    t.time_dependent = time_dependent;
    t.eval = [fn = std::move(fn)](std::span<const cplx> z, cplx time, std::span<cplx> out) {
        out[0] = fn(z, time);
    };
    return t;
}

/// Constant M x M coefficient (row-major entries).
inline CoefficientTerm constant_term(MultiIndex alpha, MultiIndex beta, std::vector<cplx> matrix) {
    CoefficientTerm t;
    t.alpha = alpha;
    t.beta = beta;
    t.space_dependent = false;
    t.time_dependent = false;
    t.eval = [m = std::move(matrix)](std::span<const cplx>, cplx, std::span<cplx> out) {
        std::copy(m.begin(), m.end(), out.begin());
    };
    return t;
}

inline CoefficientTerm constant_term(MultiIndex alpha, MultiIndex beta, cplx value) {
    return constant_term(alpha, beta, std::vector<cplx>{value});
}

/// P(x, t, D) u = sum_{|alpha|,|beta| <= m} D^alpha (P^{alpha beta}(x, t) D^beta u),
/// so that the evolution reads du/dt + P u = f.
class DivergenceOperator {
public:
    DivergenceOperator() = default;
    DivergenceOperator(int dim, int order_half, int components, std::vector<CoefficientTerm> terms,
                       StripSpec strip = {}, TemporalDomain temporal = {})
        : dim_(dim), m_(order_half), components_(components), terms_(std::move(terms)),
          strip_(strip), temporal_(temporal) {
        if (dim != 1 && dim != 2) throw ConfigError("operator dim must be 1 or 2");
        if (order_half < 1) throw ConfigError("operator order m must be >= 1");
        if (components < 1) throw ConfigError("operator needs M >= 1");
        temporal_.validate();
        for (const auto& t : terms_) {
            if (order(t.alpha) > m_ || order(t.beta) > m_)
                throw ConfigError("coefficient multi-index exceeds operator order m");
            if (dim == 1 && (t.alpha[1] != 0 || t.beta[1] != 0))
                throw ConfigError("second-axis multi-index used in a 1-D operator");
            if (!t.eval) throw ConfigError("coefficient term without evaluator");
        }
    }

    int dim() const { return dim_; }
    int order_half() const { return m_; }
    int components() const { return components_; }
    const std::vector<CoefficientTerm>& terms() const { return terms_; }
    const StripSpec& strip() const { return strip_; }
    const TemporalDomain& temporal() const { return temporal_; }

    bool spatially_constant() const {
        return std::none_of(terms_.begin(), terms_.end(),
                            [](const auto& t) { return t.space_dependent; });
    }
    bool autonomous() const {
        return std::none_of(terms_.begin(), terms_.end(),
                            [](const auto& t) { return t.time_dependent; });
    }

    void check_point(std::span<const cplx> z, cplx t) const {
        for (int ax = 0; ax < dim_ && ax < int(z.size()); ++ax) {
            if (std::abs(z[ax].imag()) > strip_.half_width + 1e-14) {
                std::ostringstream msg;
                msg << "operator evaluated at Im z = " << z[ax].imag()
                    << " outside its strip of half-width " << strip_.half_width;
                throw DomainError(msg.str());
            }
        }
        if (!temporal_.contains(t)) {
            std::ostringstream msg;
            msg << "operator evaluated at t = " << t << " outside its temporal domain";
            throw DomainError(msg.str());
        }
    }

    /// Coefficient matrix of one term (M x M, row-major).
    std::vector<cplx> coefficient(std::size_t term, std::span<const cplx> z, cplx t) const {
        std::vector<cplx> out(std::size_t(components_) * components_);
        terms_[term].eval(z, t, out);
        return out;
    }

    /// Returns a copy with an extra zeroth-order term c * Id.
    DivergenceOperator with_zeroth_order(cplx c) const {
        DivergenceOperator op(*this);
        std::vector<cplx> mat(std::size_t(components_) * components_, 0.0);
        for (int i = 0; i < components_; ++i) mat[i * components_ + i] = c;
        op.terms_.push_back(constant_term({0, 0}, {0, 0}, std::move(mat)));
        return op;
    }

private:
    int dim_ = 1;
    int m_ = 1;
    int components_ = 1;
    std::vector<CoefficientTerm> terms_;
    StripSpec strip_;
    TemporalDomain temporal_;
};

/// Coefficients of every term sampled on the shifted grid at one time.
struct CoefficientTable {
    cplx t{0.0};
    std::vector<std::vector<cplx>> values;  // per term: point-major, M*M each
};

inline CoefficientTable tabulate(const DivergenceOperator& op, const Grid& grid,
                                 std::span<const cplx> shift, cplx t) {
    const int mm = op.components() * op.components();
    CoefficientTable table;
    table.t = t;
    table.values.resize(op.terms().size());
    std::array<cplx, 2> z{};
    for (std::size_t k = 0; k < op.terms().size(); ++k) {
        const auto& term = op.terms()[k];
        std::size_t count = term.space_dependent ? grid.size() : 1;
        table.values[k].resize(count * mm);
        for (std::size_t f = 0; f < count; ++f) {
            auto p = grid.point(f);
            for (int ax = 0; ax < grid.dim(); ++ax)
                z[ax] = p[ax] + (ax < int(shift.size()) ? shift[ax] : cplx(0.0));
            term.eval(std::span<const cplx>(z.data(), grid.dim()), t,
                      std::span<cplx>(table.values[k].data() + f * mm, mm));
        }
    }
    return table;
}

inline void check_shift(const DivergenceOperator& op, std::span<const cplx> shift, cplx t) {
    std::array<cplx, 2> z{};
    for (int ax = 0; ax < op.dim() && ax < int(shift.size()); ++ax) z[ax] = shift[ax];
    op.check_point(std::span<const cplx>(z.data(), op.dim()), t);
}

/// Applies the operator to a field at time t on the grid shifted by z0.
/// With `dealias_products` the variable-coefficient products are cut to the 2/3 band; off by
/// default since it leaves the top third of the spectrum undamped.
inline ComplexField apply(const DivergenceOperator& op, const ComplexField& field, cplx t,
                          std::span<const cplx> shift, const CoefficientTable* table = nullptr,
                          bool dealias_products = false) {
    check_shift(op, shift, t);
    const Grid& g = field.grid();
    const int M = op.components();
    if (field.components() != M) throw ConfigError("field and operator component counts differ");

    CoefficientTable local;
    if (!table) {
        local = tabulate(op, g, shift, t);
        table = &local;
    }

    std::vector<std::vector<cplx>> spectra(M);
    for (int c = 0; c < M; ++c) {
        auto comp = field.component(c);
        spectra[c].assign(comp.begin(), comp.end());
        to_fourier(g, spectra[c]);
    }

    ComplexField out(g, M);
    std::vector<std::vector<cplx>> acc(M, std::vector<cplx>(g.size(), 0.0));

    // Spatially constant terms act as Fourier multipliers.
    for (std::size_t k = 0; k < op.terms().size(); ++k) {
        const auto& term = op.terms()[k];
        if (term.space_dependent) continue;
        const auto& mat = table->values[k];
        for (std::size_t f = 0; f < g.size(); ++f) {
            auto [j0, j1] = g.unflatten(f);
            double mult = derivative_multiplier(g, term.alpha, j0, j1) *
                          derivative_multiplier(g, term.beta, j0, j1);
            if (mult == 0.0) continue;
            for (int i = 0; i < M; ++i)
                for (int j = 0; j < M; ++j) acc[i][f] += mult * mat[i * M + j] * spectra[j][f];
        }
    }

    // Variable terms: D^alpha (P(x) D^beta u) pseudo-spectrally.
    std::map<MultiIndex, std::vector<std::vector<cplx>>> dbeta;
    std::map<MultiIndex, std::vector<std::vector<cplx>>> walpha;
    for (std::size_t k = 0; k < op.terms().size(); ++k) {
        const auto& term = op.terms()[k];
        if (!term.space_dependent) continue;
        auto it = dbeta.find(term.beta);
        if (it == dbeta.end()) {
            std::vector<std::vector<cplx>> d(M);
            for (int c = 0; c < M; ++c) {
                d[c] = spectra[c];
                apply_derivative_multiplier(g, term.beta, d[c]);
                to_physical(g, d[c]);
            }
            it = dbeta.emplace(term.beta, std::move(d)).first;
        }
        auto& w = walpha[term.alpha];
        if (w.empty()) w.assign(M, std::vector<cplx>(g.size(), 0.0));
        const auto& mat = table->values[k];
        for (std::size_t f = 0; f < g.size(); ++f)
            for (int i = 0; i < M; ++i)
                for (int j = 0; j < M; ++j)
                    w[i][f] += mat[f * M * M + i * M + j] * it->second[j][f];
    }
    for (auto& [alpha, w] : walpha) {
        for (int c = 0; c < M; ++c) {
            to_fourier(g, w[c]);
            if (dealias_products) dealias(g, w[c]);
            apply_derivative_multiplier(g, alpha, w[c]);
            for (std::size_t f = 0; f < g.size(); ++f) acc[c][f] += w[c][f];
        }
    }

    for (int c = 0; c < M; ++c) {
        to_physical(g, acc[c]);
        std::copy(acc[c].begin(), acc[c].end(), out.component(c).begin());
    }
    return out;
}

inline ComplexField apply(const DivergenceOperator& op, const ComplexField& field, cplx t) {
    return apply(op, field, t, std::span<const cplx>{});
}

/// Full symbol sum P^{ab}(z, t) xi^{a+b} as an M x M matrix.
inline Eigen::MatrixXcd symbol(const DivergenceOperator& op, std::span<const cplx> z, cplx t,
                               std::span<const double> xi, bool leading_only = false) {
    op.check_point(z, t);
    const int M = op.components();
    Eigen::MatrixXcd s = Eigen::MatrixXcd::Zero(M, M);
    for (std::size_t k = 0; k < op.terms().size(); ++k) {
        const auto& term = op.terms()[k];
        if (leading_only && (order(term.alpha) != op.order_half() || order(term.beta) != op.order_half()))
            continue;
        auto ab = term.alpha + term.beta;
        double mono = 1.0;
        for (int ax = 0; ax < op.dim(); ++ax) mono *= std::pow(xi[ax], ab[ax]);
        if (mono == 0.0) continue;
        auto mat = op.coefficient(k, z, t);
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j) s(i, j) += mono * mat[i * M + j];
    }
    return s;
}

/// Leading-order symbol sum_{|a|=|b|=m} P^{ab}(z, t) xi^{a+b}.
inline Eigen::MatrixXcd leading_symbol(const DivergenceOperator& op, std::span<const cplx> z, cplx t,
                                       std::span<const double> xi) {
    return symbol(op, z, t, xi, true);
}

/// Diagonal constant-coefficient part used as frozen generator: spatial means of
/// the diagonal coefficients at (shift, t), one multiplier per component and mode.
inline std::vector<cplx> frozen_symbol(const DivergenceOperator& op, const Grid& g,
                                       std::span<const cplx> shift, cplx t,
                                       const CoefficientTable* table = nullptr) {
    CoefficientTable local;
    if (!table) {
        local = tabulate(op, g, shift, t);
        table = &local;
    }
    const int M = op.components();
    std::vector<cplx> out(std::size_t(M) * g.size(), 0.0);
    for (std::size_t k = 0; k < op.terms().size(); ++k) {
        const auto& term = op.terms()[k];
        const auto& vals = table->values[k];
        std::size_t count = vals.size() / (M * M);
        for (int c = 0; c < M; ++c) {
            cplx mean = 0.0;
            for (std::size_t f = 0; f < count; ++f) mean += vals[f * M * M + c * M + c];
            mean /= double(count);
            for (std::size_t f = 0; f < g.size(); ++f) {
                auto [j0, j1] = g.unflatten(f);
                double mult = derivative_multiplier(g, term.alpha, j0, j1) *
                              derivative_multiplier(g, term.beta, j0, j1);
                out[c * g.size() + f] += mean * mult;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ellipticity and Garding diagnostics

/// Theta values for the rotated ellipticity condition: 9 points in [-theta0, theta0].
inline std::vector<double> theta_grid(double theta0, int count = 9) {
    std::vector<double> out(count);
    for (int i = 0; i < count; ++i)
        out[i] = count == 1 ? 0.0 : -theta0 + 2.0 * theta0 * i / (count - 1);
    return out;
}

struct EllipticitySamples {
    std::vector<double> thetas{0.0};
    std::vector<std::vector<cplx>> points;
    std::vector<cplx> times{0.0};
    std::vector<std::vector<double>> xis;
    std::vector<std::vector<cplx>> etas;
};

/// Infimum over samples of Re(e^{i theta} eta^* S(xi) eta) / (|xi|^{2m} |eta|^2)
/// with S the leading symbol. A nonpositive result flags a non-elliptic operator.
inline double estimate_ellipticity_constant(const DivergenceOperator& op, const EllipticitySamples& s) {
    const int M = op.components();
    double best = std::numeric_limits<double>::infinity();
    for (const auto& z : s.points)
        for (auto t : s.times)
            for (const auto& xi : s.xis) {
                double xi2 = 0.0;
                for (double v : xi) xi2 += v * v;
                if (xi2 == 0.0) continue;
                Eigen::MatrixXcd sym = leading_symbol(op, z, t, xi);
                for (const auto& eta : s.etas) {
                    Eigen::VectorXcd e(M);
                    double e2 = 0.0;
                    for (int i = 0; i < M; ++i) {
                        e(i) = eta[i];
                        e2 += std::norm(eta[i]);
                    }
                    if (e2 == 0.0) continue;
                    cplx form = e.dot(sym * e);  // sum_{jk} S_jk eta_k conj(eta_j)
                    for (double th : s.thetas) {
                        double q = std::real(std::exp(I * th) * form) /
                                   (std::pow(xi2, op.order_half()) * e2);
                        best = std::min(best, q);
                    }
                }
            }
    return best;
}

struct GardingSample {
    double form = 0.0;     // Re[e^{i theta} sum int conj(D^a w) P^{ab} D^b w]
    double top = 0.0;      // sum_{|a| = m} ||D^a w||_2^2
    double mass = 0.0;     // ||w||_2^2
};

struct GardingFit {
    double c1 = 0.0;
    double c2 = 0.0;
    double worst_slack = 0.0;
    bool feasible = false;
    std::vector<GardingSample> samples;
};

/// Fits c1 > 0 (largest) and c2 >= 0 (smallest) with form >= c1 top - c2 mass on all samples.
/// Least squares gives the starting pair; c2 is then raised until every sample is satisfied.
inline GardingFit verify_garding(const DivergenceOperator& op, const std::vector<ComplexField>& ensemble,
                                 const std::vector<double>& thetas,
                                 const std::vector<std::vector<double>>& ys, const std::vector<cplx>& times) {
    if (ensemble.empty()) throw ConfigError("Garding check needs a nonempty ensemble");
    const int M = op.components();
    GardingFit fit;
    std::vector<std::vector<double>> shifts = ys.empty() ? std::vector<std::vector<double>>{{}} : ys;
    for (const auto& w : ensemble) {
        if (w.max_abs() == 0.0) throw ConfigError("Garding ensemble must exclude w = 0");
        const Grid& g = w.grid();
        std::map<MultiIndex, ComplexField> derivs;
        for (const auto& alpha : multi_indices_up_to(g.dim(), op.order_half()))
            derivs.emplace(alpha, spectral_derivative(w, alpha));
        double top = 0.0;
        for (const auto& [alpha, d] : derivs)
            if (order(alpha) == op.order_half()) top += std::pow(l2_norm(d), 2);
        double mass = std::pow(l2_norm(w), 2);
        for (const auto& y : shifts) {
            std::vector<cplx> shift(g.dim(), 0.0);
            for (std::size_t ax = 0; ax < y.size() && ax < shift.size(); ++ax) shift[ax] = cplx(0.0, y[ax]);
            for (auto t : times) {
                auto table = tabulate(op, g, shift, t);
                cplx raw = 0.0;
                for (std::size_t k = 0; k < op.terms().size(); ++k) {
                    const auto& term = op.terms()[k];
                    const auto& da = derivs.at(term.alpha);
                    const auto& db = derivs.at(term.beta);
                    const auto& vals = table.values[k];
                    for (std::size_t f = 0; f < g.size(); ++f) {
                        std::size_t base = term.space_dependent ? f * M * M : 0;
                        for (int i = 0; i < M; ++i)
                            for (int j = 0; j < M; ++j)
                                raw += std::conj(da(i, f)) * vals[base + i * M + j] * db(j, f);
                    }
                }
                raw *= g.cell_volume();
                for (double th : thetas)
                    fit.samples.push_back({std::real(std::exp(I * th) * raw), top, mass});
            }
        }
    }

    // Normal equations for form ~ c1 * top - c2 * mass.
    double saa = 0, sab = 0, sbb = 0, sqa = 0, sqb = 0;
    for (const auto& s : fit.samples) {
        saa += s.top * s.top;
        sab += s.top * s.mass;
        sbb += s.mass * s.mass;
        sqa += s.form * s.top;
        sqb += s.form * s.mass;
    }
    double det = saa * sbb - sab * sab;
    double c1, c2;
    if (std::abs(det) > 1e-12 * saa * sbb) {
        c1 = (sqa * sbb - sqb * sab) / det;
        c2 = -(saa * sqb - sab * sqa) / det;
    } else {
        c1 = sqa / saa;
        c2 = 0.0;
    }
    c2 = std::max(c2, 0.0);
    double raise = 0.0;
    for (const auto& s : fit.samples)
        raise = std::max(raise, (c1 * s.top - c2 * s.mass - s.form) / s.mass);
    c2 += raise;
    fit.c1 = c1;
    fit.c2 = c2;
    fit.worst_slack = std::numeric_limits<double>::infinity();
    for (const auto& s : fit.samples)
        fit.worst_slack = std::min(fit.worst_slack, s.form - c1 * s.top + c2 * s.mass);
    fit.feasible = c1 > 0.0;
    return fit;
}

/// Spot check of coefficient holomorphy: max |(d_x + i d_y)/2 P| over a lattice of
/// complex points and |(d_s + i d_tau)/2 P| in time, by central differences.
inline double coefficient_cr_residual(const DivergenceOperator& op,
                                      const std::vector<std::vector<cplx>>& points,
                                      const std::vector<cplx>& times, double h = 1e-5) {
    double worst = 0.0;
    const std::size_t mm = std::size_t(op.components()) * op.components();
    for (std::size_t k = 0; k < op.terms().size(); ++k) {
        for (const auto& z : points)
            for (auto t : times) {
                auto eval = [&](std::vector<cplx> zz, cplx tt) { return op.coefficient(k, zz, tt); };
                for (int ax = 0; ax < op.dim(); ++ax) {
                    auto zp = z, zm = z, zi = z, zj = z;
                    zp[ax] += h;
                    zm[ax] -= h;
                    zi[ax] += I * h;
                    zj[ax] -= I * h;
                    auto a = eval(zp, t), b = eval(zm, t), c = eval(zi, t), d = eval(zj, t);
                    for (std::size_t e = 0; e < mm; ++e) {
                        cplx dx = (a[e] - b[e]) / (2 * h);
                        cplx dy = (c[e] - d[e]) / (2 * h);
                        worst = std::max(worst, std::abs(0.5 * (dx + I * dy)));
                    }
                }
                if (op.terms()[k].time_dependent) {
                    auto a = eval(z, t + h), b = eval(z, t - h), c = eval(z, t + I * h), d = eval(z, t - I * h);
                    for (std::size_t e = 0; e < mm; ++e) {
                        cplx ds = (a[e] - b[e]) / (2 * h);
                        cplx dt = (c[e] - d[e]) / (2 * h);
                        worst = std::max(worst, std::abs(0.5 * (ds + I * dt)));
                    }
                }
            }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Common operators

/// -Laplacian (P^{e_i e_i} = 1), scalar.
inline DivergenceOperator laplacian(int dim, TemporalDomain temporal = {}, StripSpec strip = {}) {
    std::vector<CoefficientTerm> terms;
    terms.push_back(constant_term({1, 0}, {1, 0}, 1.0));
    if (dim == 2) terms.push_back(constant_term({0, 1}, {0, 1}, 1.0));
    return DivergenceOperator(dim, 1, 1, std::move(terms), strip, temporal);
}

/// 1-D divergence-form diffusion -(a(x) u')' with a holomorphic coefficient a.
inline DivergenceOperator variable_diffusion_1d(std::function<cplx(cplx)> a, TemporalDomain temporal = {},
                                                StripSpec strip = {}) {
    std::vector<CoefficientTerm> terms;
    terms.push_back(scalar_term({1, 0}, {1, 0},
                                [a = std::move(a)](std::span<const cplx> z, cplx) { return a(z[0]); }));
    return DivergenceOperator(1, 1, 1, std::move(terms), strip, temporal);
}

}  // namespace parastrip
