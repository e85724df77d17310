#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "parastrip/core.hpp"
#include "parastrip/fft.hpp"

namespace parastrip {

/// Periodic box [-L, L)^N sampled with n points per axis (N in {1, 2}).
class Grid {
public:
    Grid() = default;

    int dim() const { return dim_; }
    double half_length() const { return half_length_; }
    int n() const { return n_; }
    double spacing() const { return 2.0 * half_length_ / n_; }
    std::size_t size() const { return dim_ == 1 ? std::size_t(n_) : std::size_t(n_) * n_; }
    /// Lebesgue measure of one cell.
    double cell_volume() const { return std::pow(spacing(), dim_); }
    double volume() const { return std::pow(2.0 * half_length_, dim_); }

    double node(int j) const { return -half_length_ + j * spacing(); }

    /// Axis indices of a flat (row-major) index.
    std::array<int, 2> unflatten(std::size_t flat) const {
        if (dim_ == 1) return {int(flat), 0};
        return {int(flat / n_), int(flat % n_)};
    }
    std::size_t flatten(int j0, int j1) const {
        return dim_ == 1 ? std::size_t(j0) : std::size_t(j0) * n_ + j1;
    }

    std::array<double, 2> point(std::size_t flat) const {
        auto [a, b] = unflatten(flat);
        return {node(a), dim_ == 2 ? node(b) : 0.0};
    }

    /// Angular wavenumber of FFT bin j (standard FFT ordering).
    double wavenumber(int j) const {
        int s = j <= n_ / 2 ? j : j - n_;
        return pi * s / half_length_;
    }
    bool is_nyquist(int j) const { return j == n_ / 2; }
    double nyquist() const { return pi * (n_ / 2) / half_length_; }

    bool operator==(const Grid& o) const {
        return dim_ == o.dim_ && n_ == o.n_ && half_length_ == o.half_length_;
    }

    friend Grid make_grid(int dim, double half_length, int points_per_axis);

private:
    int dim_ = 1;
    double half_length_ = 1.0;
    int n_ = 8;
};

inline Grid make_grid(int dim, double half_length, int points_per_axis) {
    if (dim != 1 && dim != 2)
        throw ConfigError("grid.dim must be 1 or 2, got " + std::to_string(dim));
    if (!(half_length > 0.0) || !std::isfinite(half_length))
        throw ConfigError("grid.half_length must be positive");
    int n = points_per_axis;
    if (n < 8 || (n & (n - 1)) != 0)
        throw ConfigError("grid.points_per_axis must be a power of two >= 8, got " +
                          std::to_string(n));
    Grid g;
    g.dim_ = dim;
    g.half_length_ = half_length;
    g.n_ = n;
    return g;
}

/// Holomorphy strip {x + iy : |y|_inf < r}; r = inf for entire data.
struct StripSpec {
    double half_width = std::numeric_limits<double>::infinity();

    bool contains(std::span<const cplx> z) const {
        for (auto v : z)
            if (!(std::abs(v.imag()) < half_width)) return false;
        return true;
    }
};

/// M-component complex field on a grid, stored component-major.
class ComplexField {
public:
    ComplexField() = default;
    explicit ComplexField(Grid grid, int components = 1)
        : grid_(grid), components_(components), values_(grid.size() * components) {
        if (components < 1) throw ConfigError("field needs at least one component");
    }
    ComplexField(Grid grid, int components, std::vector<cplx> values)
        : grid_(grid), components_(components), values_(std::move(values)) {
        if (components < 1) throw ConfigError("field needs at least one component");
        if (values_.size() != grid.size() * components)
            throw ConfigError("field value count does not match M * n^N");
    }

    const Grid& grid() const { return grid_; }
    int components() const { return components_; }
    std::size_t points() const { return grid_.size(); }
    std::size_t size() const { return values_.size(); }

    std::span<cplx> component(int c) { return {values_.data() + c * points(), points()}; }
    std::span<const cplx> component(int c) const {
        return {values_.data() + c * points(), points()};
    }
    cplx& operator()(int c, std::size_t i) { return values_[c * points() + i]; }
    cplx operator()(int c, std::size_t i) const { return values_[c * points() + i]; }

    std::vector<cplx>& values() { return values_; }
    const std::vector<cplx>& values() const { return values_; }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](cplx v) { return is_finite(v); });
    }

    ComplexField& operator+=(const ComplexField& o) {
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
        return *this;
    }
    ComplexField& operator-=(const ComplexField& o) {
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
        return *this;
    }
    ComplexField& operator*=(cplx s) {
        for (auto& v : values_) v *= s;
        return *this;
    }
    friend ComplexField operator+(ComplexField a, const ComplexField& b) { return a += b; }
    friend ComplexField operator-(ComplexField a, const ComplexField& b) { return a -= b; }
    friend ComplexField operator*(cplx s, ComplexField a) { return a *= s; }

    ComplexField conj() const {
        ComplexField out(*this);
        for (auto& v : out.values_) v = std::conj(v);
        return out;
    }

    double max_abs() const {
        double m = 0.0;
        for (auto v : values_) m = std::max(m, std::abs(v));
        return m;
    }

private:
    Grid grid_;
    int components_ = 1;
    std::vector<cplx> values_;
};

inline double sup_distance(const ComplexField& a, const ComplexField& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Spectral helpers

inline void to_fourier(const Grid& g, std::span<cplx> data) {
    fft::transform(g.dim(), g.n(), data, fft::Direction::forward);
}
inline void to_physical(const Grid& g, std::span<cplx> data) {
    fft::transform(g.dim(), g.n(), data, fft::Direction::backward);
}

/// Fourier multiplier of D^alpha = i^{-|alpha|} d^alpha at bin (j0, j1): xi^alpha.
/// Odd powers vanish on the Nyquist bin so that real fields stay real.
inline double derivative_multiplier(const Grid& g, const MultiIndex& alpha, int j0, int j1) {
    double m = 1.0;
    const int js[2] = {j0, j1};
    for (int ax = 0; ax < g.dim(); ++ax) {
        if (alpha[ax] == 0) continue;
        if (g.is_nyquist(js[ax]) && alpha[ax] % 2 == 1) return 0.0;
        m *= std::pow(g.wavenumber(js[ax]), alpha[ax]);
    }
    return m;
}

/// Multiplies Fourier coefficients in place by xi^alpha.
inline void apply_derivative_multiplier(const Grid& g, const MultiIndex& alpha,
                                        std::span<cplx> spectrum) {
    if (order(alpha) == 0) return;
    for (std::size_t f = 0; f < spectrum.size(); ++f) {
        auto [j0, j1] = g.unflatten(f);
        spectrum[f] *= derivative_multiplier(g, alpha, j0, j1);
    }
}

/// 2/3-rule mask: true when every axis index lies in the lower two thirds of the band.
inline bool inside_dealias_band(const Grid& g, std::size_t flat) {
    auto [j0, j1] = g.unflatten(flat);
    int cutoff = g.n() / 3;
    auto ok = [&](int j) {
        int s = j <= g.n() / 2 ? j : j - g.n();
        return std::abs(s) <= cutoff;
    };
    return ok(j0) && (g.dim() == 1 || ok(j1));
}

inline void dealias(const Grid& g, std::span<cplx> spectrum) {
    for (std::size_t f = 0; f < spectrum.size(); ++f)
        if (!inside_dealias_band(g, f)) spectrum[f] = 0.0;
}

/// D_x^alpha u = i^{-|alpha|} d^|alpha| u / dx^alpha, computed with the FFT.
inline ComplexField spectral_derivative(const ComplexField& field, const MultiIndex& alpha) {
    ComplexField out(field);
    if (order(alpha) == 0) return out;
    const Grid& g = field.grid();
    for (int c = 0; c < field.components(); ++c) {
        auto comp = out.component(c);
        to_fourier(g, comp);
        apply_derivative_multiplier(g, alpha, comp);
        to_physical(g, comp);
    }
    return out;
}

/// Plain partial derivative d^beta u (no i^{-|beta|} factor), used for m-jets.
inline ComplexField partial_derivative(const ComplexField& field, const MultiIndex& beta) {
    ComplexField out = spectral_derivative(field, beta);
    if (order(beta) > 0) out *= std::pow(I, order(beta));
    return out;
}

// ---------------------------------------------------------------------------
// Holomorphic initial data

/// One monomial c * z1^e1 * z2^e2.
struct Monomial {
    MultiIndex exponents{0, 0};
    cplx coeff{0.0, 0.0};
};

/// h(z) = P(z) exp(-1/2 sum z_i^2), one polynomial per component.
struct HermiteData {
    int dim = 1;
    std::vector<std::vector<Monomial>> components;

    int num_components() const { return int(components.size()); }

    void validate() const {
        if (dim != 1 && dim != 2) throw ConfigError("HermiteData.dim must be 1 or 2");
        if (components.empty()) throw ConfigError("HermiteData needs at least one component");
        bool nonzero = false;
        for (const auto& poly : components)
            for (const auto& mono : poly) {
                if (mono.exponents[0] < 0 || mono.exponents[1] < 0)
                    throw ConfigError("HermiteData exponents must be nonnegative");
                if (dim == 1 && mono.exponents[1] != 0)
                    throw ConfigError("HermiteData: second exponent used with dim = 1");
                if (mono.coeff != cplx(0.0)) nonzero = true;
            }
        if (!nonzero) throw ConfigError("HermiteData needs a nonzero coefficient");
    }

    /// P == 1 in every component: a plain Gaussian.
    static HermiteData gaussian(int dim, int components = 1) {
        HermiteData h;
        h.dim = dim;
        h.components.assign(components, {Monomial{{0, 0}, 1.0}});
        return h;
    }
};

inline std::vector<cplx> eval_hermite(const HermiteData& h, std::span<const cplx> z) {
    cplx sq = 0.0;
    for (int i = 0; i < h.dim; ++i) sq += z[i] * z[i];
    cplx envelope = std::exp(-0.5 * sq);
    std::vector<cplx> out(h.components.size());
    for (std::size_t c = 0; c < h.components.size(); ++c) {
        cplx poly = 0.0;
        for (const auto& mono : h.components[c]) {
            cplx term = mono.coeff;
            for (int i = 0; i < h.dim; ++i) term *= std::pow(z[i], mono.exponents[i]);
            poly += term;
        }
        out[c] = poly * envelope;
        if (!is_finite(out[c])) {
            std::ostringstream msg;
            msg << "eval_hermite overflow at z = (" << z[0];
            if (h.dim == 2) msg << ", " << z[1];
            msg << "); |Im z| too large for exp(-z^2/2)";
            throw DomainError(msg.str());
        }
    }
    return out;
}

/// Initial data u0 given by a closure that is holomorphic on `strip`.
struct InitialData {
    int dim = 1;
    int components = 1;
    StripSpec strip;
    std::function<void(std::span<const cplx> z, std::span<cplx> out)> eval;

    static InitialData from_hermite(HermiteData h) {
        h.validate();
        InitialData d;
        d.dim = h.dim;
        d.components = h.num_components();
        d.eval = [h = std::move(h)](std::span<const cplx> z, std::span<cplx> out) {
            auto v = eval_hermite(h, z);
            std::copy(v.begin(), v.end(), out.begin());
        };
        return d;
    }

    static InitialData zero(int dim, int components = 1) {
        InitialData d;
        d.dim = dim;
        d.components = components;
        d.eval = [](std::span<const cplx>, std::span<cplx> out) {
            std::fill(out.begin(), out.end(), cplx(0.0));
        };
        return d;
    }
};

/// Samples u0(x_j + z0) on the grid. Real parts wrap periodically into [-L, L);
/// a real shift that is a lattice multiple becomes an exact index rotation.
inline ComplexField sample_on_shifted_grid(const InitialData& data, const Grid& grid,
                                           std::span<const cplx> shift) {
    if (data.dim != grid.dim()) throw ConfigError("initial data and grid dimensions differ");
    std::array<cplx, 2> z0{0.0, 0.0};
    for (int ax = 0; ax < grid.dim() && ax < int(shift.size()); ++ax) z0[ax] = shift[ax];
    if (!data.strip.contains(std::span<const cplx>(z0.data(), grid.dim()))) {
        std::ostringstream msg;
        msg << "shift imaginary part outside the data strip of half-width "
            << data.strip.half_width;
        throw DomainError(msg.str());
    }
    const double h = grid.spacing();
    const double len = 2.0 * grid.half_length();
    std::array<bool, 2> lattice{};
    std::array<long, 2> steps{};
    for (int ax = 0; ax < grid.dim(); ++ax) {
        double q = z0[ax].real() / h;
        long r = std::lround(q);
        lattice[ax] = std::abs(q - double(r)) < 1e-12;
        steps[ax] = r;
    }
    auto coordinate = [&](int ax, int j) {
        if (lattice[ax]) {
            long idx = ((j + steps[ax]) % grid.n() + grid.n()) % grid.n();
            return grid.node(int(idx));
        }
        double x = grid.node(j) + z0[ax].real();
        x = std::fmod(x + grid.half_length(), len);
        if (x < 0) x += len;
        return x - grid.half_length();
    };

    ComplexField out(grid, data.components);
    std::vector<cplx> value(data.components);
    std::array<cplx, 2> z{};
    for (std::size_t f = 0; f < grid.size(); ++f) {
        auto [j0, j1] = grid.unflatten(f);
        z[0] = cplx(coordinate(0, j0), z0[0].imag());
        if (grid.dim() == 2) z[1] = cplx(coordinate(1, j1), z0[1].imag());
        data.eval(std::span<const cplx>(z.data(), grid.dim()), value);
        for (int c = 0; c < data.components; ++c) out(c, f) = value[c];
    }
    return out;
}

/// Samples an arbitrary pointwise closure of the grid coordinate (no shift logic).
inline ComplexField sample(const Grid& grid, int components,
                           const std::function<void(std::span<const double>, std::span<cplx>)>& fn) {
    ComplexField out(grid, components);
    std::vector<cplx> value(components);
    for (std::size_t f = 0; f < grid.size(); ++f) {
        auto p = grid.point(f);
        fn(std::span<const double>(p.data(), grid.dim()), value);
        for (int c = 0; c < components; ++c) out(c, f) = value[c];
    }
    return out;
}

}  // namespace parastrip
