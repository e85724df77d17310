#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace parastrip {

using cplx = std::complex<double>;

inline constexpr double pi = 3.14159265358979323846;
inline constexpr cplx I{0.0, 1.0};

/// Multi-index over at most two spatial axes; unused axes stay zero.
using MultiIndex = std::array<int, 2>;

inline int order(const MultiIndex& a) { return a[0] + a[1]; }

inline MultiIndex operator+(const MultiIndex& a, const MultiIndex& b) {
    return {a[0] + b[0], a[1] + b[1]};
}

/// All multi-indices of order <= max_order in `dim` variables, sorted by order.
inline std::vector<MultiIndex> multi_indices_up_to(int dim, int max_order) {
    std::vector<MultiIndex> out;
    for (int k = 0; k <= max_order; ++k) {
        if (dim == 1) {
            out.push_back({k, 0});
        } else {
            for (int a = k; a >= 0; --a) out.push_back({a, k - a});
        }
    }
    return out;
}

/// Invalid user configuration (bad sizes, parameters out of range).
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// A point, time, or value left the region where an object is defined.
class DomainError : public std::domain_error {
public:
    explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// Picard iteration failed to contract.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, double last_ratio)
        : std::runtime_error(what), last_ratio_(last_ratio) {}
    double last_ratio() const { return last_ratio_; }

private:
    double last_ratio_;
};

/// Non-finite values appeared during time stepping.
class InstabilityError : public std::runtime_error {
public:
    explicit InstabilityError(const std::string& what) : std::runtime_error(what) {}
};

inline bool is_finite(cplx z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); }

}  // namespace parastrip
