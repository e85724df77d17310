#include <catch_amalgamated.hpp>

#include <random>

#include "parastrip/grid.hpp"

using namespace parastrip;
using Catch::Approx;

TEST_CASE("make_grid geometry") {
    auto g = make_grid(1, 10.0, 16);
    CHECK(g.size() == 16);
    CHECK(g.spacing() == Approx(1.25));
    CHECK(g.node(0) == Approx(-10.0));
    CHECK(g.node(15) == Approx(10.0 - 1.25));

    auto g2 = make_grid(2, 5.0, 8);
    CHECK(g2.size() == 64);
}

TEST_CASE("make_grid rejects bad input") {
    CHECK_THROWS_AS(make_grid(1, 10.0, 12), ConfigError);
    CHECK_THROWS_AS(make_grid(3, 10.0, 16), ConfigError);
    CHECK_THROWS_AS(make_grid(1, 0.0, 16), ConfigError);
    CHECK_THROWS_AS(make_grid(1, -1.0, 16), ConfigError);
    CHECK_THROWS_AS(make_grid(1, 1.0, 4), ConfigError);
}

TEST_CASE("spectral derivative of single modes") {
    const double L = 10.0;
    auto g = make_grid(1, L, 64);
    const double k = pi / L * 4;
    auto s = sample(g, 1, [&](std::span<const double> x, std::span<cplx> o) { o[0] = std::sin(k * x[0]); });
    auto d = spectral_derivative(s, {1, 0});
    double err = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j)
        err = std::max(err, std::abs(d(0, j) - k / I * std::cos(k * g.node(int(j)))));
    CHECK(err < 1e-12);

    auto id = spectral_derivative(s, {0, 0});
    CHECK(sup_distance(id, s) == 0.0);

    auto e = sample(g, 1, [&](std::span<const double> x, std::span<cplx> o) { o[0] = std::exp(I * k * x[0]); });
    auto d2 = spectral_derivative(e, {2, 0});
    double err2 = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) err2 = std::max(err2, std::abs(d2(0, j) - k * k * e(0, j)));
    CHECK(err2 < 1e-10);

    auto px = partial_derivative(s, {1, 0});
    double err3 = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j)
        err3 = std::max(err3, std::abs(px(0, j) - k * std::cos(k * g.node(int(j)))));
    CHECK(err3 < 1e-12);
}

TEST_CASE("spectral derivatives compose") {
    auto g = make_grid(2, 4.0, 32);
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd;
    // band-limited random field: a few low modes
    ComplexField u(g, 1);
    for (int a = -3; a <= 3; ++a)
        for (int b = -3; b <= 3; ++b) {
            cplx c(nd(rng), nd(rng));
            for (std::size_t f = 0; f < g.size(); ++f) {
                auto p = g.point(f);
                u(0, f) += c * std::exp(I * (pi / 4.0) * (a * p[0] + b * p[1]));
            }
        }
    auto lhs = spectral_derivative(spectral_derivative(u, {1, 0}), {1, 1});
    auto rhs = spectral_derivative(u, {2, 1});
    CHECK(sup_distance(lhs, rhs) / rhs.max_abs() < 1e-10);
}

TEST_CASE("Parseval") {
    auto g = make_grid(1, 3.0, 128);
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    ComplexField u(g, 1);
    for (auto& v : u.values()) v = cplx(nd(rng), nd(rng));
    double phys = 0.0;
    for (auto v : u.values()) phys += std::norm(v);
    auto spec = u.values();
    to_fourier(g, spec);
    double four = 0.0;
    for (auto v : spec) four += std::norm(v);
    CHECK(four / g.size() == Approx(phys).epsilon(1e-12));
}

TEST_CASE("eval_hermite values") {
    auto h = HermiteData::gaussian(1);
    std::vector<cplx> z0{0.0};
    CHECK(std::abs(eval_hermite(h, z0)[0] - 1.0) < 1e-15);
    std::vector<cplx> zi{I};
    CHECK(std::abs(eval_hermite(h, zi)[0] - std::exp(0.5)) < 1e-12);

    // |h(x + iy)| <= e^{y^2/2} e^{-x^2/2} for P = 1
    for (double x = -3; x <= 3; x += 0.25)
        for (double y = -1; y <= 1; y += 0.25) {
            std::vector<cplx> z{cplx(x, y)};
            CHECK(std::abs(eval_hermite(h, z)[0]) <= std::exp(0.5) * std::exp(-x * x / 2) * (1 + 1e-12));
        }

    std::vector<cplx> huge{cplx(0.0, 1e3)};
    CHECK_THROWS_AS(eval_hermite(h, huge), DomainError);

    HermiteData bad;
    bad.dim = 1;
    bad.components = {{Monomial{{1, 0}, 0.0}}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("sample_on_shifted_grid") {
    auto g = make_grid(1, 10.0, 64);
    auto data = InitialData::from_hermite(HermiteData::gaussian(1));

    std::vector<cplx> zero{0.0};
    auto plain = sample(g, 1, [](std::span<const double> x, std::span<cplx> o) { o[0] = std::exp(-x[0] * x[0] / 2); });
    CHECK(sup_distance(sample_on_shifted_grid(data, g, zero), plain) < 1e-15);

    std::vector<cplx> up{cplx(0.0, 0.5)};
    auto shifted = sample_on_shifted_grid(data, g, up);
    double err = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
        cplx z = g.node(int(j)) + up[0];
        err = std::max(err, std::abs(shifted(0, j) - std::exp(-z * z / 2.0)));
    }
    CHECK(err < 1e-14);

    std::vector<cplx> lat{cplx(3 * g.spacing(), 0.0)};
    auto rot = sample_on_shifted_grid(data, g, lat);
    for (int j = 0; j < g.n(); ++j) CHECK(rot(0, j) == plain(0, (j + 3) % g.n()));

    data.strip.half_width = 0.4;
    CHECK_THROWS_AS(sample_on_shifted_grid(data, g, up), DomainError);
}

TEST_CASE("strip membership and field invariants") {
    StripSpec s{0.5};
    std::vector<cplx> in{cplx(3.0, 0.49)}, out{cplx(0.0, 0.5)};
    CHECK(s.contains(in));
    CHECK_FALSE(s.contains(out));
    auto g = make_grid(1, 1.0, 8);
    CHECK_THROWS_AS(ComplexField(g, 1, std::vector<cplx>(7)), ConfigError);
    ComplexField f(g, 2);
    CHECK(f.size() == 16);
    CHECK(f.all_finite());
    f(1, 3) = cplx(std::nan(""), 0.0);
    CHECK_FALSE(f.all_finite());
}

TEST_CASE("dealias band") {
    auto g = make_grid(1, 1.0, 32);
    int inside = 0;
    for (std::size_t f = 0; f < g.size(); ++f) inside += inside_dealias_band(g, f);
    CHECK(inside == 2 * (32 / 3) + 1);
}
