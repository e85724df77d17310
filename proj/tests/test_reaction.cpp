#include <catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "parastrip/reaction.hpp"

using namespace parastrip;
using Catch::Approx;

TEST_CASE("smoother point values") {
    CHECK(f_plus(0.3, 0.0) == cplx(0.0));
    CHECK(f_minus(0.3, 0.0) == cplx(0.0));
    CHECK(std::abs(f_plus(1.0, 1.0) - 0.75) < 1e-15);
    CHECK(std::abs(f_plus(1.0, -1e6) - (-1.0 / pi)) < 2e-6);
    CHECK(std::abs(f_minus(1.0, 1e6) - (1.0 / pi)) < 2e-6);
    // real restriction is real
    for (double v : {-3.0, -0.2, 0.5, 7.0}) CHECK(std::abs(f_plus(0.1, v).imag()) < 1e-15);
}

TEST_CASE("smoother branch domain") {
    CHECK(in_branch_domain(1.0, cplx(0.0, 0.5)));
    CHECK_FALSE(in_branch_domain(1.0, cplx(0.0, 1.5)));
    CHECK_FALSE(in_branch_domain(1.0, cplx(0.0, -1.0)));
    CHECK(in_branch_domain(0.01, 1.5));
    CHECK_THROWS_AS(f_plus(1.0, cplx(0.0, 1.5)), DomainError);
    CHECK_THROWS_AS(f_minus(1.0, cplx(0.0, -2.0)), DomainError);
    CHECK_THROWS_AS(f_plus(1.0, cplx(1e-12, 1.0)), DomainError);
    CHECK_NOTHROW(f_plus(1.0, cplx(1e-3, 1.5)));
    CHECK_THROWS_AS(SmootherParams{1.5}.validate(), ConfigError);
}

TEST_CASE("smoother identity") {
    std::vector<cplx> zero{0.0};
    CHECK(smoother_identity_check(0.5, zero) == 0.0);
    std::vector<cplx> one{cplx(0.3, 0.1)};
    CHECK(smoother_identity_check(1.0, one) < 1e-14);
    std::vector<cplx> grid;
    const double eps = 0.2;
    for (int i = 0; i < 40; ++i)
        for (int j = 0; j < 25; ++j) grid.push_back(cplx(-5.0 + 10.0 * i / 39, -eps / 2 + eps * j / 24));
    CHECK(grid.size() == 1000);
    CHECK(smoother_identity_check(eps, grid) < 1e-13);
}

TEST_CASE("smoother reflection symmetry") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        cplx z(u(rng), u(rng));
        if (!in_branch_domain(0.5, z) || !in_branch_domain(0.5, -z)) continue;
        worst = std::max(worst, std::abs(f_minus(0.5, z) + f_plus(0.5, -z)));
    }
    CHECK(worst < 1e-13);
}

TEST_CASE("smoother converges pointwise to the positive part") {
    for (double v : {-5.0, -2.0, -1.0, 1.0, 1.5, 4.0}) {
        double prev = std::numeric_limits<double>::infinity();
        for (double eps : {1.0, 0.1, 0.01}) {
            double err = std::abs(f_plus(eps, v).real() - std::max(v, 0.0));
            CHECK(err < prev);
            CHECK(err < eps);
            prev = err;
        }
    }
}

TEST_CASE("smoother is holomorphic off the cuts") {
    const double eps = 0.5, h = 1e-6;
    double worst = 0.0;
    for (double x = -2.0; x <= 2.0; x += 0.25)
        for (double y = -0.4; y <= 0.4; y += 0.1) {
            cplx z(x, y);
            cplx dx = (f_plus(eps, z + h) - f_plus(eps, z - h)) / (2 * h);
            cplx dy = (f_plus(eps, z + I * h) - f_plus(eps, z - I * h)) / (2 * h);
            worst = std::max(worst, std::abs(0.5 * (dx + I * dy)));
            CHECK(std::abs(dx - f_plus_derivative(eps, z)) < 1e-8);
        }
    CHECK(worst < 1e-8);
}

TEST_CASE("jet layout") {
    ReactionSpec r = zero_reaction(2, 2, 3);
    auto idx = r.jet_indices();
    CHECK(idx.size() == 1 + 2 + 4);
    CHECK(r.jet_size() == 21);
    CHECK(idx[0] == MultiIndex{0, 0});
    CHECK(idx[1] == MultiIndex{1, 0});
    CHECK(idx[2] == MultiIndex{0, 1});
    CHECK(idx[4] == MultiIndex{1, 1});
    CHECK(idx[5] == MultiIndex{1, 1});
}

TEST_CASE("nemytskii examples") {
    auto g = make_grid(1, 4.0, 32);
    auto u = sample(g, 1, [](std::span<const double> x, std::span<cplx> o) { o[0] = std::exp(-x[0] * x[0]) * cplx(1, 0.3); });
    std::vector<cplx> shift{0.0};
    CHECK(nemytskii(zero_reaction(1), u, shift, 0.0).max_abs() == 0.0);
    CHECK(sup_distance(nemytskii(identity_reaction(1), u, shift, 0.0), u) == 0.0);

    // gradient reaction f = u u_x reads the first-order jet slot
    ReactionSpec grad;
    grad.dim = 1;
    grad.max_jet_order = 1;
    grad.eval = [](const PointContext&, std::span<const cplx> X, std::span<cplx> o) { o[0] = X[0] * X[1]; };
    auto out = nemytskii(grad, u, shift, 0.0);
    auto ux = partial_derivative(u, {1, 0});
    double err = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) err = std::max(err, std::abs(out(0, j) - u(0, j) * ux(0, j)));
    CHECK(err < 1e-12);

    // XVA-type reaction at a constant field
    const double eps = 0.01, lB = 0.02, lC = 0.03, RB = 0.4, RC = 0.4, sF = 0.01;
    auto xva = pointwise_reaction(
        1,
        [=](cplx v) {
            return -(1 - RB) * lB * f_minus(eps, v) - (1 - RC) * lC * f_plus(eps, v) - sF * f_plus(eps, v);
        },
        nullptr);
    ComplexField one(g, 1);
    for (auto& v : one.values()) v = 1.0;
    cplx expect = -(1 - 0.4) * 0.02 * f_minus(0.01, 1.0) - (1 - 0.4) * 0.03 * f_plus(0.01, 1.0) - 0.01 * f_plus(0.01, 1.0);
    auto val = nemytskii(xva, one, shift, 0.0);
    for (auto v : val.values()) CHECK(std::abs(v - expect) < 1e-15);
}

TEST_CASE("nemytskii reports the offending grid point") {
    auto g = make_grid(1, 4.0, 16);
    ReactionSpec r = pointwise_reaction(1, [](cplx v) { return f_plus(0.1, v); }, nullptr);
    r.in_domain = [](std::span<const cplx> X) { return in_branch_domain(0.1, X[0]); };
    ComplexField u(g, 1);
    u(0, 5) = cplx(0.0, 0.5);
    std::vector<cplx> shift{0.0};
    try {
        nemytskii(r, u, shift, 0.0);
        FAIL("expected a domain error");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).find("grid point 5") != std::string::npos);
    }
}

TEST_CASE("jet Lipschitz estimates") {
    JetBox box{{-1.0}, {1.0}};
    CHECK(jet_lipschitz_estimate(identity_reaction(1), box, 50) == Approx(1.0));
    ReactionSpec c = pointwise_reaction(1, [](cplx) { return cplx(3.0); }, nullptr);
    CHECK(jet_lipschitz_estimate(c, box, 50) == 0.0);
    CHECK(jet_lipschitz_estimate(zero_reaction(1), box, 50) == 0.0);

    // analytic smoother without a supplied jacobian: complex-step default
    ReactionSpec fp = pointwise_reaction(1, [](cplx v) { return f_plus(1.0, v); }, nullptr);
    double est = jet_lipschitz_estimate(fp, box, 200, 3);
    CHECK(est == Approx(0.75 + 1.0 / (2 * pi)).epsilon(1e-10));
    CHECK(est == Approx(oracle::smoother_slope_sup(1.0)).epsilon(1e-8));
}

TEST_CASE("nemytskii Lipschitz bound on random pairs") {
    auto g = make_grid(1, 4.0, 64);
    const double eps = 0.3;
    ReactionSpec fp = pointwise_reaction(1, [eps](cplx v) { return f_plus(eps, v); }, nullptr);
    JetBox box{{-2.0}, {2.0}};
    double L = jet_lipschitz_estimate(fp, box, 400, 5);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> nd;
    std::vector<cplx> shift{0.0};
    for (int t = 0; t < 20; ++t) {
        ComplexField a(g, 1), b(g, 1);
        for (std::size_t j = 0; j < g.size(); ++j) {
            a(0, j) = std::clamp(nd(rng), -2.0, 2.0);
            b(0, j) = std::clamp(nd(rng), -2.0, 2.0);
        }
        auto Fa = nemytskii(fp, a, shift, 0.0), Fb = nemytskii(fp, b, shift, 0.0);
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) {
            num += std::pow(std::abs(Fa(0, j) - Fb(0, j)), 4);
            den += std::pow(std::abs(a(0, j) - b(0, j)), 4);
        }
        CHECK(std::pow(num, 0.25) <= L * std::pow(den, 0.25) * (1 + 1e-12));
    }
}
