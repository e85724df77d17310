#include <catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include "oracles.hpp"
#include "parastrip/xva.hpp"

using namespace parastrip;
using Catch::Approx;

namespace {

XvaParams bs_params() {
    XvaParams p;
    p.r = 0.02;
    p.q_S = 0.02;
    p.sigma = 0.2;
    p.epsilon = 1e-3;
    return p;
}

PayoffSpec call(double eps = 1e-3) {
    PayoffSpec pay;
    pay.strike = 1.0;
    pay.epsilon = eps;
    return pay;
}

SolverConfig pricing_config(double dt = 0.01) {
    SolverConfig cfg;
    cfg.dt = dt;
    cfg.picard_tol = 1e-11;
    return cfg;
}

Grid price_grid(int n = 256) { return make_grid(1, 4.0, n); }

// value at X = 0 (S = K), the middle node
double atm(const SolveResult& res) { return res.final_state()(0, res.grid.size() / 2).real(); }

double sup_diff(const SolveResult& a, const SolveResult& b) { return sup_distance(a.final_state(), b.final_state()); }

}  // namespace

TEST_CASE("bs generator coefficients and symbol", "[xva]") {
    auto p = bs_params();
    auto op = bs_log_generator(p, pricing_domain(1.0));
    std::array<cplx, 1> z{0.0};
    std::array<double, 1> xi{1.7};
    auto s = symbol(op, z, 0.0, xi);
    double b = p.q_S - p.gamma_S - 0.5 * p.sigma * p.sigma;
    cplx expect = 0.5 * p.sigma * p.sigma * xi[0] * xi[0] - I * b * xi[0] + p.r;
    CHECK(std::abs(s(0, 0) - expect) < 1e-14);

    XvaParams printed = p;
    printed.drift = DriftConvention::printed;
    auto sp = symbol(bs_log_generator(printed), z, 0.0, xi);
    CHECK(std::abs(sp(0, 0) - (expect - I * p.sigma * p.sigma * xi[0])) < 1e-14);

    p.sigma = 0.0;
    CHECK_THROWS_AS(bs_log_generator(p), ConfigError);
}

TEST_CASE("params validation names the field", "[xva]") {
    auto p = bs_params();
    p.R_B = 1.5;
    CHECK_THROWS_WITH(p.validate(), Catch::Matchers::ContainsSubstring("R_B"));
    p = bs_params();
    p.lambda_C = -0.1;
    CHECK_THROWS_WITH(p.validate(), Catch::Matchers::ContainsSubstring("lambda_C"));
    p = bs_params();
    p.epsilon = 1.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = bs_params();
    p.heston = HestonParams{};
    p.heston->rho = 1.0;
    CHECK_THROWS_WITH(p.validate(), Catch::Matchers::ContainsSubstring("rho"));
}

TEST_CASE("heston diffusion matrix", "[xva]") {
    HestonParams h;
    h.rho = -0.5;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(heston_diffusion(h, 0.04));
    // 2x2 closed form: (tr -+ sqrt(tr^2 - 4 det)) / 2
    double a = 0.02, c = 0.5 * h.sigma_v * h.sigma_v * 0.04, b = 0.5 * h.rho * h.sigma_v * 0.04;
    double tr = a + c, det = a * c - b * b;
    double lmin = 0.5 * (tr - std::sqrt(tr * tr - 4.0 * det));
    CHECK(lmin > 0.0);
    CHECK(es.eigenvalues()(0) == Approx(lmin).epsilon(1e-12));

    h.rho = 0.0;
    auto d = heston_diffusion(h, 0.04);
    CHECK(d(0, 1) == 0.0);
    CHECK(d(1, 0) == 0.0);

    XvaParams p = bs_params();
    p.heston = HestonParams{};
    p.heston->v_min = 0.0;
    CHECK_THROWS_AS(heston_generator(p, 4.0), ConfigError);
    CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("heston generator leading part matches the diffusion matrix at y = 0", "[xva]") {
    XvaParams p = bs_params();
    p.heston = HestonParams{};
    const double L = 4.0;
    auto op = heston_generator(p, L);
    auto vm = variance_map(*p.heston, L);
    std::array<cplx, 2> z{0.3, 0.0};
    std::array<double, 2> xi{1.0, 0.0};
    auto s = leading_symbol(op, z, 0.0, xi);
    CHECK(std::abs(s(0, 0) - 0.5 * vm.v_mid) < 1e-14);
    // variance direction: y = (v - v_mid) / beta near 0, so a_yy = a_vv / beta^2
    xi = {0.0, 1.0};
    s = leading_symbol(op, z, 0.0, xi);
    double avv = heston_diffusion(*p.heston, vm.v_mid)(1, 1);
    CHECK(s(0, 0).real() == Approx(avv / (vm.beta() * vm.beta())).epsilon(1e-12));
    CHECK(vm.coordinate(vm.v_mid) == 0.0);
    CHECK_THROWS_AS(vm.coordinate(1.0), DomainError);
}

TEST_CASE("payoff strip width and initial data", "[xva]") {
    auto pay = call(1e-3);
    CHECK(pay.admissible_half_width() == Approx(std::atan(1e-3)).epsilon(1e-15));
    pay.strike = 2.0;
    CHECK(pay.admissible_half_width() == Approx(std::atan(5e-4)).epsilon(1e-15));
    PayoffSpec herm;
    herm.kind = PayoffKind::hermite_expansion;
    CHECK(std::isinf(herm.admissible_half_width()));

    auto d = payoff_data(call(1e-3), 1);
    std::array<cplx, 1> z{std::log(1.5)};
    std::array<cplx, 1> out{};
    d.eval(z, out);
    CHECK(out[0].real() == Approx(0.5).epsilon(1e-3));
    z[0] = std::log(0.5);
    d.eval(z, out);
    CHECK(std::abs(out[0]) < 1e-3);

    // a 2-D payoff ignores the variance coordinate
    auto d2 = payoff_data(call(1e-3), 2);
    std::array<cplx, 2> z2{std::log(1.5), 0.7};
    d2.eval(z2, out);
    CHECK(out[0].real() == Approx(0.5).epsilon(1e-3));
}

TEST_CASE("hermite functions are orthonormal and the fit is entire", "[xva]") {
    // trapezoid on [-14, 14] is spectrally accurate for Gaussian-decaying integrands
    const int n = 12;
    const double h = 0.01;
    std::vector<std::vector<double>> gram(n, std::vector<double>(n, 0.0));
    for (double x = -14.0; x <= 14.0 + 1e-12; x += h) {
        auto psi = hermite_functions(n, x);
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) gram[a][b] += h * (psi[a] * psi[b]).real();
    }
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) CHECK(gram[a][b] == Approx(a == b ? 1.0 : 0.0).margin(1e-9));
    PayoffSpec herm;
    herm.kind = PayoffKind::hermite_expansion;
    auto d = payoff_data(herm, 1);
    std::array<cplx, 1> z{cplx(0.4, 2.0)};
    std::array<cplx, 1> out{};
    d.eval(z, out);
    CHECK(is_finite(out[0]));
    // fits the damped call away from the kink
    z[0] = 1.0;
    d.eval(z, out);
    CHECK(out[0].real() == Approx((std::exp(1.0) - 1.0) * std::exp(-1.0 / 8.0)).epsilon(0.05));
}

TEST_CASE("zero payoff prices to zero", "[xva]") {
    auto p = bs_params();
    auto g = price_grid(64);
    auto pb = xva_problem(p, call(), g, 0.5);
    pb.initial = InitialData::zero(1);
    auto V = solve_real(pb, 0.0, 0.5, pricing_config(0.05));
    CHECK(V.final_state().max_abs() == 0.0);
    XvaParams lin = p;
    lin.lambda_B = 0.1;
    lin.theta_mtm = 0.0;
    auto pl = xva_problem(lin, call(), g, 0.5, &V);
    pl.initial = InitialData::zero(1);
    CHECK(solve_real(pl, 0.0, 0.5, pricing_config(0.05)).final_state().max_abs() < 1e-14);
}

TEST_CASE("risk-free smoothed call matches Black-Scholes", "[xva]") {
    auto p = bs_params();
    auto V = price_riskfree(p, call(1e-3), price_grid(), 1.0, pricing_config());
    double bs = oracle::black_scholes_call(1.0, 1.0, p.r, p.q_S, p.gamma_S, p.sigma, 1.0);
    CHECK(std::abs(atm(V) - bs) / bs < 1e-2);

    // error decreasing in eps
    double prev = std::numeric_limits<double>::infinity();
    for (double eps : {0.1, 0.05, 0.025}) {
        double err = std::abs(atm(price_riskfree(p, call(eps), price_grid(), 1.0, pricing_config())) - bs);
        CHECK(err < prev);
        prev = err;
    }
}

TEST_CASE("put-call parity of the smoothed pair", "[xva]") {
    auto p = bs_params();
    p.gamma_S = 0.01;
    auto put = call(1e-3);
    put.kind = PayoffKind::smoothed_put;
    auto C = price_riskfree(p, call(1e-3), price_grid(), 1.0, pricing_config());
    auto P = price_riskfree(p, put, price_grid(), 1.0, pricing_config());
    double forward = std::exp((p.q_S - p.gamma_S - p.r) * 1.0) - std::exp(-p.r * 1.0);
    CHECK(std::abs(atm(C) - atm(P) - forward) < 1e-6);
}

TEST_CASE("trivial parameters give back the risk-free price", "[xva]") {
    auto p = bs_params();
    auto g = price_grid();
    auto cfg = pricing_config();
    auto V = price_riskfree(p, call(), g, 1.0, cfg);

    auto full_recovery = p;
    full_recovery.lambda_B = 0.05;
    full_recovery.lambda_C = 0.08;
    full_recovery.R_B = full_recovery.R_C = 1.0;
    CHECK(sup_diff(price_xva_nonlinear(full_recovery, call(), g, 1.0, cfg), V) < 1e-9);

    auto no_default = p;
    no_default.R_B = 0.4;
    no_default.R_C = 0.4;
    CHECK(sup_diff(price_xva_nonlinear(no_default, call(), g, 1.0, cfg), V) < 1e-12);
    CHECK(sup_diff(price_xva_linear(no_default, call(), V, g, 1.0, cfg), V) < 1e-9);
}

TEST_CASE("linear pricing rejects a mismatched surface", "[xva]") {
    auto p = bs_params();
    p.lambda_C = 0.05;
    auto V = price_riskfree(p, call(), price_grid(64), 0.5, pricing_config(0.05));
    CHECK_THROWS_AS(price_xva_linear(p, call(), V, price_grid(128), 0.5, pricing_config(0.05)), ConfigError);
    CHECK_THROWS_AS(price_xva_linear(p, call(), V, price_grid(64), 1.0, pricing_config(0.05)), ConfigError);
}

TEST_CASE("funding spread lowers the price", "[xva]") {
    auto p = bs_params();
    p.s_F = 0.05;
    auto g = price_grid();
    auto cfg = pricing_config();
    auto V = price_riskfree(p, call(), g, 1.0, cfg);
    auto Vh = price_xva_nonlinear(p, call(), g, 1.0, cfg);
    double worst = -1.0;
    for (std::size_t f = 0; f < g.size(); ++f)
        worst = std::max(worst, (Vh.final_state()(0, f) - V.final_state()(0, f)).real());
    CHECK(worst <= p.epsilon * p.s_F * 1.0 / pi + 1e-9);
    CHECK(atm(Vh) < atm(V));
}

TEST_CASE("linear and nonlinear XVA agree to second order in the intensities", "[xva]") {
    auto base = bs_params();
    base.R_B = 0.4;
    base.R_C = 0.4;
    auto g = price_grid();
    auto cfg = pricing_config();
    auto V = price_riskfree(base, call(), g, 1.0, cfg);
    auto gap = [&](double lambda) {
        auto p = base;
        p.lambda_B = lambda;
        p.lambda_C = lambda;
        p.s_F = 0.5 * lambda;
        return sup_diff(price_xva_nonlinear(p, call(), g, 1.0, cfg), price_xva_linear(p, call(), V, g, 1.0, cfg));
    };
    double g1 = gap(0.2), g2 = gap(0.1);
    CHECK(g1 > 0.0);
    CHECK(g1 / g2 >= 3.0);
    CHECK(g1 / g2 <= 5.0);
}

TEST_CASE("convex mark-to-market interpolates the two models", "[xva]") {
    auto p = bs_params();
    p.lambda_B = 0.1;
    p.lambda_C = 0.1;
    p.R_B = p.R_C = 0.4;
    auto g = price_grid(128);
    auto cfg = pricing_config(0.02);
    auto V = price_riskfree(p, call(), g, 0.5, cfg);
    auto lin = price_xva_linear(p, call(), V, g, 0.5, cfg);
    auto non = price_xva_nonlinear(p, call(), g, 0.5, cfg);
    auto p0 = p;
    p0.theta_mtm = 0.0;
    auto p1 = p;
    p1.theta_mtm = 1.0;
    CHECK(sup_diff(price_xva_mtm(p1, call(), V, g, 0.5, cfg), non) < 1e-12);
    CHECK(sup_diff(price_xva_mtm(p0, call(), V, g, 0.5, cfg), lin) < 1e-12);
    // theta = 0 through the reaction path agrees with the source formulation
    auto via_reaction = p;
    via_reaction.theta_mtm = 1e-12;
    CHECK(sup_diff(price_xva_mtm(via_reaction, call(), V, g, 0.5, cfg), lin) < 1e-8);
    auto half = p;
    half.theta_mtm = 0.5;
    double mid = atm(price_xva_mtm(half, call(), V, g, 0.5, cfg));
    CHECK(mid <= std::max(atm(lin), atm(non)) + 1e-12);
    CHECK(mid >= std::min(atm(lin), atm(non)) - 1e-12);
}

TEST_CASE("scaling: linear prices are homogeneous, nonlinear ones are not", "[xva]") {
    auto p = bs_params();
    auto g = price_grid(128);
    auto cfg = pricing_config(0.02);
    auto doubled = [&](const XvaParams& prm) {
        auto pb = xva_problem(prm, call(), g, 0.5);
        auto base = pb.initial;
        pb.initial.eval = [base](std::span<const cplx> z, std::span<cplx> out) {
            base.eval(z, out);
            out[0] *= 2.0;
        };
        return solve_real(pb, 0.0, 0.5, cfg);
    };
    auto V = price_riskfree(p, call(), g, 0.5, cfg);
    CHECK(sup_diff(doubled(p), V) > 0.1);
    CHECK(sup_distance(doubled(p).final_state(), 2.0 * V.final_state()) < 1e-12);

    auto nl = p;
    nl.lambda_B = 0.3;
    nl.R_B = 0.0;
    nl.s_F = 0.1;
    auto Vh = price_xva_nonlinear(nl, call(), g, 0.5, cfg);
    double dev = sup_distance(doubled(nl).final_state(), 2.0 * Vh.final_state());
    CHECK(dev > 1e-6);
}

TEST_CASE("eps-convergence of the nonlinear price", "[xva]") {
    auto p = bs_params();
    p.lambda_B = 0.1;
    p.lambda_C = 0.1;
    p.R_B = p.R_C = 0.4;
    p.s_F = 0.02;
    auto g = price_grid();
    auto cfg = pricing_config(0.02);
    auto price = [&](double eps) {
        auto q = p;
        q.epsilon = eps;
        return price_xva_nonlinear(q, call(eps), g, 1.0, cfg);
    };
    std::vector<SolveResult> prices;
    for (double eps : {0.2, 0.1, 0.05, 0.025}) prices.push_back(price(eps));
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < prices.size(); ++i) {
        double d = sup_diff(prices[i], prices[i + 1]);
        CHECK(d < prev);
        prev = d;
    }
}

TEST_CASE("heston degenerate limit is Black-Scholes", "[xva][heston]") {
    auto p = bs_params();
    HestonParams h;
    h.theta = 0.04;
    h.sigma_v = 1e-3;
    h.rho = 0.0;
    h.v_min = 0.03;
    h.v_max = 0.05;
    p.heston = h;
    auto g = make_grid(2, 4.0, 128);
    auto V = price_riskfree(p, call(), g, 1.0, pricing_config(0.02));
    // variance coordinate y = 0 is v = theta; X = 0 at index n/2 on axis 0
    double value = V.final_state()(0, g.flatten(64, 64)).real();
    double bs = oracle::black_scholes_call(1.0, 1.0, p.r, p.q_S, p.gamma_S, std::sqrt(h.theta), 1.0);
    CHECK(std::abs(value - bs) / bs < 0.02);
}

TEST_CASE("fourier interpolation reproduces band-limited fields", "[xva]") {
    auto g = make_grid(1, pi, 32);
    auto u = sample(g, 1, [](std::span<const double> x, std::span<cplx> out) {
        out[0] = std::cos(3.0 * x[0]) + 0.5 * std::sin(x[0]);
    });
    CHECK(std::abs(fourier_interpolate(u, {0.123}) - (std::cos(0.369) + 0.5 * std::sin(0.123))) < 1e-13);
    auto g2 = make_grid(2, pi, 16);
    auto v = sample(g2, 1, [](std::span<const double> x, std::span<cplx> out) {
        out[0] = std::cos(x[0]) * std::sin(2.0 * x[1]);
    });
    CHECK(std::abs(fourier_interpolate(v, {0.3, -0.7}) - std::cos(0.3) * std::sin(-1.4)) < 1e-13);
}

TEST_CASE("price analyticity report", "[xva][analyticity]") {
    auto p = bs_params();
    PayoffSpec herm;
    herm.kind = PayoffKind::hermite_expansion;
    auto g = make_grid(1, 12.0, 256);
    auto cfg = pricing_config(0.01);
    std::vector<double> ys{-2e-3, -1e-3, 0.0, 1e-3, 2e-3};
    auto rep = verify_price_analyticity(p, herm, g, 0.5, ys, {0.1}, cfg, 2);
    REQUIRE(!rep.cr_residual.empty());
    CHECK(rep.cr_residual.front() < 1e-5);
    CHECK(rep.path_spread.front() < 1e-6);
    CHECK(std::isfinite(rep.strip.value));

    // with an active nonlinearity the family stays consistent
    p.lambda_C = 0.05;
    p.R_C = 0.4;
    auto nl = verify_price_analyticity(p, herm, g, 0.5, ys, {0.1}, cfg, 2);
    CHECK(nl.cr_residual.front() < 1e-3);
    CHECK(nl.path_spread.front() < 1e-4);

    // a smoothed call beyond arctan(eps / K) is refused
    std::vector<double> wide{-0.01, 0.0, 0.01};
    CHECK_THROWS_WITH(verify_price_analyticity(p, call(1e-3), price_grid(64), 0.5, wide, {0.1}, cfg),
                      Catch::Matchers::ContainsSubstring("branch cut"));
}
