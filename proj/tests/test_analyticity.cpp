#include <catch_amalgamated.hpp>

#include "oracles.hpp"
#include "parastrip/analyticity.hpp"

using namespace parastrip;
using Catch::Approx;

namespace {

CauchyProblem heat_problem(int n = 256, double L = 10.0) {
    CauchyProblem pb;
    pb.grid = make_grid(1, L, n);
    pb.op = laplacian(1);
    pb.reaction = zero_reaction(1);
    pb.initial = InitialData::from_hermite(HermiteData::gaussian(1));
    return pb;
}

CauchyProblem variable_problem(int n = 128) {
    auto pb = heat_problem(n);
    pb.op = variable_diffusion_1d([](cplx x) { return 1.0 + 0.3 * std::exp(-x * x); });
    pb.reaction = quadratic_reaction(1, -0.5);
    return pb;
}

std::vector<double> ygrid(double ymax, int count) {
    std::vector<double> ys;
    for (int i = 0; i < count; ++i) ys.push_back(-ymax + 2.0 * ymax * i / (count - 1));
    ys[count / 2] = 0.0;
    return ys;
}

// Family of directly sampled fields fn(x, y), one snapshot per member.
ShiftFamily sampled_family(const Grid& g, const std::vector<double>& ys, const std::function<cplx(double, double)>& fn) {
    std::vector<SolveResult> members;
    for (double y : ys) {
        SolveResult r;
        r.grid = g;
        r.parameters = {0.0};
        r.times = {0.0};
        r.snapshots.push_back(sample(g, 1, [&](std::span<const double> x, std::span<cplx> o) { o[0] = fn(x[0], y); }));
        r.derivatives.push_back(ComplexField(g, 1));
        members.push_back(std::move(r));
    }
    return make_family(ys, std::move(members));
}

SolverConfig picard(double dt = 1e-3) {
    SolverConfig c;
    c.dt = dt;
    return c;
}

}  // namespace

TEST_CASE("shift family basics") {
    auto pb = heat_problem();
    auto single = solve_shift_family(pb, {0.0}, 0.0, 0.2, picard());
    auto direct = solve_real(pb, 0.0, 0.2, picard());
    CHECK(sup_distance(single.results[0].final_state(), direct.final_state()) == 0.0);

    auto fam = solve_shift_family(pb, ygrid(0.25, 9), 0.0, 0.5, picard(), 2);
    CHECK(fam.size() == 9);
    for (std::size_t i = 0; i < fam.size(); ++i) {
        const auto& u = fam.results[i].final_state();
        double err = 0.0;
        for (int j = 0; j < pb.grid.n(); ++j)
            err = std::max(err, std::abs(u(0, j) - oracle::heat_gaussian(cplx(pb.grid.node(j), fam.y(i)), 0.5)));
        CHECK(err < 1e-6);
    }
    // conjugate members of a real problem
    for (std::size_t i = 0; i < fam.size(); ++i)
        CHECK(sup_distance(fam.results[i].final_state(), fam.results[fam.size() - 1 - i].final_state().conj()) < 1e-10);

    CHECK_THROWS_AS(make_family({0.0, 0.1}, {direct, direct}), ConfigError);
    CHECK_THROWS_AS(make_family({-0.1, 0.1}, {direct, direct}), ConfigError);
}

TEST_CASE("family members report their shift on failure") {
    auto pb = heat_problem(64);
    pb.initial.strip.half_width = 0.2;
    try {
        solve_shift_family(pb, {-0.3, 0.0, 0.3}, 0.0, 0.1, picard());
        FAIL("expected a domain error");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).find("y = ") != std::string::npos);
    }
}

TEST_CASE("CR residual of sampled families") {
    auto g = make_grid(1, pi, 64);
    const double k = 3.0;
    auto ys = ygrid(0.01, 5);
    auto holo = sampled_family(g, ys, [&](double x, double y) { return std::exp(I * k * cplx(x, y)); });
    double r = cr_residual_space(holo, 0.0);
    INFO("holomorphic residual " << r);
    CHECK(r < 1e-4 * k * k * k);
    CHECK(r > 0.0);
    // second order in dy
    double r2 = cr_residual_space(holo, 0.0, 2);
    CHECK(r2 / r == Approx(4.0).epsilon(0.01));

    auto broken = sampled_family(g, ys, [&](double x, double y) { return std::exp(I * k * x) * (1.0 + y * y); });
    CHECK(cr_residual_space(broken, 0.0) > 0.5);

    auto two = sampled_family(g, {-0.1, 0.0, 0.1}, [](double, double) { return cplx(1.0); });
    CHECK(cr_residual_space(two, 0.0) == 0.0);
    auto one = sampled_family(g, {0.0}, [](double, double) { return cplx(1.0); });
    CHECK_THROWS_AS(cr_residual_space(one, 0.0), ConfigError);
}

TEST_CASE("CR refinement on the heat benchmark") {
    auto pb = heat_problem();
    auto fam = solve_shift_family(pb, ygrid(0.25, 9), 0.0, 0.5, picard(), 2);
    auto study = cr_refinement_study(pb, fam, 0.5, {1e-3}, picard(), 2);
    INFO("orders " << study.orders[0] << " " << study.orders[1] << " floor " << study.floor);
    CHECK(study.deltas.size() == 3);
    CHECK(study.observed_order >= 1.9);
    CHECK(study.floor <= 1e-6);
}

TEST_CASE("perturbing one member leaves a CR residual that does not vanish") {
    auto pb = heat_problem(128);
    auto ys = ygrid(0.1, 3);
    std::vector<SolveResult> members;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        auto q = pb;
        std::vector<cplx> shift{cplx(0.0, ys[i])};
        if (i == 2) {
            auto base = pb.initial.eval;
            q.initial.eval = [base](std::span<const cplx> z, std::span<cplx> o) {
                base(z, o);
                o[0] += 1e-3 * std::exp(-std::real(z[0]) * std::real(z[0]));
            };
        }
        members.push_back(solve_real(q, 0.0, 0.5, picard(), shift));
    }
    auto fam = make_family(ys, std::move(members));
    double r0 = cr_residual_space(fam, 0.0), r1 = cr_residual_space(fam, 0.5);
    INFO(r0 << " -> " << r1);
    CHECK(r0 > 1e-3);
    CHECK(r1 > 0.1 * r0);
}

TEST_CASE("shift consistency") {
    auto pb = heat_problem(128);
    auto fam = solve_shift_family(pb, {-0.1, 0.0, 0.1}, 0.0, 0.2, picard());
    const double h = pb.grid.spacing();
    std::vector<double> times{0.0, 0.1, 0.2};
    CHECK(shift_consistency_check(fam, pb, {0.0}, 0.1, times, picard()) == 0.0);
    CHECK(shift_consistency_check(fam, pb, {4 * h}, 0.1, times, picard()) < 1e-10);
    CHECK(shift_consistency_check(fam, pb, {-7 * h}, 0.0, times, picard()) < 1e-10);
    CHECK_THROWS_AS(shift_consistency_check(fam, pb, {0.5 * h}, 0.1, times, picard()), ConfigError);

    auto cfg = picard();
    cfg.picard_tol = 1e-10;
    auto vp = variable_problem();
    auto vf = solve_shift_family(vp, {-0.1, 0.0, 0.1}, 0.0, 0.2, cfg);
    CHECK(shift_consistency_check(vf, vp, {4 * h}, 0.1, times, cfg) < 10 * cfg.picard_tol);
}

TEST_CASE("temporal CR residual") {
    auto pb = heat_problem(128);
    auto cfg = picard();
    CHECK(cr_residual_time(pb, 1.0, 0.05, 0.0, cfg) == 0.0);
    double a = cr_residual_time(pb, cplx(1.0, 0.1), 0.04, 0.3, cfg, 2);
    double b = cr_residual_time(pb, cplx(1.0, 0.1), 0.02, 0.3, cfg, 2);
    INFO(a << " " << b);
    CHECK(a < 1e-3);
    CHECK(a / b == Approx(4.0).epsilon(0.05));
    CHECK_THROWS_AS(cr_residual_time(pb, cplx(1.0, 0.6), 0.2, 0.3, cfg), DomainError);
}

TEST_CASE("path independence") {
    auto pb = heat_problem();
    auto cfg = picard();
    CHECK(path_independence_check(pb, 0.4, 0.0, {0.1, 0.2, 0.3}, cfg).spread < 1e-12);
    auto holo = path_independence_check(pb, 0.5, 0.1, {0.2, 0.3}, cfg, 2);
    CHECK(holo.spread < 1e-6);
    CHECK(holo.endpoints.size() == 2);

    auto q = heat_problem(128);
    q.reaction = quadratic_reaction(1, 2.0);
    // holomorphic nonlinearity: the spread is pure time-discretisation error and shrinks like dt^2
    double coarse = path_independence_check(q, 0.5, 0.2, {0.2, 0.5}, picard(2e-3), 2).spread;
    double fine = path_independence_check(q, 0.5, 0.2, {0.2, 0.5}, cfg, 2).spread;
    INFO(coarse << " " << fine);
    CHECK(fine < 1e-5);
    CHECK(coarse / fine > 3.5);
    q.reaction = modulus_squared_reaction(1, 2.0);
    CHECK(path_independence_check(q, 0.5, 0.2, {0.2, 0.5}, cfg, 2).spread > 1e-3);
    CHECK_THROWS_AS(path_independence_check(pb, 0.5, 0.1, {0.05, 0.3}, cfg), DomainError);
}

TEST_CASE("hardy integral") {
    const double p = 4.0, c0 = 0.5, sigma = 0.5;
    auto pb = heat_problem();
    auto traj = solve_along_path(pb, sigma, 0.0, 0.25, picard());
    auto hv = hardy_integral(traj, 1, p, c0);

    auto dbl = [&](const std::function<double(double, double)>& f) {
        return oracle::integrate([&](double t) { return oracle::integrate([&](double x) { return f(x, t); }, -10.0, 10.0, 1e-13); },
                                 0.0, sigma, 1e-12);
    };
    double dpart = dbl([](double x, double t) { return std::pow(std::abs(oracle::heat_gaussian_dxx(x, t)), 4.0); });
    double spart = dbl([](double x, double t) {
        return std::pow(std::abs(oracle::heat_gaussian(x, t)), 4.0) + std::pow(std::abs(oracle::heat_gaussian_dx(x, t)), 4.0) +
               std::pow(std::abs(oracle::heat_gaussian_dxx(x, t)), 4.0);
    });
    CHECK(hv.derivative_part == Approx(dpart).epsilon(1e-4));
    CHECK(hv.sobolev_part == Approx(spart).epsilon(1e-4));
    CHECK(hv.value == Approx(dpart + c0 * spart).epsilon(1e-4));
    CHECK(hv.companion > c0 * hv.sobolev_part);

    // monotone in sigma along the same path
    double prev = 0.0;
    for (double s : {0.3, 0.4, 0.5}) {
        double v = hardy_integral(solve_along_path(pb, s, 0.1, 0.25, picard()), 1, p, c0).value;
        CHECK(v >= prev);
        prev = v;
    }

    auto zero = pb;
    zero.initial = InitialData::zero(1);
    auto z = hardy_integral(solve_along_path(zero, 0.3, 0.1, 0.2, picard()), 1, p, c0);
    CHECK(z.value == 0.0);
    CHECK(z.companion == 0.0);

    SolveResult bare = traj;
    bare.derivatives[3] = ComplexField();
    CHECK_THROWS_AS(hardy_integral(bare, 1, p, c0), ConfigError);
}

TEST_CASE("hardy integral is bounded over a (y, tau) grid and refinement stable") {
    auto pb = heat_problem(128);
    double sup_coarse = 0.0, sup_fine = 0.0;
    for (double y : {-0.2, -0.1, 0.0, 0.1, 0.2})
        for (double tau : {-0.1, -0.05, 0.0, 0.05, 0.1}) {
            std::vector<cplx> shift{cplx(0.0, y)};
            auto a = hardy_integral(solve_along_path(pb, 0.4, tau, 0.2, picard(4e-3), shift), 1, 4.0, 1.0);
            auto b = hardy_integral(solve_along_path(pb, 0.4, tau, 0.2, picard(2e-3), shift), 1, 4.0, 1.0);
            CHECK(std::isfinite(a.value));
            sup_coarse = std::max(sup_coarse, a.value);
            sup_fine = std::max(sup_fine, b.value);
        }
    CHECK(std::abs(sup_coarse - sup_fine) / sup_fine < 0.05);
}

TEST_CASE("strip sup over time") {
    auto pb = heat_problem(128);
    auto fam = solve_shift_family(pb, ygrid(0.2, 5), 0.0, 0.3, picard(1e-2));
    auto params = NormParams::for_grid(pb.grid);
    auto s = strip_sup_over_time(fam, params);
    CHECK(std::isfinite(s.value));
    CHECK(std::abs(s.y) == Approx(0.2));
    CHECK(s.t == cplx(0.0));
    auto u0 = sample_on_shifted_grid(pb.initial, pb.grid, std::vector<cplx>{0.0});
    CHECK(s.value >= besov_norm(u0, params));

    auto zero = pb;
    zero.initial = InitialData::zero(1);
    auto zf = solve_shift_family(zero, {-0.1, 0.0, 0.1}, 0.0, 0.1, picard(1e-2));
    CHECK(strip_sup_over_time(zf, params).value == 0.0);
}
