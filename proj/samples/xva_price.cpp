// Risk-free and XVA-adjusted prices of a smoothed call under Black-Scholes.

#include <cstdio>

#include "parastrip/xva.hpp"

using namespace parastrip;

int main() {
    XvaParams p;
    p.r = 0.02;
    p.q_S = 0.02;
    p.sigma = 0.2;
    p.lambda_B = 0.05;
    p.lambda_C = 0.08;
    p.R_B = p.R_C = 0.4;
    p.s_F = 0.01;

    PayoffSpec call;
    call.strike = 1.0;
    call.epsilon = 1e-3;

    auto g = make_grid(1, 4.0, 256);
    SolverConfig cfg;
    cfg.dt = 0.01;

    auto V = price_riskfree(p, call, g, 1.0, cfg);
    auto Vn = price_xva_nonlinear(p, call, g, 1.0, cfg);
    auto Vl = price_xva_linear(p, call, V, g, 1.0, cfg);
    std::size_t atm = g.size() / 2;  // X = ln(S/K) = 0
    std::printf("V        %.6f\n", V.final_state()(0, atm).real());
    std::printf("V_hat nl %.6f\n", Vn.final_state()(0, atm).real());
    std::printf("V_hat l  %.6f\n", Vl.final_state()(0, atm).real());
}
