#pragma once

// Experiment runner behind the `parastrip` executable. Needs nlohmann/json on the include path.

#include <fftw3.h>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "parastrip/analyticity.hpp"
#include "parastrip/ensembles.hpp"
#include "parastrip/operator.hpp"
#include "parastrip/solver.hpp"
#include "parastrip/xva.hpp"

namespace parastrip::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* version = "0.1.0";
inline constexpr std::uint64_t default_seed = 0x5eedULL;

inline const std::vector<std::string>& commands() {
    static const std::vector<std::string> c{"solve", "verify-analyticity", "xva", "ellipticity", "maxreg",
                                            "convergence"};
    return c;
}

/// Every violated precondition of a config, one "field: message" entry each.
class ValidationError : public ConfigError {
public:
    explicit ValidationError(std::vector<std::string> v) : ConfigError(join(v)), violations_(std::move(v)) {}
    const std::vector<std::string>& violations() const { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s;
        for (const auto& e : v) s += (s.empty() ? "" : "; ") + e;
        return s;
    }
    std::vector<std::string> violations_;
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12e", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Config

struct Sweep {
    std::vector<double> y, tau, t_prime, dt, epsilon, horizons, d_mu, floor_deltas, v_min;
    std::optional<double> rho, sigma;
};

struct MaxRegSetup {
    int samples = 50;
    double p = 4.0;
    int modes = 5;
};

struct EllipticitySetup {
    double theta0 = pi / 4.0;
    int count = 9;
    int samples = 20;
};

struct XvaSetup {
    XvaParams params;
    PayoffSpec payoff;
};

struct ExperimentConfig {
    std::string command;
    json raw;
    Grid grid;
    CauchyProblem problem;
    std::string operator_kind;
    std::string reaction_kind;
    std::string initial_kind;
    SolverConfig solver;
    double t0 = 0.0;
    double T = 1.0;
    int output_every = 0;
    Sweep sweep;
    std::optional<XvaSetup> xva;
    MaxRegSetup maxreg;
    EllipticitySetup ellipticity;
    std::string output_dir = "parastrip_out";
    std::uint64_t seed = default_seed;
    int jobs = 1;

    /// Heat benchmark: Laplacian, no reaction, Gaussian data; closed form available.
    bool heat_benchmark() const {
        return operator_kind == "laplacian" && reaction_kind == "zero" && initial_kind == "gaussian" && !problem.source;
    }
};

namespace detail {

/// Collects violations while reading a JSON tree; each accessor records and returns a fallback.
class Reader {
public:
    std::vector<std::string> violations;

    void fail(const std::string& field, const std::string& msg) { violations.push_back(field + ": " + msg); }

    const json* child(const json& j, const std::string& key) {
        if (!j.is_object()) return nullptr;
        auto it = j.find(key);
        return it == j.end() ? nullptr : &*it;
    }

    double number(const json& j, const std::string& key, double fallback, const std::string& path) {
        const json* c = child(j, key);
        if (!c) return fallback;
        if (!c->is_number()) {
            fail(path + "." + key, "must be a number");
            return fallback;
        }
        return c->get<double>();
    }

    int integer(const json& j, const std::string& key, int fallback, const std::string& path) {
        const json* c = child(j, key);
        if (!c) return fallback;
        if (!c->is_number_integer()) {
            fail(path + "." + key, "must be an integer");
            return fallback;
        }
        return c->get<int>();
    }

    std::string text(const json& j, const std::string& key, const std::string& fallback, const std::string& path) {
        const json* c = child(j, key);
        if (!c) return fallback;
        if (!c->is_string()) {
            fail(path + "." + key, "must be a string");
            return fallback;
        }
        return c->get<std::string>();
    }

    /// A number or a [re, im] pair.
    cplx complex(const json& j, const std::string& key, cplx fallback, const std::string& path) {
        const json* c = child(j, key);
        if (!c) return fallback;
        return complex_value(*c, path + "." + key, fallback);
    }

    cplx complex_value(const json& c, const std::string& field, cplx fallback) {
        if (c.is_number()) return c.get<double>();
        if (c.is_array() && c.size() == 2 && c[0].is_number() && c[1].is_number())
            return {c[0].get<double>(), c[1].get<double>()};
        fail(field, "must be a number or a [re, im] pair");
        return fallback;
    }

    std::vector<double> numbers(const json& j, const std::string& key, const std::string& path) {
        std::vector<double> out;
        const json* c = child(j, key);
        if (!c) return out;
        if (!c->is_array()) {
            fail(path + "." + key, "must be an array of numbers");
            return out;
        }
        for (const auto& v : *c) {
            if (!v.is_number()) {
                fail(path + "." + key, "must be an array of numbers");
                return {};
            }
            out.push_back(v.get<double>());
        }
        return out;
    }

    /// Runs a module validator and records its message under `field`.
    template <class Fn>
    void guard(const std::string& field, Fn&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            fail(field, e.what());
        }
    }
};

inline TemporalDomain read_temporal(Reader& rd, const json& op, double T) {
    TemporalDomain td{pi / 4.0, T, T};
    if (const json* t = rd.child(op, "temporal")) {
        td.angle = rd.number(*t, "angle", td.angle, "problem.operator.temporal");
        td.t_prime = rd.number(*t, "t_prime", td.t_prime, "problem.operator.temporal");
        td.horizon = rd.number(*t, "horizon", td.horizon, "problem.operator.temporal");
    }
    return td;
}

inline std::optional<XvaSetup> read_xva(Reader& rd, const json& root) {
    const json* x = rd.child(root, "xva");
    if (!x) return std::nullopt;
    const std::string path = "xva";
    XvaSetup s;
    auto& p = s.params;
    p.r = rd.number(*x, "r", p.r, path);
    p.lambda_B = rd.number(*x, "lambda_B", p.lambda_B, path);
    p.lambda_C = rd.number(*x, "lambda_C", p.lambda_C, path);
    p.R_B = rd.number(*x, "R_B", p.R_B, path);
    p.R_C = rd.number(*x, "R_C", p.R_C, path);
    p.s_F = rd.number(*x, "s_F", p.s_F, path);
    p.q_S = rd.number(*x, "q_S", p.q_S, path);
    p.gamma_S = rd.number(*x, "gamma_S", p.gamma_S, path);
    p.sigma = rd.number(*x, "sigma", p.sigma, path);
    p.epsilon = rd.number(*x, "epsilon", p.epsilon, path);
    p.theta_mtm = rd.number(*x, "theta_mtm", p.theta_mtm, path);
    std::string drift = rd.text(*x, "drift", "ito", path);
    if (drift == "ito")
        p.drift = DriftConvention::ito;
    else if (drift == "printed")
        p.drift = DriftConvention::printed;
    else
        rd.fail("xva.drift", "must be \"ito\" or \"printed\"");
    if (const json* h = rd.child(*x, "heston")) {
        HestonParams hp;
        const std::string hpath = "xva.heston";
        hp.kappa = rd.number(*h, "kappa", hp.kappa, hpath);
        hp.theta = rd.number(*h, "theta", hp.theta, hpath);
        hp.sigma_v = rd.number(*h, "sigma_v", hp.sigma_v, hpath);
        hp.rho = rd.number(*h, "rho", hp.rho, hpath);
        hp.v_min = rd.number(*h, "v_min", hp.v_min, hpath);
        hp.v_max = rd.number(*h, "v_max", hp.v_max, hpath);
        p.heston = hp;
    }
    rd.guard("xva", [&] { p.validate(); });

    auto& pay = s.payoff;
    pay.epsilon = p.epsilon;
    if (const json* pj = rd.child(*x, "payoff")) {
        const std::string ppath = "xva.payoff";
        std::string kind = rd.text(*pj, "kind", "smoothed_call", ppath);
        if (kind == "smoothed_call")
            pay.kind = PayoffKind::smoothed_call;
        else if (kind == "smoothed_put")
            pay.kind = PayoffKind::smoothed_put;
        else if (kind == "hermite_expansion")
            pay.kind = PayoffKind::hermite_expansion;
        else
            rd.fail("xva.payoff.kind", "must be smoothed_call, smoothed_put or hermite_expansion");
        pay.strike = rd.number(*pj, "strike", pay.strike, ppath);
        pay.epsilon = rd.number(*pj, "epsilon", pay.epsilon, ppath);
        pay.window = rd.number(*pj, "window", pay.window, ppath);
        pay.hermite_terms = rd.integer(*pj, "hermite_terms", pay.hermite_terms, ppath);
        pay.hermite_scale = rd.number(*pj, "hermite_scale", pay.hermite_scale, ppath);
        pay.hermite_damping = rd.number(*pj, "hermite_damping", pay.hermite_damping, ppath);
    }
    rd.guard("xva.payoff", [&] { pay.validate(); });
    return s;
}

inline HermiteData read_hermite(Reader& rd, const json& init, int dim) {
    HermiteData h;
    h.dim = dim;
    const json* comps = rd.child(init, "components");
    if (!comps || !comps->is_array()) {
        rd.fail("problem.initial.components", "hermite data needs an array of monomial lists");
        return HermiteData::gaussian(dim);
    }
    for (std::size_t c = 0; c < comps->size(); ++c) {
        std::vector<Monomial> poly;
        for (const auto& m : (*comps)[c]) {
            Monomial mono;
            std::string field = "problem.initial.components[" + std::to_string(c) + "]";
            const json* e = rd.child(m, "exponents");
            if (e && e->is_array() && !e->empty() && e->size() <= 2) {
                for (std::size_t i = 0; i < e->size(); ++i) mono.exponents[i] = (*e)[i].get<int>();
            } else {
                rd.fail(field + ".exponents", "must be an array of one or two integers");
            }
            mono.coeff = rd.complex(m, "coeff", 1.0, field);
            poly.push_back(mono);
        }
        h.components.push_back(std::move(poly));
    }
    rd.guard("problem.initial", [&] { h.validate(); });
    return h;
}

}  // namespace detail

/// Parses and validates a config tree for `command`; throws ValidationError listing every violation.
inline ExperimentConfig parse_config(const json& root, const std::string& command) {
    detail::Reader rd;
    ExperimentConfig cfg;
    cfg.raw = root;
    cfg.command = command;
    if (!root.is_object()) throw ValidationError({"config: top level must be an object"});
    if (std::find(commands().begin(), commands().end(), command) == commands().end())
        rd.fail("command", "unknown command \"" + command + "\"");
    if (const json* c = rd.child(root, "command"); c && c->is_string() && c->get<std::string>() != command)
        rd.fail("command", "config is for \"" + c->get<std::string>() + "\", not \"" + command + "\"");

    // grid
    const json empty = json::object();
    const json* gj = rd.child(root, "grid");
    if (!gj) rd.fail("grid", "block missing");
    const json& g = gj ? *gj : empty;
    int dim = rd.integer(g, "dim", 1, "grid");
    double L = rd.number(g, "half_length", pi, "grid");
    int n = rd.integer(g, "points_per_axis", 64, "grid");
    bool grid_ok = false;
    rd.guard("grid", [&] {
        cfg.grid = make_grid(dim, L, n);
        grid_ok = true;
    });

    // solver
    const json* sj = rd.child(root, "solver");
    const json& s = sj ? *sj : empty;
    auto& sc = cfg.solver;
    sc.dt = rd.number(s, "dt", sc.dt, "solver");
    sc.picard_tol = rd.number(s, "picard_tol", sc.picard_tol, "solver");
    sc.picard_max_iter = rd.integer(s, "picard_max_iter", sc.picard_max_iter, "solver");
    sc.window_steps = rd.integer(s, "window_steps", sc.window_steps, "solver");
    sc.p = rd.number(s, "p", sc.p, "solver");
    sc.gmres_tol = rd.number(s, "gmres_tol", sc.gmres_tol, "solver");
    sc.gmres_restart = rd.integer(s, "gmres_restart", sc.gmres_restart, "solver");
    if (const json* d = rd.child(s, "dealias"); d && d->is_boolean()) sc.dealias = d->get<bool>();
    std::string integ = rd.text(s, "integrator", "picard_voc", "solver");
    if (integ == "picard_voc")
        sc.integrator = Integrator::picard_voc;
    else if (integ == "imex")
        sc.integrator = Integrator::imex;
    else
        rd.fail("solver.integrator", "must be \"picard_voc\" or \"imex\"");
    cfg.t0 = rd.number(s, "t0", 0.0, "solver");
    cfg.T = rd.number(s, "T", 1.0, "solver");
    cfg.output_every = rd.integer(s, "output_every", 0, "solver");
    if (!(cfg.T > cfg.t0)) rd.fail("solver.T", "must exceed solver.t0");
    if (cfg.output_every < 0) rd.fail("solver.output_every", "must be >= 0");
    rd.guard("solver", [&] { sc.validate(); });

    // sweep
    if (const json* w = rd.child(root, "sweep")) {
        auto& sw = cfg.sweep;
        sw.y = rd.numbers(*w, "y", "sweep");
        sw.tau = rd.numbers(*w, "tau", "sweep");
        sw.t_prime = rd.numbers(*w, "t_prime", "sweep");
        sw.dt = rd.numbers(*w, "dt", "sweep");
        sw.epsilon = rd.numbers(*w, "epsilon", "sweep");
        sw.horizons = rd.numbers(*w, "horizons", "sweep");
        sw.d_mu = rd.numbers(*w, "d_mu", "sweep");
        sw.floor_deltas = rd.numbers(*w, "floor_deltas", "sweep");
        sw.v_min = rd.numbers(*w, "v_min", "sweep");
        if (rd.child(*w, "rho")) sw.rho = rd.number(*w, "rho", 0.0, "sweep");
        if (rd.child(*w, "sigma")) sw.sigma = rd.number(*w, "sigma", 0.0, "sweep");
        for (double v : sw.dt)
            if (!(v > 0.0)) rd.fail("sweep.dt", "entries must be positive");
        for (double v : sw.epsilon)
            if (!(v > 0.0 && v < 1.0)) rd.fail("sweep.epsilon", "entries must lie in (0, 1)");
        for (double v : sw.horizons)
            if (!(v > 0.0)) rd.fail("sweep.horizons", "entries must be positive");
    }

    cfg.xva = detail::read_xva(rd, root);

    if (const json* m = rd.child(root, "maxreg")) {
        cfg.maxreg.samples = rd.integer(*m, "samples", cfg.maxreg.samples, "maxreg");
        cfg.maxreg.p = rd.number(*m, "p", cfg.maxreg.p, "maxreg");
        cfg.maxreg.modes = rd.integer(*m, "modes", cfg.maxreg.modes, "maxreg");
        if (cfg.maxreg.samples < 1) rd.fail("maxreg.samples", "must be >= 1");
        if (!(cfg.maxreg.p > 1.0)) rd.fail("maxreg.p", "must exceed 1");
    }
    if (const json* e = rd.child(root, "ellipticity")) {
        cfg.ellipticity.theta0 = rd.number(*e, "theta0", cfg.ellipticity.theta0, "ellipticity");
        cfg.ellipticity.count = rd.integer(*e, "count", cfg.ellipticity.count, "ellipticity");
        cfg.ellipticity.samples = rd.integer(*e, "samples", cfg.ellipticity.samples, "ellipticity");
        if (!(cfg.ellipticity.theta0 >= 0.0 && cfg.ellipticity.theta0 < pi / 2.0))
            rd.fail("ellipticity.theta0", "must lie in [0, pi/2)");
        if (cfg.ellipticity.count < 1) rd.fail("ellipticity.count", "must be >= 1");
        if (cfg.ellipticity.samples < 1) rd.fail("ellipticity.samples", "must be >= 1");
    }

    cfg.output_dir = rd.text(root, "output_dir", cfg.output_dir, "config");
    if (const json* sd = rd.child(root, "seed")) {
        if (sd->is_number_unsigned() || sd->is_number_integer())
            cfg.seed = sd->get<std::uint64_t>();
        else
            rd.fail("seed", "must be a nonnegative integer");
    }

    // problem
    const json* pj = rd.child(root, "problem");
    if (!pj) rd.fail("problem", "block missing");
    const json& pb = pj ? *pj : empty;
    const json* oj = rd.child(pb, "operator");
    const json& op = oj ? *oj : empty;
    cfg.operator_kind = rd.text(op, "kind", "laplacian", "problem.operator");
    TemporalDomain td = detail::read_temporal(rd, op, cfg.T);
    rd.guard("problem.operator.temporal", [&] { td.validate(); });
    if (grid_ok) {
        const Grid& gr = cfg.grid;
        rd.guard("problem.operator", [&] {
            if (cfg.operator_kind == "laplacian") {
                cfg.problem.op = laplacian(gr.dim(), td);
            } else if (cfg.operator_kind == "variable_diffusion") {
                if (gr.dim() != 1) throw ConfigError("variable_diffusion needs grid.dim = 1");
                double amp = rd.number(op, "amplitude", 0.3, "problem.operator");
                cfg.problem.op = variable_diffusion_1d([amp](cplx x) { return 1.0 + amp * std::exp(-x * x); }, td);
            } else if (cfg.operator_kind == "black_scholes") {
                if (!cfg.xva) throw ConfigError("black_scholes needs the xva block");
                if (gr.dim() != 1) throw ConfigError("black_scholes needs grid.dim = 1");
                cfg.problem.op = bs_log_generator(cfg.xva->params, td);
            } else if (cfg.operator_kind == "heston") {
                if (!cfg.xva || !cfg.xva->params.heston) throw ConfigError("heston needs xva.heston");
                if (gr.dim() != 2) throw ConfigError("heston needs grid.dim = 2");
                cfg.problem.op = heston_generator(cfg.xva->params, gr.half_length(), td);
            } else {
                throw ConfigError("kind must be laplacian, variable_diffusion, black_scholes or heston");
            }
        });

        const json* rj = rd.child(pb, "reaction");
        const json& re = rj ? *rj : empty;
        cfg.reaction_kind = rd.text(re, "kind", "zero", "problem.reaction");
        cplx c = rd.complex(re, "c", 1.0, "problem.reaction");
        rd.guard("problem.reaction", [&] {
            const int d = gr.dim();
            if (cfg.reaction_kind == "zero")
                cfg.problem.reaction = zero_reaction(d);
            else if (cfg.reaction_kind == "linear")
                cfg.problem.reaction = linear_reaction(d, c);
            else if (cfg.reaction_kind == "quadratic")
                cfg.problem.reaction = quadratic_reaction(d, c);
            else if (cfg.reaction_kind == "modulus_squared")
                cfg.problem.reaction = modulus_squared_reaction(d, c);
            else if (cfg.reaction_kind == "xva") {
                if (!cfg.xva) throw ConfigError("xva reaction needs the xva block");
                XvaParams nl = cfg.xva->params;
                nl.theta_mtm = 1.0;
                cfg.problem.reaction = xva_problem(nl, cfg.xva->payoff, gr, cfg.T).reaction;
            } else
                throw ConfigError("kind must be zero, linear, quadratic, modulus_squared or xva");
        });

        const json* ij = rd.child(pb, "initial");
        const json& in = ij ? *ij : empty;
        cfg.initial_kind = rd.text(in, "kind", "gaussian", "problem.initial");
        if (cfg.initial_kind == "gaussian") {
            cfg.problem.initial = InitialData::from_hermite(HermiteData::gaussian(gr.dim()));
        } else if (cfg.initial_kind == "hermite") {
            cfg.problem.initial = InitialData::from_hermite(detail::read_hermite(rd, in, gr.dim()));
        } else if (cfg.initial_kind == "payoff") {
            if (!cfg.xva)
                rd.fail("problem.initial", "payoff data needs the xva block");
            else
                rd.guard("problem.initial", [&] { cfg.problem.initial = payoff_data(cfg.xva->payoff, gr.dim()); });
        } else {
            rd.fail("problem.initial.kind", "must be gaussian, hermite or payoff");
        }
        cfg.problem.grid = gr;
    }

    // command-specific requirements
    if (command == "verify-analyticity") {
        if (cfg.sweep.y.size() < 5) rd.fail("sweep.y", "verify-analyticity needs at least 5 shifts");
        if (cfg.sweep.t_prime.size() == 1) rd.fail("sweep.t_prime", "needs at least two T' values");
    }
    if (command == "xva" && !cfg.xva) rd.fail("xva", "block missing");
    if (command == "xva" && cfg.xva && grid_ok) {
        int want = cfg.xva->params.heston ? 2 : 1;
        if (cfg.grid.dim() != want)
            rd.fail("grid.dim", std::string("xva with ") + (want == 2 ? "heston" : "Black-Scholes") +
                                    " needs grid.dim = " + std::to_string(want));
    }
    if (command == "maxreg" && cfg.reaction_kind != "zero" && cfg.reaction_kind != "")
        rd.fail("problem.reaction", "maxreg studies the linear operator; set reaction.kind = zero");
    if (command == "convergence" && cfg.sweep.dt.size() == 1)
        rd.fail("sweep.dt", "needs at least two step sizes");

    if (!rd.violations.empty()) throw ValidationError(rd.violations);
    return cfg;
}

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError({"config: cannot open " + path});
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ValidationError({std::string("config: parse error: ") + e.what()});
    }
}

// ---------------------------------------------------------------------------
// Output

class CsvWriter {
public:
    CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path) {
        if (!out_) throw std::runtime_error("cannot write " + path.string());
        for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
        out_ << '\n';
    }

    /// Cells already formatted (numbers through `fmt`).
    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << '\n';
    }

    void row(const std::vector<double>& values) {
        std::vector<std::string> cells;
        for (double v : values) cells.push_back(fmt(v));
        row(cells);
    }

private:
    std::ofstream out_;
};

struct Series {
    std::string name;
    std::vector<double> x, y;
};

/// Minimal SVG line chart; log axes drop nonpositive points.
inline void write_svg(const fs::path& path, const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, const std::vector<Series>& series, bool logx = false,
                      bool logy = false) {
    const double W = 640, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
    auto tx = [&](double v) { return logx ? std::log10(v) : v; };
    auto ty = [&](double v) { return logy ? std::log10(v) : v; };
    auto ok = [&](double x, double y) {
        return std::isfinite(x) && std::isfinite(y) && (!logx || x > 0) && (!logy || y > 0);
    };
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i)
            if (ok(s.x[i], s.y[i])) {
                x0 = std::min(x0, tx(s.x[i]));
                x1 = std::max(x1, tx(s.x[i]));
                y0 = std::min(y0, ty(s.y[i]));
                y1 = std::max(y1, ty(s.y[i]));
            }
    if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    auto px = [&](double v) { return ml + (tx(v) - x0) / (x1 - x0) * (W - ml - mr); };
    auto py = [&](double v) { return H - mb - (ty(v) - y0) / (y1 - y0) * (H - mt - mb); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ofstream out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
        << "\" stroke=\"black\"/>\n";
    auto tick = [&](double v, bool log) {
        std::ostringstream s;
        s << std::setprecision(3) << (log ? std::pow(10.0, v) : v);
        return s.str();
    };
    for (int k = 0; k <= 4; ++k) {
        double vx = x0 + (x1 - x0) * k / 4.0, vy = y0 + (y1 - y0) * k / 4.0;
        double sx = ml + (W - ml - mr) * k / 4.0, sy = H - mb - (H - mt - mb) * k / 4.0;
        out << "<text x=\"" << sx << "\" y=\"" << H - mb + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
            << tick(vx, logx) << "</text>\n";
        out << "<text x=\"" << ml - 6 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
            << tick(vy, logy) << "</text>\n";
    }
    out << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"13\">" << xlabel
        << "</text>\n";
    out << "<text x=\"16\" y=\"" << H / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
        << H / 2 << ")\">" << ylabel << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* col = colors[k % 6];
        out << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            if (ok(s.x[i], s.y[i])) out << px(s.x[i]) << "," << py(s.y[i]) << " ";
        out << "\"/>\n";
        out << "<text x=\"" << W - mr - 4 << "\" y=\"" << mt + 14 * (k + 1) << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
            << col << "\">" << s.name << "</text>\n";
    }
    out << "</svg>\n";
}

struct ReportRow {
    std::string check;
    double measured = 0.0;
    std::string relation;  // "<", "<=", ">", ">=" or "info"
    double threshold = 0.0;

    bool pass() const {
        if (relation == "<") return measured < threshold;
        if (relation == "<=") return measured <= threshold;
        if (relation == ">") return measured > threshold;
        if (relation == ">=") return measured >= threshold;
        return std::isfinite(measured);
    }
    std::string status() const { return relation == "info" ? "info" : pass() ? "pass" : "fail"; }
};

struct JobStatus {
    std::string job;
    bool ok = true;
    std::string message;
};

struct RunResult {
    std::vector<ReportRow> report;
    std::vector<JobStatus> jobs;
    std::vector<std::string> files;

    bool all_jobs_ok() const {
        return std::all_of(jobs.begin(), jobs.end(), [](const auto& j) { return j.ok; });
    }
};

/// report.csv (check, measured, relation, threshold, pass) and report.txt; header only for no rows.
inline std::vector<std::string> emit_report(const fs::path& dir, const std::vector<ReportRow>& rows) {
    {
        CsvWriter csv(dir / "report.csv", {"check", "measured", "relation", "threshold", "pass"});
        for (const auto& r : rows)
            csv.row({r.check, fmt(r.measured), r.relation, fmt(r.threshold), r.status()});
    }
    std::ofstream txt(dir / "report.txt");
    std::size_t width = 5;
    for (const auto& r : rows) width = std::max(width, r.check.size());
    for (const auto& r : rows) {
        txt << std::left << std::setw(6) << r.status() << std::left << std::setw(int(width)) << r.check << "  "
            << fmt(r.measured);
        if (r.relation != "info") txt << " " << r.relation << " " << fmt(r.threshold);
        txt << '\n';
    }
    if (rows.empty()) txt << "no checks\n";
    return {"report.csv", "report.txt"};
}

// ---------------------------------------------------------------------------
// Commands

namespace detail {

inline std::vector<std::size_t> output_nodes(const SolveResult& res, int every) {
    std::size_t count = res.times.size();
    std::size_t stride = every > 0 ? std::size_t(every) : std::max<std::size_t>(1, (count - 1) / 10);
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < count; j += stride) idx.push_back(j);
    if (idx.back() != count - 1) idx.push_back(count - 1);
    return idx;
}

inline void write_trajectory(const fs::path& path, const SolveResult& res, const std::vector<std::size_t>& nodes) {
    const Grid& g = res.grid;
    std::vector<std::string> header{"t", "x1"};
    if (g.dim() == 2) header.push_back("x2");
    for (const char* h : {"component", "re_u", "im_u"}) header.push_back(h);
    CsvWriter csv(path, header);
    for (std::size_t j : nodes) {
        const auto& u = res.snapshots[j];
        for (int c = 0; c < u.components(); ++c)
            for (std::size_t f = 0; f < g.size(); ++f) {
                auto x = g.point(f);
                std::vector<std::string> cells{fmt(res.times[j].real()), fmt(x[0])};
                if (g.dim() == 2) cells.push_back(fmt(x[1]));
                cells.push_back(std::to_string(c));
                cells.push_back(fmt(u(c, f).real()));
                cells.push_back(fmt(u(c, f).imag()));
                csv.row(cells);
            }
    }
}

inline NormParams norm_params(const ExperimentConfig& cfg) {
    return NormParams::for_grid(cfg.grid, cfg.solver.p, cfg.problem.op.order_half());
}

/// Closed-form heat kernel for Gaussian data, any dimension, complex t.
inline double heat_error(const SolveResult& res, cplx t) {
    const Grid& g = res.grid;
    const auto& u = res.snapshots[res.nearest(t)];
    double worst = 0.0;
    for (std::size_t f = 0; f < g.size(); ++f) {
        auto x = g.point(f);
        cplx exact = 1.0;
        for (int ax = 0; ax < g.dim(); ++ax) {
            cplx s = 1.0 + 2.0 * t;
            exact *= std::exp(-x[ax] * x[ax] / (2.0 * s)) / std::sqrt(s);
        }
        worst = std::max(worst, std::abs(u(0, f) - exact));
    }
    return worst;
}

inline std::vector<double> default_ys(double ymax) {
    std::vector<double> ys;
    for (int i = -4; i <= 4; ++i) ys.push_back(ymax * i / 4.0);
    return ys;
}

template <class Fn>
void record(RunResult& rr, const std::string& job, Fn&& fn) {
    try {
        fn();
        rr.jobs.push_back({job, true, ""});
    } catch (const std::exception& e) {
        rr.jobs.push_back({job, false, e.what()});
    }
}

}  // namespace detail

inline RunResult run_solve(const ExperimentConfig& cfg, const fs::path& dir) {
    RunResult rr;
    auto res = solve_real(cfg.problem, cfg.t0, cfg.T, cfg.solver);
    auto nodes = detail::output_nodes(res, cfg.output_every);
    detail::write_trajectory(dir / "trajectory.csv", res, nodes);
    rr.files.push_back("trajectory.csv");

    std::optional<ShiftFamily> fam;
    if (!cfg.sweep.y.empty())
        detail::record(rr, "strip_family", [&] {
            fam = solve_shift_family(cfg.problem, cfg.sweep.y, cfg.t0, cfg.T, cfg.solver, cfg.jobs);
        });
    auto params = detail::norm_params(cfg);
    Series besov{"besov", {}, {}}, l2{"l2", {}, {}};
    {
        CsvWriter csv(dir / "norms.csv", {"t", "l2", "lp", "besov", "strip_norm"});
        for (std::size_t j : nodes) {
            const auto& u = res.snapshots[j];
            double b = besov_norm(u, params);
            double strip = b;
            if (fam) {
                std::vector<std::pair<std::vector<double>, ComplexField>> samples;
                for (std::size_t i = 0; i < fam->size(); ++i)
                    samples.emplace_back(fam->y_values[i], fam->results[i].snapshots[j]);
                strip = strip_norm(samples, params);
            }
            double t = res.times[j].real();
            csv.row({t, l2_norm(u), lp_norm(u, cfg.solver.p), b, strip});
            besov.x.push_back(t);
            besov.y.push_back(b);
            l2.x.push_back(t);
            l2.y.push_back(l2_norm(u));
        }
    }
    rr.files.push_back("norms.csv");
    write_svg(dir / "norms.svg", "solution norms", "t", "norm", {l2, besov});
    rr.files.push_back("norms.svg");

    rr.report.push_back({"solution_finite", res.final_state().all_finite() ? 1.0 : 0.0, ">", 0.5});
    double worst_ratio = 0.0;
    for (double r : res.diagnostics.contraction_ratios) worst_ratio = std::max(worst_ratio, r);
    if (cfg.solver.integrator == Integrator::picard_voc)
        rr.report.push_back({"picard_contraction_ratio", worst_ratio, "<", 1.0});
    rr.report.push_back({"strict_residual", res.diagnostics.final_residual, "info", 0.0});
    if (cfg.heat_benchmark()) rr.report.push_back({"heat_kernel_sup_error", detail::heat_error(res, cfg.T), "<", 1e-6});
    return rr;
}

inline RunResult run_verify(const ExperimentConfig& cfg, const fs::path& dir) {
    RunResult rr;
    const auto& sw = cfg.sweep;
    const auto& pb = cfg.problem;
    auto fam = solve_shift_family(pb, sw.y, cfg.t0, cfg.T, cfg.solver, cfg.jobs);

    // spatial CR refinement
    std::optional<CrRefinement> ref;
    detail::record(rr, "cr_space", [&] {
        ref = cr_refinement_study(pb, fam, cfg.T, sw.floor_deltas, cfg.solver, cfg.jobs);
    });
    {
        CsvWriter csv(dir / "cr_space.csv", {"dy", "t", "residual"});
        if (ref)
            for (std::size_t k = 0; k < ref->deltas.size(); ++k) csv.row({ref->deltas[k], cfg.T, ref->residuals[k]});
    }
    rr.files.push_back("cr_space.csv");
    if (ref) {
        write_svg(dir / "cr_space.svg", "spatial Cauchy-Riemann residual", "dy", "residual",
                  {{"residual", ref->deltas, ref->residuals}}, true, true);
        rr.files.push_back("cr_space.svg");
        rr.report.push_back({"cr_space_observed_order", ref->observed_order, ">=", 1.9});
        rr.report.push_back({"cr_space_floor", ref->floor, "<=", 1e-6});
    }

    // temporal CR
    const double rho = sw.rho.value_or(0.5 * (cfg.t0 + cfg.T));
    std::vector<double> dmus = sw.d_mu.empty() ? std::vector<double>{0.04, 0.02, 0.01} : sw.d_mu;
    {
        CsvWriter csv(dir / "cr_time.csv", {"d_mu", "rho", "residual"});
        for (double d : dmus)
            detail::record(rr, "cr_time d_mu=" + fmt(d), [&] {
                csv.row({d, rho, cr_residual_time(pb, 1.0, d, rho, cfg.solver, cfg.jobs)});
            });
    }
    rr.files.push_back("cr_time.csv");

    // path independence
    const double sigma = sw.sigma.value_or(cfg.T);
    std::vector<double> taus = sw.tau.empty() ? std::vector<double>{0.1 * sigma} : sw.tau;
    std::vector<double> tps = sw.t_prime.empty() ? std::vector<double>{0.4 * sigma, 0.6 * sigma} : sw.t_prime;
    double worst_spread = 0.0;
    bool any_path = false;
    {
        CsvWriter csv(dir / "path_independence.csv", {"sigma", "tau", "t_prime_a", "t_prime_b", "spread"});
        for (double tau : taus)
            detail::record(rr, "path tau=" + fmt(tau), [&] {
                auto pi_check = path_independence_check(pb, sigma, tau, tps, cfg.solver, cfg.jobs);
                for (std::size_t a = 0; a < tps.size(); ++a)
                    for (std::size_t b = a + 1; b < tps.size(); ++b) {
                        double s = sup_distance(pi_check.endpoints[a], pi_check.endpoints[b]);
                        csv.row({sigma, tau, tps[a], tps[b], s});
                    }
                worst_spread = std::max(worst_spread, pi_check.spread);
                any_path = true;
            });
    }
    rr.files.push_back("path_independence.csv");
    if (any_path) rr.report.push_back({"path_independence_spread", worst_spread, "<", 1e-6});

    // Hardy integrals along the first path, for every shift
    {
        CsvWriter csv(dir / "hardy.csv", {"y", "tau", "lhs_du_dt", "lhs_derivs", "total"});
        const int m = pb.op.order_half();
        for (double y : sw.y)
            for (double tau : taus)
                detail::record(rr, "hardy y=" + fmt(y) + " tau=" + fmt(tau), [&] {
                    std::vector<cplx> shift(cfg.grid.dim(), 0.0);
                    shift[0] = cplx(0.0, y);
                    auto traj = solve_along_path(pb, sigma, tau, tps.front(), cfg.solver, shift);
                    auto h = hardy_integral(traj, m, cfg.solver.p, 1.0);
                    csv.row({y, tau, h.derivative_part, h.sobolev_part, h.value});
                });
    }
    rr.files.push_back("hardy.csv");

    auto sup = strip_sup_over_time(fam, detail::norm_params(cfg));
    rr.report.push_back({"strip_sup_besov", sup.value, "info", 0.0});
    if (cfg.heat_benchmark()) {
        double worst = 0.0;
        for (std::size_t i = 0; i < fam.size(); ++i) {
            const auto& u = fam.results[i].final_state();
            for (std::size_t f = 0; f < cfg.grid.size(); ++f) {
                cplx x = cfg.grid.point(f)[0] + I * fam.y(i);
                cplx s = 1.0 + 2.0 * cplx(cfg.T);
                cplx exact = std::exp(-x * x / (2.0 * s)) / std::sqrt(s);
                if (cfg.grid.dim() == 2) {
                    double x2 = cfg.grid.point(f)[1];
                    exact *= std::exp(-x2 * x2 / (2.0 * s)) / std::sqrt(s);
                }
                worst = std::max(worst, std::abs(u(0, f) - exact));
            }
        }
        rr.report.push_back({"shift_family_kernel_error", worst, "<", 1e-6});
    }
    return rr;
}

inline RunResult run_xva(const ExperimentConfig& cfg, const fs::path& dir) {
    RunResult rr;
    const auto& setup = *cfg.xva;
    std::vector<double> eps = cfg.sweep.epsilon;
    if (eps.empty()) eps.push_back(setup.params.epsilon);
    struct Priced {
        bool ok = false;
        std::string error;
        SolveResult V, nonlinear, linear;
    };
    auto priced = parallel_map(eps.size(), cfg.jobs, [&](std::size_t i) {
        Priced out;
        try {
            XvaParams p = setup.params;
            PayoffSpec pay = setup.payoff;
            p.epsilon = eps[i];
            if (pay.kind != PayoffKind::hermite_expansion) pay.epsilon = eps[i];
            out.V = price_riskfree(p, pay, cfg.grid, cfg.T, cfg.solver);
            out.nonlinear = price_xva_nonlinear(p, pay, cfg.grid, cfg.T, cfg.solver);
            out.linear = price_xva_linear(p, pay, out.V, cfg.grid, cfg.T, cfg.solver);
            out.ok = true;
        } catch (const std::exception& e) {
            out.error = e.what();
        }
        return out;
    });

    const Grid& g = cfg.grid;
    const double log_k = std::log(setup.payoff.strike);
    auto at_money = [&](const ComplexField& u) {
        std::vector<double> x{log_k, 0.0};
        return fourier_interpolate(u, std::span<const double>(x.data(), g.dim())).real();
    };
    // rows along the X axis (variance coordinate 0 for Heston)
    auto x_rows = [&] {
        std::vector<std::size_t> f;
        for (int j = 0; j < g.n(); ++j) f.push_back(g.flatten(j, g.dim() == 2 ? g.n() / 2 : 0));
        return f;
    }();

    {
        CsvWriter sweep(dir / "xva_sweep.csv", {"epsilon", "xva_at_atm", "sup_diff_linear_nonlinear"});
        for (std::size_t i = 0; i < eps.size(); ++i) {
            rr.jobs.push_back({"price eps=" + fmt(eps[i]), priced[i].ok, priced[i].error});
            if (!priced[i].ok) continue;
            const auto& pr = priced[i];
            sweep.row({eps[i], at_money(pr.nonlinear.final_state()) - at_money(pr.V.final_state()),
                       sup_distance(pr.nonlinear.final_state(), pr.linear.final_state())});
        }
    }
    rr.files.push_back("xva_sweep.csv");

    std::size_t base = eps.size();
    for (std::size_t i = 0; i < eps.size(); ++i)
        if (priced[i].ok && eps[i] == setup.params.epsilon) base = i;
    if (base == eps.size())
        for (std::size_t i = 0; i < eps.size(); ++i)
            if (priced[i].ok) {
                base = i;
                break;
            }
    {
        CsvWriter csv(dir / "xva.csv", {"X", "tau", "V", "V_hat_nonlinear", "V_hat_linear", "xva"});
        if (base < eps.size()) {
            const auto& pr = priced[base];
            for (std::size_t j : detail::output_nodes(pr.V, cfg.output_every))
                for (std::size_t f : x_rows) {
                    double v = pr.V.snapshots[j](0, f).real();
                    double vn = pr.nonlinear.snapshots[j](0, f).real();
                    double vl = pr.linear.snapshots[j](0, f).real();
                    csv.row({g.point(f)[0], pr.V.times[j].real(), v, vn, vl, vn - v});
                }
            Series s{"xva", {}, {}};
            for (std::size_t f : x_rows) {
                s.x.push_back(g.point(f)[0]);
                s.y.push_back((pr.nonlinear.final_state()(0, f) - pr.V.final_state()(0, f)).real());
            }
            write_svg(dir / "xva.svg", "XVA at maturity", "X = log S", "V_hat - V", {s});
            rr.files.push_back("xva.svg");

            const auto& p = setup.params;
            double atm = at_money(pr.V.final_state());
            rr.report.push_back({"riskfree_price_atm", atm, "info", 0.0});
            if (!p.heston && setup.payoff.kind == PayoffKind::smoothed_call) {
                double F = setup.payoff.strike * std::exp((p.q_S - p.gamma_S) * cfg.T);
                double sd = p.sigma * std::sqrt(cfg.T);
                double K = setup.payoff.strike;
                double d1 = (std::log(F / K) + 0.5 * sd * sd) / sd;
                auto ncdf = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
                double bs = std::exp(-p.r * cfg.T) * (F * ncdf(d1) - K * ncdf(d1 - sd));
                rr.report.push_back({"riskfree_vs_black_scholes_rel", std::abs(atm - bs) / bs, "<", 1e-2});
            }
            rr.report.push_back({"xva_atm", at_money(pr.nonlinear.final_state()) - atm, "info", 0.0});
            rr.report.push_back(
                {"sup_diff_linear_nonlinear", sup_distance(pr.nonlinear.final_state(), pr.linear.final_state()),
                 "info", 0.0});
        }
    }
    rr.files.push_back("xva.csv");
    return rr;
}

namespace detail {

inline EllipticitySamples ellipticity_samples(const Grid& g, double theta0, int count) {
    EllipticitySamples s;
    s.thetas = theta_grid(theta0, count);
    int stride = std::max(1, g.n() / 16);
    for (int a = 0; a < g.n(); a += stride) {
        if (g.dim() == 1) {
            s.points.push_back({cplx(g.node(a))});
            continue;
        }
        for (int b = 0; b < g.n(); b += stride) s.points.push_back({cplx(g.node(a)), cplx(g.node(b))});
    }
    if (g.dim() == 1) {
        s.xis = {{1.0}};
    } else {
        for (int k = 0; k < 16; ++k) s.xis.push_back({std::cos(pi * k / 16.0), std::sin(pi * k / 16.0)});
    }
    s.etas = {{1.0}};
    return s;
}

}  // namespace detail

inline RunResult run_ellipticity(const ExperimentConfig& cfg, const fs::path& dir) {
    RunResult rr;
    const auto& op = cfg.problem.op;
    const auto& es = cfg.ellipticity;
    auto samples = detail::ellipticity_samples(cfg.grid, es.theta0, es.count);
    auto ens = bandlimited_ensemble(cfg.grid, es.samples, cfg.seed, op.components());
    double worst_c = std::numeric_limits<double>::infinity();
    Series cs{"c_hat", {}, {}}, c1s{"garding_c1", {}, {}};
    {
        CsvWriter csv(dir / "ellipticity.csv", {"theta", "c_hat", "garding_c1", "garding_c2"});
        auto rows = parallel_map(samples.thetas.size(), cfg.jobs, [&](std::size_t k) {
            EllipticitySamples one = samples;
            one.thetas = {samples.thetas[k]};
            double c = estimate_ellipticity_constant(op, one);
            auto fit = verify_garding(op, ens, {samples.thetas[k]}, {}, {0.0});
            return std::array<double, 4>{samples.thetas[k], c, fit.c1, fit.c2};
        });
        for (const auto& r : rows) {
            csv.row({r[0], r[1], r[2], r[3]});
            worst_c = std::min(worst_c, r[1]);
            cs.x.push_back(r[0]);
            cs.y.push_back(r[1]);
            c1s.x.push_back(r[0]);
            c1s.y.push_back(r[2]);
        }
    }
    rr.files.push_back("ellipticity.csv");
    write_svg(dir / "ellipticity.svg", "rotated ellipticity and Garding constants", "theta", "constant", {cs, c1s});
    rr.files.push_back("ellipticity.svg");
    rr.report.push_back({"ellipticity_constant_min", worst_c, ">", 0.0});

    if (!cfg.sweep.v_min.empty() && cfg.operator_kind == "heston") {
        CsvWriter csv(dir / "ellipticity_vmin.csv", {"v_min", "c_hat"});
        for (double vmin : cfg.sweep.v_min)
            detail::record(rr, "heston v_min=" + fmt(vmin), [&] {
                XvaParams p = cfg.xva->params;
                p.heston->v_min = vmin;
                auto hop = heston_generator(p, cfg.grid.half_length(), op.temporal());
                EllipticitySamples one = samples;
                one.thetas = {0.0};
                csv.row({vmin, estimate_ellipticity_constant(hop, one)});
            });
        rr.files.push_back("ellipticity_vmin.csv");
    }
    return rr;
}

inline RunResult run_maxreg(const ExperimentConfig& cfg, const fs::path& dir) {
    RunResult rr;
    std::vector<double> horizons = cfg.sweep.horizons.empty() ? std::vector<double>{0.25, 0.5, 1.0} : cfg.sweep.horizons;
    std::sort(horizons.begin(), horizons.end());
    auto ens = max_reg_ensemble(cfg.grid, cfg.maxreg.samples, cfg.seed, cfg.maxreg.modes);
    auto sweep = max_reg_sweep(cfg.problem.op, horizons, cfg.maxreg.p, ens, cfg.solver, cfg.jobs);
    {
        CsvWriter csv(dir / "maxreg.csv", {"T", "p", "M_hat"});
        for (std::size_t k = 0; k < horizons.size(); ++k) csv.row({horizons[k], cfg.maxreg.p, sweep[k]});
    }
    rr.files.push_back("maxreg.csv");
    write_svg(dir / "maxreg.svg", "maximal regularity estimate", "T", "M_hat", {{"M_hat", horizons, sweep}});
    rr.files.push_back("maxreg.svg");
    double worst_drop = 0.0;
    for (std::size_t k = 1; k < sweep.size(); ++k) worst_drop = std::max(worst_drop, sweep[k - 1] - sweep[k]);
    rr.report.push_back({"maxreg_monotone_drop", worst_drop, "<=", 0.0});
    return rr;
}

inline RunResult run_convergence(const ExperimentConfig& cfg, const fs::path& dir) {
    RunResult rr;
    std::vector<double> dts = cfg.sweep.dt;
    if (dts.empty()) dts = {cfg.solver.dt, 0.5 * cfg.solver.dt, 0.25 * cfg.solver.dt};
    std::sort(dts.rbegin(), dts.rend());
    const bool exact = cfg.heat_benchmark();

    ComplexField reference;
    if (!exact) {
        SolverConfig fine = cfg.solver;
        fine.integrator = Integrator::picard_voc;
        fine.dt = 0.25 * dts.back();
        reference = solve_real(cfg.problem, cfg.t0, cfg.T, fine).final_state();
    }
    struct Job {
        Integrator integ;
        double dt;
    };
    std::vector<Job> jobs;
    for (auto integ : {Integrator::picard_voc, Integrator::imex})
        for (double dt : dts) jobs.push_back({integ, dt});
    auto errors = parallel_map(jobs.size(), cfg.jobs, [&](std::size_t i) {
        SolverConfig c = cfg.solver;
        c.integrator = jobs[i].integ;
        c.dt = jobs[i].dt;
        auto res = solve_real(cfg.problem, cfg.t0, cfg.T, c);
        return exact ? detail::heat_error(res, cfg.T) : sup_distance(res.final_state(), reference);
    });
    std::vector<Series> plots;
    {
        CsvWriter csv(dir / "convergence.csv", {"integrator", "dt", "error", "order"});
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            bool first = i == 0 || jobs[i - 1].integ != jobs[i].integ;
            double order = first ? std::nan("") : std::log(errors[i - 1] / errors[i]) / std::log(jobs[i - 1].dt / jobs[i].dt);
            csv.row({to_string(jobs[i].integ), fmt(jobs[i].dt), fmt(errors[i]), fmt(order)});
            if (first) plots.push_back({to_string(jobs[i].integ), {}, {}});
            plots.back().x.push_back(jobs[i].dt);
            plots.back().y.push_back(errors[i]);
        }
    }
    rr.files.push_back("convergence.csv");
    write_svg(dir / "convergence.svg", exact ? "error against the closed form" : "error against a fine reference",
              "dt", "sup error", plots, true, true);
    rr.files.push_back("convergence.svg");
    // cross-integrator order: difference between the two integrators under halving
    if (dts.size() >= 2) {
        const std::size_t k = dts.size();
        std::vector<double> gap;
        for (std::size_t j = 0; j < k; ++j) gap.push_back(std::abs(errors[j] - errors[k + j]));
        double order = std::numeric_limits<double>::infinity();
        for (std::size_t j = 1; j < k; ++j)
            if (gap[j] > 0.0) order = std::min(order, std::log(gap[j - 1] / gap[j]) / std::log(dts[j - 1] / dts[j]));
        rr.report.push_back({"imex_error_order", std::log(errors[k] / errors[k + 1]) / std::log(dts[0] / dts[1]), "info", 0.0});
        if (exact) rr.report.push_back({"finest_error_picard", errors[k - 1], "<", 1e-6});
    }
    return rr;
}

// ---------------------------------------------------------------------------
// Driver

struct RunOptions {
    std::string command;
    std::string config_path;
    std::optional<std::string> output;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
};

inline std::string json_escape(const std::string& s) { return json(s).dump(); }

/// Machine-readable one-line error on stderr.
inline void print_error(std::ostream& err, const std::string& kind, const std::string& message,
                        const std::vector<std::string>& violations = {}) {
    json j;
    j["error"] = kind;
    j["message"] = message;
    if (!violations.empty()) j["violations"] = violations;
    err << j.dump() << '\n';
}

inline std::string utc_timestamp() {
    std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline json versions() {
    json v;
    v["parastrip"] = version;
    v["compiler"] = __VERSION__;
    v["fftw"] = std::string(fftw_version);
    v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    v["json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH);
    return v;
}

/// Runs one command. Exit codes: 0 success, 1 run failure, 2 invalid config, 3 some sweep jobs failed.
inline int run(const RunOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    ExperimentConfig cfg;
    try {
        cfg = parse_config(load_json(opt.config_path), opt.command);
    } catch (const ValidationError& e) {
        print_error(err, "config", e.what(), e.violations());
        return 2;
    } catch (const ConfigError& e) {
        print_error(err, "config", e.what(), {e.what()});
        return 2;
    }
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.jobs) {
        if (*opt.jobs < 1) {
            print_error(err, "config", "--jobs must be >= 1", {"jobs: must be >= 1"});
            return 2;
        }
        cfg.jobs = *opt.jobs;
    }
    fs::path dir = opt.output ? fs::path(*opt.output) : fs::path(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        print_error(err, "io", "cannot create output directory " + dir.string() + ": " + ec.message());
        return 1;
    }

    RunResult rr;
    try {
        if (cfg.command == "solve") rr = run_solve(cfg, dir);
        else if (cfg.command == "verify-analyticity") rr = run_verify(cfg, dir);
        else if (cfg.command == "xva") rr = run_xva(cfg, dir);
        else if (cfg.command == "ellipticity") rr = run_ellipticity(cfg, dir);
        else if (cfg.command == "maxreg") rr = run_maxreg(cfg, dir);
        else rr = run_convergence(cfg, dir);
    } catch (const ConfigError& e) {
        print_error(err, "config", e.what(), {e.what()});
        return 2;
    } catch (const std::exception& e) {
        print_error(err, "run", e.what());
        return 1;
    }
    for (const auto& f : emit_report(dir, rr.report)) rr.files.push_back(f);

    json manifest;
    manifest["command"] = cfg.command;
    manifest["config_path"] = opt.config_path;
    manifest["config_hash"] = hex64(fnv1a(cfg.raw.dump()));
    manifest["seed"] = cfg.seed;
    manifest["jobs"] = cfg.jobs;
    manifest["timestamp"] = utc_timestamp();
    manifest["versions"] = versions();
    manifest["status"] = rr.all_jobs_ok() ? "ok" : "partial";
    json jobs = json::array();
    for (const auto& j : rr.jobs) jobs.push_back({{"job", j.job}, {"ok", j.ok}, {"message", j.message}});
    manifest["jobs_status"] = jobs;
    rr.files.push_back("manifest.json");
    std::sort(rr.files.begin(), rr.files.end());
    manifest["files"] = rr.files;
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';

    for (const auto& r : rr.report)
        out << r.status() << " " << r.check << " = " << fmt(r.measured) << '\n';
    for (const auto& j : rr.jobs)
        if (!j.ok) print_error(err, "job", j.job + ": " + j.message);
    out << "wrote " << rr.files.size() << " files to " << dir.string() << '\n';
    return rr.all_jobs_ok() ? 0 : 3;
}

}  // namespace parastrip::cli
