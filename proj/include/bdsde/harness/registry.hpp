#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "bdsde/bdsde_solver.hpp"
#include "bdsde/doss_transform.hpp"
#include "bdsde/harness/config.hpp"
#include "bdsde/pde_oracles.hpp"
#include "bdsde/rbdsde_solver.hpp"
#include "bdsde/tbdsde_solver.hpp"

namespace bdsde::harness {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct RunContext {
    const ExperimentConfig& cfg;
    std::string backend;
    TimeGrid grid;
    BackwardPath w;
    VolatilityGrid volgrid;
    double x0 = 0.0;
    std::map<std::string, double> params;

    double param(const std::string& k) const { return params.at(k); }
    double a_high() const { return volgrid.scalar_high(); }
    DpOptions dp_options() const {
        DpOptions o;
        o.lattice.engine = cfg.engine == "tree" ? DpEngine::tree : DpEngine::lattice;
        o.lattice.x0 = x0;
        o.lattice.dx_per_dt = cfg.dx_per_dt;
        o.lattice.x_steps = cfg.x_steps;
        o.lattice.half_width_sd = cfg.half_width_sd;
        o.noise = cfg.scheme == "stratonovich" ? NoiseScheme::stratonovich : NoiseScheme::backward_ito;
        return o;
    }
};

struct Extra {
    std::string quantity;
    double value = 0.0;
    double oracle = kNaN;
};

struct ProblemOutput {
    double value = 0.0;  // primary quantity Y_0
    double oracle = kNaN;
    double se = 0.0;     // Monte Carlo standard error, 0 otherwise
    std::vector<Extra> extras;
};

struct ProblemEntry {
    std::string name;
    std::string description;
    std::string oracle;  // "none" when no ground truth exists
    std::vector<std::string> backends;  // first is the default
    std::map<std::string, double> params;
    double x0 = 0.0;
    double a_low = 1.0, a_high = 1.0;
    int n_points = 1;
    double tol_abs = 0.0, tol_rel = 0.0;
    double expected_order = kNaN;  // NaN: exact scheme, errors at rounding level
    double order_tolerance = 0.3;
    std::function<ProblemOutput(const RunContext&)> solve;

    bool has_oracle() const { return oracle != "none"; }
    bool supports(const std::string& b) const {
        for (const auto& x : backends)
            if (x == b) return true;
        return false;
    }
};

namespace detail {

inline BdsdeSolution tree_or_mc(const BdsdeProblem& p, const RunContext& c, double a, ProblemOutput& out) {
    if (c.backend == "mc") {
        const PathEnsemble ens = sample_forward_ensemble(c.grid, c.cfg.n_paths, mat1(a), c.cfg.b_seed, vec1(c.x0));
        BdsdeSolution s = solve_regression(p, ens, c.w, PolynomialBasis{c.cfg.basis_degree});
        out.se = s.y0_se;
        return s;
    }
    return solve_tree(p, build_tree(c.grid, a, 2, c.x0), c.w);
}

inline ScalarTerminal scalar(const std::function<double(double)>& f) { return f; }

inline double fd_half_width(const RunContext& c) {
    return c.cfg.half_width_sd * std::sqrt(c.a_high() * c.cfg.T);
}

// FD on htilde = sup_a 1/2 a gamma + extra(t, x, y, z, a).
inline FdSolution fd_uncertain(const RunContext& c, const std::function<double(double)>& phi, const HtildeFn& h,
                               const std::function<double(double, double)>& boundary) {
    RandomPdeProblem p;
    p.htilde = h;
    p.terminal = phi;
    const double L = fd_half_width(c);
    p.x_lo = c.x0 - L;
    p.x_hi = c.x0 + L;
    p.diffusivity_bound = c.a_high();
    if (boundary) {
        p.boundary = FdBoundary::dirichlet;
        p.dirichlet = boundary;
    }
    const int xs = c.cfg.x_steps > 0 ? c.cfg.x_steps : 2 * static_cast<int>(std::ceil(L / (c.cfg.dx_per_dt * c.grid.dt)));
    return fd_random_pde(p, c.grid, xs);
}

inline HtildeFn bsb_htilde(const VolatilityGrid& vg) {
    return [vg](double, double, double, double, double g) {
        double best = -kInf;
        for (int k = 0; k < vg.size(); ++k) best = std::max(best, 0.5 * vg.scalar(k) * g);
        return best;
    };
}

inline ProblemOutput bsb(const RunContext& c, double sign) {
    const Polynomial phi{{0.0, 0.0, sign}};
    ProblemOutput out;
    out.oracle = bsb_closed_form(phi, c.volgrid.scalar_low(), c.a_high(), c.cfg.T, c.x0);
    if (c.backend == "fd") {
        const auto& vg = c.volgrid;
        const double T = c.cfg.T;
        const auto fd = fd_uncertain(c, phi, bsb_htilde(vg), [phi, vg, T](double t, double x) {
            return bsb_closed_form(phi, vg.scalar_low(), vg.scalar_high(), T - t, x);
        });
        out.value = fd.value(0, c.x0);
        out.extras.push_back({"fd_substeps", static_cast<double>(fd.substeps)});
        return out;
    }
    TbdsdeProblem p;
    p.terminal = [phi](double x) { return phi(x); };
    p.volgrid = c.volgrid;
    const auto sol = solve_dp(p, c.grid, c.w, c.dp_options());
    out.value = sol.Y0;
    const int target = sign > 0 ? c.volgrid.size() - 1 : 0;
    out.extras.push_back({sign > 0 ? "argmax_high_fraction" : "argmax_low_fraction", argmax_fraction(sol, target)});
    const auto kt = extract_k(sol, p, c.w);
    out.extras.push_back({"expected_K_T", kt.expected_KT});
    out.extras.push_back({"minimality_gap", minimality_gap(p, sol, c.w).gap[0]});
    return out;
}

inline SpdeProblem linear_spde_problem(const RunContext& c) {
    SpdeProblem s;
    s.phi = [](double x) { return x * x; };
    s.g = linear_flow(c.param("beta"));
    s.volgrid = c.volgrid;
    return s;
}

inline FlowLattice small_flow_lattice(double x0) {
    return FlowLattice{uniform_points(x0 - 1.0, x0 + 1.0, 3), uniform_points(-20.0, 20.0, 5)};
}

}  // namespace detail

inline const std::vector<ProblemEntry>& registry() {
    static const std::vector<ProblemEntry> r = [] {
        std::vector<ProblemEntry> v;
        {
            ProblemEntry e;
            e.name = "identity";
            e.description = "f = g = 0, xi = X_T: Y_0 = x0";
            e.oracle = "martingale";
            e.backends = {"tree", "mc", "dp"};
            e.x0 = 0.5;
            e.tol_abs = 1e-9;
            e.solve = [](const RunContext& c) {
                ProblemOutput out;
                out.oracle = c.x0;
                if (c.backend == "dp") {
                    TbdsdeProblem p;
                    p.terminal = [](double x) { return x; };
                    p.volgrid = c.volgrid;
                    out.value = solve_dp(p, c.grid, c.w, c.dp_options()).Y0;
                    return out;
                }
                BdsdeProblem p;
                p.terminal = [](const Vec& x) { return x(0); };
                out.value = detail::tree_or_mc(p, c, c.a_high(), out).y0;
                return out;
            };
            v.push_back(e);
        }
        {
            ProblemEntry e;
            e.name = "heat";
            e.description = "discounted heat equation: f = -r y, xi = x^2";
            e.oracle = "exp(-r T) (x0^2 + a T)";
            e.backends = {"tree", "mc", "dp"};
            e.params = {{"r", 0.5}};
            e.x0 = 0.5;
            e.tol_rel = 0.02;
            e.expected_order = 1.0;
            e.solve = [](const RunContext& c) {
                const double r = c.param("r"), a = c.a_high(), T = c.cfg.T;
                ProblemOutput out;
                out.oracle = std::exp(-r * T) * (c.x0 * c.x0 + a * T);
                if (c.backend == "dp") {
                    TbdsdeProblem p;
                    p.terminal = [](double x) { return x * x; };
                    p.F = [r](double, double, double y, double, double) { return -r * y; };
                    p.lipschitz_y = r;
                    p.volgrid = c.volgrid;
                    out.value = solve_dp(p, c.grid, c.w, c.dp_options()).Y0;
                    return out;
                }
                BdsdeProblem p;
                p.terminal = [](const Vec& x) { return x(0) * x(0); };
                p.f = [r](double, const Vec&, double y, const Vec&) { return -r * y; };
                p.lipschitz_y = r;
                out.value = detail::tree_or_mc(p, c, a, out).y0;
                return out;
            };
            v.push_back(e);
        }
        {
            ProblemEntry e;
            e.name = "classical_bdsde_linear";
            e.description = "g = beta, xi = x^2, singleton volatility";
            e.oracle = "x0^2 + a T + beta (W_T - W_0)";
            e.backends = {"tree", "mc", "dp"};
            e.params = {{"beta", 0.3}};
            e.x0 = 0.5;
            e.tol_abs = 1e-8;
            e.solve = [](const RunContext& c) {
                const double beta = c.param("beta"), a = c.a_high();
                ProblemOutput out;
                out.oracle = c.x0 * c.x0 + a * c.cfg.T + beta * c.w.tail1(0);
                TbdsdeProblem tp;
                tp.terminal = [](double x) { return x * x; };
                tp.g = [beta](double, double, double, double) { return beta; };
                tp.volgrid = c.volgrid;
                if (c.backend == "dp") {
                    out.value = solve_dp(tp, c.grid, c.w, c.dp_options()).Y0;
                    return out;
                }
                BdsdeProblem p;
                p.terminal = [](const Vec& x) { return x(0) * x(0); };
                p.g = [beta](double, const Vec&, double, const Vec&) { return vec1(beta); };
                out.value = detail::tree_or_mc(p, c, a, out).y0;
                // K on the shared trinomial geometry, and the nodewise match
                DpOptions o = c.dp_options();
                o.lattice.engine = DpEngine::tree;
                o.noise = NoiseScheme::backward_ito;
                const auto dp = solve_dp(tp, c.grid, c.w, o);
                const auto kt = extract_k(dp, tp, c.w);
                out.extras.push_back({"K_T", kt.max_KT, 0.0});
                const auto tri = solve_tree(p, build_tree(c.grid, a, 3, c.x0, dp.op().geometry().dx), c.w);
                double diff = 0.0;
                for (int i = 0; i <= c.grid.n_steps; ++i)
                    for (std::size_t j = 0; j < tri.y[i].size(); ++j)
                        diff = std::max(diff, std::abs(tri.y[i][j] - dp.levels[i].y[j]));
                out.extras.push_back({"dp_tree_max_diff", diff, 0.0});
                return out;
            };
            v.push_back(e);
        }
        for (double sign : {1.0, -1.0}) {
            ProblemEntry e;
            e.name = sign > 0 ? "bsb_quadratic" : "bsb_concave";
            e.description = sign > 0 ? "uncertain volatility, xi = x^2" : "uncertain volatility, xi = -x^2";
            e.oracle = "heat semigroup at the extremal volatility";
            e.backends = {"dp", "fd"};
            e.x0 = 1.0;
            e.a_low = 0.5;
            e.a_high = 2.0;
            e.n_points = 4;
            e.tol_rel = 0.02;
            e.expected_order = 1.0;
            e.solve = [sign](const RunContext& c) { return detail::bsb(c, sign); };
            v.push_back(e);
        }
        {
            ProblemEntry e;
            e.name = "linear_spde";
            e.description = "du + 1/2 u_xx dt + beta u o dW = 0, u(T) = x^2";
            e.oracle = "exp(beta (W_T - W_t)) (P_{T-t} phi)(x)";
            e.backends = {"dp", "doss", "fd"};
            e.params = {{"beta", 0.4}};
            e.x0 = 0.0;
            e.tol_rel = 0.02;
            e.expected_order = 1.0;
            e.solve = [](const RunContext& c) {
                const double beta = c.param("beta");
                ProblemOutput out;
                out.oracle = linear_spde_closed_form(beta, Polynomial{{0.0, 0.0, 1.0}}, c.w, 0, c.x0);
                const SpdeProblem s = detail::linear_spde_problem(c);
                if (c.backend == "dp") {
                    const DpOptions o = c.dp_options();
                    const TbdsdeProblem p = o.noise == NoiseScheme::stratonovich ? stratonovich_problem(s) : ito_problem(s);
                    out.value = solve_dp(p, c.grid, c.w, o).Y0;
                    return out;
                }
                const FlowField flow = solve_flow(s.g, c.w, detail::small_flow_lattice(c.x0));
                if (c.backend == "doss") {
                    const auto r = solve_via_doss(s, c.grid, flow, c.w, c.dp_options());
                    out.value = r.Y0;
                    out.extras.push_back({"U0", r.U0});
                    return out;
                }
                const auto h = transformed_hamiltonian(s, flow);
                const auto fd = detail::fd_uncertain(c, s.phi, h, {});
                out.value = flow.evaluate(0, c.x0, fd.value(0, c.x0)).eta;
                out.extras.push_back({"U0", fd.value(0, c.x0)});
                return out;
            };
            v.push_back(e);
        }
        {
            ProblemEntry e;
            e.name = "reflected_constant_barrier";
            e.description = "f = g = 0, xi = 0, S = 1 on [0, T), S_T = 0";
            e.oracle = "Snell envelope: 1";
            e.backends = {"reflected", "penalized"};
            e.params = {{"n_pen", 1000.0}};
            e.tol_abs = 1e-3;
            e.solve = [](const RunContext& c) {
                const double T = c.cfg.T;
                BdsdeProblem p;
                p.terminal = [](const Vec&) { return 0.0; };
                Barrier b;
                b.S = [T](double t, double) { return t < T ? 1.0 : 0.0; };
                const BrownianTree tree = build_tree(c.grid, c.a_high(), 2, c.x0);
                ProblemOutput out;
                out.oracle = 1.0;
                if (c.backend == "penalized") {
                    out.value = solve_penalized(p, b, c.param("n_pen"), tree, c.w).y0;
                    return out;
                }
                const auto r = solve_reflected(p, b, tree, c.w);
                out.value = r.Y0;
                out.extras.push_back({"expected_K_T", r.expected_KT, 1.0});
                const auto sk = skorokhod_diagnostic(r);
                out.extras.push_back({"skorokhod_literal", sk.literal, 0.0});
                out.extras.push_back({"skorokhod_lagged", sk.lagged});
                return out;
            };
            v.push_back(e);
        }
        {
            ProblemEntry e;
            e.name = "flow_linear";
            e.description = "Doss flow for g = beta y, eta(0, x0, y) by Heun steps";
            e.oracle = "y exp(beta (W_T - W_0))";
            e.backends = {"flow"};
            e.params = {{"beta", 0.4}, {"y", 1.0}};
            e.tol_rel = 5e-3;
            e.expected_order = 2.0;
            e.order_tolerance = 0.4;
            e.solve = [](const RunContext& c) {
                const double beta = c.param("beta"), y = c.param("y");
                const FlowField flow = solve_flow(linear_flow(beta), c.w, detail::small_flow_lattice(c.x0));
                ProblemOutput out;
                out.value = flow.evaluate(0, c.x0, y).eta;
                out.oracle = y * std::exp(beta * c.w.tail1(0));
                const InverseField inv = invert_flow(flow);
                out.extras.push_back({"roundtrip_error", roundtrip_error(flow, inv), 0.0});
                return out;
            };
            v.push_back(e);
        }
        {
            ProblemEntry e;
            e.name = "mixed_convexity";
            e.description = "uncertain volatility with xi = x^3/3 - x";
            e.oracle = "none";
            e.backends = {"dp", "fd"};
            e.x0 = 0.0;
            e.a_low = 0.5;
            e.a_high = 2.0;
            e.n_points = 4;
            e.solve = [](const RunContext& c) {
                const Polynomial phi{{0.0, -1.0, 0.0, 1.0 / 3.0}};
                ProblemOutput out;
                if (c.backend == "fd") {
                    out.value = detail::fd_uncertain(c, phi, detail::bsb_htilde(c.volgrid), {}).value(0, c.x0);
                    return out;
                }
                TbdsdeProblem p;
                p.terminal = [phi](double x) { return phi(x); };
                p.volgrid = c.volgrid;
                const auto sol = solve_dp(p, c.grid, c.w, c.dp_options());
                out.value = sol.Y0;
                out.extras.push_back({"argmax_high_fraction", argmax_fraction(sol, c.volgrid.size() - 1)});
                return out;
            };
            v.push_back(e);
        }
        return v;
    }();
    return r;
}

inline const ProblemEntry& find_problem(const std::string& name) {
    for (const auto& e : registry())
        if (e.name == name) return e;
    fail(ErrorKind::config, "unknown problem '" + name + "'");
}

}  // namespace bdsde::harness
