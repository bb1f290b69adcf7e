#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "bdsde/bdsde_solver.hpp"
#include "bdsde/dp_operator.hpp"
#include "bdsde/errors.hpp"
#include "bdsde/generators.hpp"
#include "bdsde/lattice_paths.hpp"

namespace bdsde {

enum class NoiseScheme { backward_ito, stratonovich };

using ScalarTerminal = std::function<double(double x)>;
using ScalarDriver = std::function<double(double t, double x, double y, double z, double a)>;
using ScalarNoise = std::function<double(double t, double x, double y, double z)>;

// Y_i = max_a { E^a_i[Y_{i+1} + g dW_i] + F(t_i, X_i, Y_i, Z^a_i, a) dt }.
// Under the Stratonovich scheme the noise term is split between both
// endpoints (trapezoidal rule). A non-finite F at some a removes that a
// from the domain at that node.
struct TbdsdeProblem {
    ScalarTerminal terminal;
    ScalarDriver F;   // empty: zero
    ScalarNoise g;    // empty: zero (l = 1)
    VolatilityGrid volgrid;
    double lipschitz_y = 0.0;
};

struct DpOptions {
    DpLatticeOptions lattice;
    NoiseScheme noise = NoiseScheme::backward_ito;
    SolverOptions solver;
};

struct DpLevel {
    std::vector<double> x, y, z;
    std::vector<int> argmax;
};

struct TbdsdeSolution {
    TimeGrid grid;
    VolatilityGrid volgrid;
    DpOptions options;
    std::vector<DpLevel> levels;
    std::vector<double> residual;  // per step: fixed-point defect under the argmax
    double Y0 = 0.0;
    double Z0 = 0.0;

    DpOperator op() const { return DpOperator(grid, volgrid, options.lattice); }
};

namespace detail {

inline double noise_weight(NoiseScheme s) { return s == NoiseScheme::stratonovich ? 0.5 : 1.0; }

// psi = Y_{i+1} + w g(t_{i+1}, x, Y_{i+1}, Z_{i+1}) dW_i on level i+1
inline std::vector<double> continuation_integrand(const TbdsdeProblem& p, const DpLevel& next, double t1, double dw,
                                                  NoiseScheme scheme) {
    std::vector<double> psi = next.y;
    if (p.g) {
        const double wgt = noise_weight(scheme);
        for (std::size_t j = 0; j < psi.size(); ++j) psi[j] += wgt * p.g(t1, next.x[j], next.y[j], next.z[j]) * dw;
    }
    return psi;
}

// Solves y = c + [1/2 g(t, x, y, z) dW] + F(t, x, y, z, a) dt.
inline double one_step_value(const TbdsdeProblem& p, NoiseScheme scheme, double t, double x, double c, double z,
                             double a, double dt, double dw, const SolverOptions& opt, double* resid = nullptr) {
    const bool strat = scheme == NoiseScheme::stratonovich && p.g;
    if (!p.F && !strat) {
        if (resid) *resid = 0.0;
        return c;
    }
    auto rhs = [&](double y) {
        double v = c;
        if (p.F) v += p.F(t, x, y, z, a) * dt;
        if (strat) v += 0.5 * p.g(t, x, y, z) * dw;
        return v;
    };
    double y = c;
    bool done = false;
    for (int it = 0; it < opt.max_iter; ++it) {
        const double nx = rhs(y);
        const double diff = std::abs(nx - y);
        y = nx;
        if (diff <= opt.tol * std::max(1.0, std::abs(y))) {
            done = true;
            break;
        }
    }
    if (!done) fail(ErrorKind::convergence, "one-step fixed point did not reach tolerance");
    if (resid) *resid = std::abs(y - rhs(y));
    return y;
}

inline bool admissible(const TbdsdeProblem& p, double t, double x, double y, double z, double a) {
    return !p.F || std::isfinite(p.F(t, x, y, z, a));
}

}  // namespace detail

inline TbdsdeSolution solve_dp(const TbdsdeProblem& problem, const TimeGrid& grid, const BackwardPath& w,
                               const DpOptions& opt = {}) {
    if (w.dim() != 1) fail(ErrorKind::invalid_argument, "dynamic programming supports a scalar backward noise only");
    if (w.grid.n_steps != grid.n_steps) fail(ErrorKind::invalid_argument, "backward path must share the grid");
    detail::check_contraction(problem.lipschitz_y, grid.dt);
    const DpOperator op(grid, problem.volgrid, opt.lattice);
    const int n = grid.n_steps, K = op.n_vol();

    TbdsdeSolution sol;
    sol.grid = grid;
    sol.volgrid = problem.volgrid;
    sol.options = opt;
    sol.levels.resize(n + 1);
    sol.residual.assign(n, 0.0);

    {
        DpLevel& L = sol.levels[n];
        L.x = op.level(n);
        L.y.resize(L.x.size());
        L.argmax.assign(L.x.size(), K - 1);
        for (std::size_t j = 0; j < L.x.size(); ++j) L.y[j] = problem.terminal(L.x[j]);
        // terminal z: projection over a virtual step under a_high
        std::vector<double> ext(op.level_size(n + 1));
        if (opt.lattice.engine == DpEngine::tree) {
            for (int j = 0; j < op.level_size(n + 1); ++j) ext[j] = problem.terminal(op.node(n + 1, j));
        } else {
            ext = L.y;
        }
        std::vector<double> mean;
        op.expect(n, K - 1, ext, mean, L.z);
    }

    std::vector<std::vector<double>> C(K), Z(K);
    for (int i = n - 1; i >= 0; --i) {
        const double t = grid.time(i), t1 = grid.time(i + 1);
        const double dw = w.increment1(i);
        const auto psi = detail::continuation_integrand(problem, sol.levels[i + 1], t1, dw, opt.noise);
        for (int k = 0; k < K; ++k) op.expect(i, k, psi, C[k], Z[k]);
        DpLevel& L = sol.levels[i];
        L.x = op.level(i);
        const int m = static_cast<int>(L.x.size());
        L.y.assign(m, 0.0);
        L.z.assign(m, 0.0);
        L.argmax.assign(m, -1);
        std::vector<double> res(m, 0.0);
        parallel_for(0, m, [&](std::size_t j) {
            double best = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < K; ++k) {
                const double a = op.vol(k);
                if (!detail::admissible(problem, t, L.x[j], C[k][j], Z[k][j], a)) continue;
                double r = 0.0;
                const double y =
                    detail::one_step_value(problem, opt.noise, t, L.x[j], C[k][j], Z[k][j], a, grid.dt, dw, opt.solver, &r);
                if (y > best) {
                    best = y;
                    L.argmax[j] = k;
                    L.z[j] = Z[k][j];
                    res[j] = r;
                }
            }
            if (L.argmax[j] < 0) fail(ErrorKind::invalid_argument, "no admissible volatility at a node");
            L.y[j] = best;
        });
        sol.residual[i] = *std::max_element(res.begin(), res.end());
    }
    sol.Y0 = sol.levels[0].y[op.root_index(0)];
    sol.Z0 = sol.levels[0].z[op.root_index(0)];
    return sol;
}

// Share of "visited" nodes (within `radius_sd` standard deviations of x0 under
// a_high) whose argmax is volatility index k.
inline double argmax_fraction(const TbdsdeSolution& sol, int k, double radius_sd = 3.0) {
    const double a_hi = sol.volgrid.scalar_high();
    const double x0 = sol.options.lattice.x0;
    long hit = 0, tot = 0;
    for (int i = 0; i < sol.grid.n_steps; ++i) {
        const double r = radius_sd * std::sqrt(a_hi * (sol.grid.time(i) - sol.grid.t0));
        const auto& L = sol.levels[i];
        for (std::size_t j = 0; j < L.x.size(); ++j) {
            if (std::abs(L.x[j] - x0) > r + 1e-12) continue;
            ++tot;
            if (L.argmax[j] == k) ++hit;
        }
    }
    return tot ? static_cast<double>(hit) / tot : 0.0;
}

// ---------------------------------------------------------------------------
// K

inline constexpr int kArgmaxPolicy = -1;

struct KTrace {
    std::vector<std::vector<double>> dK;  // per level/node, F_i-measurable increment
    std::vector<std::vector<double>> remaining;  // E_i[K_T - K_{t_i}] under the evaluation measure
    int clamped = 0;
    double expected_KT = 0.0;  // E[K_T] from the root
    double max_KT = 0.0;       // bound on K_T along any path: sum of per-level maxima
};

// dK_i = Y_i - (C^a_i + F(t_i, X_i, Y_i, Z^a_i, a) dt [+ 1/2 g(Y_i) dW]) under
// the argmax policy (`measure` = kArgmaxPolicy) or a constant volatility index.
inline KTrace extract_k(const TbdsdeSolution& sol, const TbdsdeProblem& problem, const BackwardPath& w,
                        int measure = kArgmaxPolicy) {
    const DpOperator op = sol.op();
    const int n = sol.grid.n_steps, K = op.n_vol();
    require(measure == kArgmaxPolicy || (measure >= 0 && measure < K), "measure index out of range");
    const auto& opt = sol.options;
    KTrace kt;
    kt.dK.resize(n + 1);
    kt.remaining.resize(n + 1);
    kt.dK[n].assign(sol.levels[n].x.size(), 0.0);
    kt.remaining[n].assign(sol.levels[n].x.size(), 0.0);
    std::vector<std::vector<double>> C(K), Z(K), R(K), dummy(K);
    for (int i = n - 1; i >= 0; --i) {
        const double t = sol.grid.time(i), t1 = sol.grid.time(i + 1);
        const double dw = w.increment1(i);
        const auto psi = detail::continuation_integrand(problem, sol.levels[i + 1], t1, dw, opt.noise);
        const DpLevel& L = sol.levels[i];
        const int m = static_cast<int>(L.x.size());
        kt.dK[i].assign(m, 0.0);
        kt.remaining[i].assign(m, 0.0);
        for (int k = 0; k < K; ++k) {
            if (measure != kArgmaxPolicy && k != measure) continue;
            op.expect(i, k, psi, C[k], Z[k]);
            op.expect(i, k, kt.remaining[i + 1], R[k], dummy[k]);
        }
        for (int j = 0; j < m; ++j) {
            const int k = measure == kArgmaxPolicy ? L.argmax[j] : measure;
            const double a = op.vol(k);
            const double y = L.y[j];
            double cont = C[k][j];
            if (problem.F) cont += problem.F(t, L.x[j], y, Z[k][j], a) * sol.grid.dt;
            if (opt.noise == NoiseScheme::stratonovich && problem.g)
                cont += 0.5 * problem.g(t, L.x[j], y, Z[k][j]) * dw;
            double d = y - cont;
            const double eps = 1e-9 * (1.0 + std::abs(y));
            if (!std::isfinite(d)) fail(ErrorKind::consistency, "non-finite K increment");
            if (d < -10.0 * eps) fail(ErrorKind::consistency, "K increment below the dust threshold");
            if (d < 0.0) {
                d = 0.0;
                ++kt.clamped;
            }
            kt.dK[i][j] = d;
            kt.remaining[i][j] = d + R[k][j];
        }
        kt.max_KT += *std::max_element(kt.dK[i].begin(), kt.dK[i].end());
    }
    kt.expected_KT = kt.remaining[0][op.root_index(0)];
    return kt;
}

struct MinimalityGap {
    std::vector<double> gap;                  // per time index, min over admissible a
    std::vector<std::vector<double>> per_vol; // [k][i]
    std::vector<int> argmin;                  // per time index
};

// Re-propagates K under every constant volatility along an independent tree
// (binomial for the lattice engine, the shared trinomial for the tree engine),
// with the DP values read off by interpolation. Reports
// min_a E^a[K_T - K_{t_i}] for every t_i.
inline MinimalityGap minimality_gap(const TbdsdeProblem& problem, const TbdsdeSolution& sol, const BackwardPath& w) {
    const DpOperator op = sol.op();
    const TimeGrid& grid = sol.grid;
    const int n = grid.n_steps, K = op.n_vol();
    const auto& opt = sol.options;
    const double x0 = opt.lattice.x0;
    MinimalityGap mg;
    mg.per_vol.assign(K, std::vector<double>(n + 1, std::numeric_limits<double>::infinity()));
    for (int k = 0; k < K; ++k) {
        const double a = op.vol(k);
        BrownianTree tree = opt.lattice.engine == DpEngine::tree
                                ? build_tree(grid, a, 3, x0, op.geometry().dx)
                                : build_tree(grid, a, 2, x0);
        if (problem.F && !std::isfinite(problem.F(grid.t0, x0, sol.Y0, sol.Z0, a))) continue;
        std::vector<double> level_mass(n + 1, 0.0);
        std::vector<double> p{1.0};
        std::vector<double> expected(n, 0.0);
        for (int i = 0; i < n; ++i) {
            const double t = grid.time(i), t1 = grid.time(i + 1);
            const double dw = w.increment1(i);
            const DpLevel& L = sol.levels[i];
            const DpLevel& N1 = sol.levels[i + 1];
            double e = 0.0;
            for (int j = 0; j < tree.level_size(i); ++j) {
                const double x = tree.node(i, j);
                double c = 0.0, zz = 0.0;
                for (int b = 0; b < tree.branching; ++b) {
                    const double xc = tree.node(i + 1, j + b);
                    const double yc = op.interp(i + 1, N1.y, xc);
                    double psi = yc;
                    if (problem.g)
                        psi += detail::noise_weight(opt.noise) * problem.g(t1, xc, yc, op.interp(i + 1, N1.z, xc)) * dw;
                    c += tree.probs[b] * psi;
                    zz += tree.probs[b] * psi * tree.increment(b);
                }
                zz /= a * grid.dt;
                const double y = op.interp(i, L.y, x);
                double cont = c;
                if (problem.F) cont += problem.F(t, x, y, zz, a) * grid.dt;
                if (opt.noise == NoiseScheme::stratonovich && problem.g) cont += 0.5 * problem.g(t, x, y, zz) * dw;
                e += p[j] * (y - cont);
            }
            expected[i] = e;
            std::vector<double> q(tree.level_size(i + 1), 0.0);
            for (int j = 0; j < tree.level_size(i); ++j)
                for (int b = 0; b < tree.branching; ++b) q[j + b] += p[j] * tree.probs[b];
            p.swap(q);
        }
        double acc = 0.0;
        mg.per_vol[k][n] = 0.0;
        for (int i = n - 1; i >= 0; --i) {
            acc += expected[i];
            mg.per_vol[k][i] = acc;
        }
    }
    mg.gap.assign(n + 1, std::numeric_limits<double>::infinity());
    mg.argmin.assign(n + 1, -1);
    for (int i = 0; i <= n; ++i)
        for (int k = 0; k < K; ++k)
            if (mg.per_vol[k][i] < mg.gap[i]) {
                mg.gap[i] = mg.per_vol[k][i];
                mg.argmin[i] = k;
            }
    return mg;
}

struct RepresentationReport {
    double Y0 = 0.0;
    std::vector<double> y0_per_vol;
    double max_y0 = 0.0;
    double surplus = 0.0;
};

// Compares the DP value with each constant-volatility BDSDE value computed on
// the same lattice geometry.
inline RepresentationReport representation_check(const TbdsdeProblem& problem, const TimeGrid& grid,
                                                 const BackwardPath& w, const DpOptions& opt = {}) {
    RepresentationReport rep;
    const TbdsdeSolution full = solve_dp(problem, grid, w, opt);
    rep.Y0 = full.Y0;
    DpOptions single = opt;
    single.lattice.a_geometry = opt.lattice.a_geometry > 0.0 ? opt.lattice.a_geometry : problem.volgrid.scalar_high();
    rep.max_y0 = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < problem.volgrid.size(); ++k) {
        TbdsdeProblem p1 = problem;
        p1.volgrid = singleton_volatility_grid(problem.volgrid.scalar(k));
        if (problem.F && !std::isfinite(problem.F(grid.t0, opt.lattice.x0, full.Y0, full.Z0, p1.volgrid.scalar(0)))) {
            rep.y0_per_vol.push_back(-std::numeric_limits<double>::infinity());
            continue;
        }
        const double y = solve_dp(p1, grid, w, single).Y0;
        rep.y0_per_vol.push_back(y);
        rep.max_y0 = std::max(rep.max_y0, y);
    }
    rep.surplus = rep.Y0 - rep.max_y0;
    const double eps = 1e-9 * (1.0 + std::abs(rep.Y0));
    if (rep.surplus < -10.0 * eps) fail(ErrorKind::consistency, "DP value below a constant-volatility value");
    return rep;
}

// ---------------------------------------------------------------------------
// Feynman-Kac check for a classical solution u

struct ClassicalSolution {
    std::function<double(double t, double x)> u, ux, uxx;
};

struct FeynmanKacReport {
    double min_k = 0.0, max_k = 0.0, mean_k = 0.0;
    double mean_residual = 0.0;      // mean over paths of the summed one-step defect
    double mean_abs_residual = 0.0;
    long samples = 0;
};

// k_s = hhat(Gamma) - 1/2 a Gamma + F(a), with Y = u, Z = u_x, Gamma = u_xx, and
// the defect of Y_{i} - Y_{i+1} = -F dt - Z dX + k dt summed along each path.
// Here F is the conjugate in the minus convention of the Feynman-Kac form.
inline FeynmanKacReport feynman_kac_residual(const ClassicalSolution& u,
                                             const std::function<double(double t, double x, double y, double z, double gamma)>& hhat,
                                             const ScalarDriver& F, double a, const PathEnsemble& paths,
                                             double eps = 1e-9) {
    FeynmanKacReport rep;
    const TimeGrid& g = paths.grid;
    const int n = g.n_steps;
    rep.min_k = std::numeric_limits<double>::infinity();
    rep.max_k = -std::numeric_limits<double>::infinity();
    double ksum = 0.0;
    for (int p = 0; p < paths.n_paths; ++p) {
        double r = 0.0;
        for (int i = 0; i < n; ++i) {
            const double t = g.time(i), x = paths.state(p, i);
            const double y = u.u(t, x), z = u.ux(t, x), gam = u.uxx(t, x);
            const double Fv = F ? F(t, x, y, z, a) : 0.0;
            const double k = hhat(t, x, y, z, gam) - 0.5 * a * gam + Fv;
            rep.min_k = std::min(rep.min_k, k);
            rep.max_k = std::max(rep.max_k, k);
            ksum += k;
            ++rep.samples;
            const double y1 = u.u(g.time(i + 1), paths.state(p, i + 1));
            r += (y - y1) + Fv * g.dt + z * paths.increment(p, i) - k * g.dt;
        }
        rep.mean_residual += r;
        rep.mean_abs_residual += std::abs(r);
    }
    rep.mean_residual /= paths.n_paths;
    rep.mean_abs_residual /= paths.n_paths;
    rep.mean_k = ksum / std::max<long>(1, rep.samples);
    if (rep.min_k < -10.0 * eps) fail(ErrorKind::verification, "k_s negative: u is not a supersolution on this domain");
    return rep;
}

}  // namespace bdsde
