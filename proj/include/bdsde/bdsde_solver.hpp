#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "bdsde/errors.hpp"
#include "bdsde/generators.hpp"
#include "bdsde/lattice_paths.hpp"
#include "bdsde/linalg.hpp"
#include "bdsde/parallel.hpp"

namespace bdsde {

using TerminalFn = std::function<double(const Vec& x)>;
using PathTerminalFn = std::function<double(const PathEnsemble& e, int path)>;
using DriverFn = std::function<double(double t, const Vec& x, double y, const Vec& z)>;

// Discrete form used throughout:
//   y_i = E_i[y_{i+1} + g(t_{i+1}, X_{i+1}, y_{i+1}, z_{i+1}) . dW_i] + f(t_i, X_i, y_i, z_i) dt + dV_i
struct BdsdeProblem {
    TerminalFn terminal;
    PathTerminalFn path_terminal;  // MC only, overrides `terminal`
    DriverFn f;                    // empty: zero
    NoiseFn g;                     // empty: zero
    std::vector<double> forcing;   // V at grid nodes, empty: zero
    double lipschitz_y = 0.0;      // declared y-Lipschitz constant of f
};

struct SolverOptions {
    double tol = 1e-12;
    int max_iter = 50;
};

enum class SolutionMode { tree, regression };

struct BdsdeSolution {
    SolutionMode mode = SolutionMode::tree;
    TimeGrid grid;
    // tree: y[i][j], z[i][j] per level/node
    std::vector<std::vector<double>> y;
    std::vector<std::vector<double>> z;
    // regression: row per path, (n+1) values (z: (n+1)*d)
    std::vector<double> y_paths;
    std::vector<double> z_paths;
    int n_paths = 0;
    int d = 1;
    double y0 = 0.0;
    double y0_se = 0.0;
    std::vector<double> residual;        // per step
    std::vector<int> picard_iters;       // per step, max over nodes/paths
    std::vector<double> projection_bias; // regression only
    std::vector<double> condition;       // regression only

    double y_path(int p, int i) const { return y_paths[static_cast<std::size_t>(p) * (grid.n_steps + 1) + i]; }
};

namespace detail {

// Solves y = c + f(y) dt by Picard iteration; returns the iteration count.
template <class Fn>
int picard(double c, double dt, Fn&& f, const SolverOptions& opt, double& y) {
    y = c;
    for (int it = 1; it <= opt.max_iter; ++it) {
        const double next = c + f(y) * dt;
        const double diff = std::abs(next - y);
        y = next;
        if (diff <= opt.tol * std::max(1.0, std::abs(y))) return it;
    }
    fail(ErrorKind::convergence, "fixed point did not reach tolerance");
}

inline void check_contraction(double lipschitz, double dt) {
    if (lipschitz * dt >= 1.0)
        fail(ErrorKind::step_size, "fixed point is not a contraction (dt * C >= 1)", 0.5 / std::max(lipschitz, 1e-300));
}

inline double forcing_increment(const BdsdeProblem& p, int i) {
    return p.forcing.empty() ? 0.0 : p.forcing[i + 1] - p.forcing[i];
}

inline double noise_dot(const NoiseFn& g, double t, const Vec& x, double y, const Vec& z, const Vec& dw) {
    if (!g) return 0.0;
    return g(t, x, y, z).dot(dw);
}

}  // namespace detail

inline BdsdeSolution solve_tree(const BdsdeProblem& problem, const BrownianTree& tree, const BackwardPath& w,
                                const SolverOptions& opt = {}) {
    const TimeGrid& grid = tree.grid;
    if (w.grid.n_steps != grid.n_steps || std::abs(w.grid.dt - grid.dt) > 1e-14)
        fail(ErrorKind::invalid_argument, "tree and backward path must share the grid");
    if (!problem.forcing.empty() && static_cast<int>(problem.forcing.size()) != grid.size())
        fail(ErrorKind::invalid_argument, "forcing must be given at every grid node");
    detail::check_contraction(problem.lipschitz_y, grid.dt);

    const int n = grid.n_steps;
    const double adt = tree.a * grid.dt;
    BdsdeSolution sol;
    sol.mode = SolutionMode::tree;
    sol.grid = grid;
    sol.y.resize(n + 1);
    sol.z.resize(n + 1);
    sol.residual.assign(n, 0.0);
    sol.picard_iters.assign(n, 0);

    sol.y[n].resize(tree.level_size(n));
    sol.z[n].resize(tree.level_size(n));
    for (int j = 0; j < tree.level_size(n); ++j) {
        const double x = tree.node(n, j);
        sol.y[n][j] = problem.terminal(vec1(x));
        double zz = 0.0;
        for (int k = 0; k < tree.branching; ++k) {
            const double dx = tree.increment(k);
            zz += tree.probs[k] * problem.terminal(vec1(x + dx)) * dx;
        }
        sol.z[n][j] = zz / adt;
    }

    for (int i = n - 1; i >= 0; --i) {
        const int m = tree.level_size(i);
        const double t = grid.time(i), t1 = grid.time(i + 1);
        const Vec dw = w.increment(i);
        const double dv = detail::forcing_increment(problem, i);
        sol.y[i].assign(m, 0.0);
        sol.z[i].assign(m, 0.0);
        std::vector<int> iters(m, 0);
        std::vector<double> res(m, 0.0);
        const auto& yn = sol.y[i + 1];
        const auto& zn = sol.z[i + 1];
        parallel_for(0, m, [&](std::size_t j) {
            const Vec x = vec1(tree.node(i, static_cast<int>(j)));
            double c = 0.0, zz = 0.0;
            for (int k = 0; k < tree.branching; ++k) {
                const int jc = static_cast<int>(j) + k;
                const double xc = tree.node(i + 1, jc);
                const double psi = yn[jc] + detail::noise_dot(problem.g, t1, vec1(xc), yn[jc], vec1(zn[jc]), dw);
                c += tree.probs[k] * psi;
                zz += tree.probs[k] * psi * tree.increment(k);
            }
            zz /= adt;
            const Vec zv = vec1(zz);
            double yv = c + dv;
            if (problem.f) {
                iters[j] = detail::picard(c + dv, grid.dt, [&](double y) { return problem.f(t, x, y, zv); }, opt, yv);
                res[j] = std::abs(yv - c - dv - problem.f(t, x, yv, zv) * grid.dt);
            }
            sol.y[i][j] = yv;
            sol.z[i][j] = zz;
        });
        sol.residual[i] = *std::max_element(res.begin(), res.end());
        sol.picard_iters[i] = *std::max_element(iters.begin(), iters.end());
    }
    sol.y0 = sol.y[0][0];
    return sol;
}

// Substitution ybar = y + V: solve with terminal xi + V_T and generator
// f(t, x, ybar - V_t, z), then map back.
inline BdsdeSolution solve_with_forcing(const BdsdeProblem& problem, const BrownianTree& tree, const BackwardPath& w,
                                        const SolverOptions& opt = {}) {
    if (problem.forcing.empty()) return solve_tree(problem, tree, w, opt);
    const TimeGrid& grid = tree.grid;
    if (static_cast<int>(problem.forcing.size()) != grid.size())
        fail(ErrorKind::invalid_argument, "forcing must be given at every grid node");
    const std::vector<double> V = problem.forcing;
    auto v_at = [V, grid](double t) {
        const int i = std::clamp(static_cast<int>(std::lround((t - grid.t0) / grid.dt)), 0, grid.n_steps);
        return V[i];
    };
    BdsdeProblem bar;
    bar.terminal = [p = problem, VT = V.back()](const Vec& x) { return p.terminal(x) + VT; };
    if (problem.f)
        bar.f = [f = problem.f, v_at](double t, const Vec& x, double y, const Vec& z) { return f(t, x, y - v_at(t), z); };
    if (problem.g)
        bar.g = [g = problem.g, v_at](double t, const Vec& x, double y, const Vec& z) { return g(t, x, y - v_at(t), z); };
    bar.lipschitz_y = problem.lipschitz_y;
    BdsdeSolution sol = solve_tree(bar, tree, w, opt);
    for (int i = 0; i <= grid.n_steps; ++i)
        for (auto& v : sol.y[i]) v -= V[i];
    sol.y0 = sol.y[0][0];
    return sol;
}

// ---------------------------------------------------------------------------
// Least-squares Monte Carlo

struct PolynomialBasis {
    int degree = 2;
};

namespace detail {

inline std::vector<std::vector<int>> monomial_exponents(int d, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> e(d, 0);
    std::function<void(int, int)> rec = [&](int c, int left) {
        if (c == d) {
            out.push_back(e);
            return;
        }
        for (int k = 0; k <= left; ++k) {
            e[c] = k;
            rec(c + 1, left - k);
        }
        e[c] = 0;
    };
    rec(0, degree);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        int sa = 0, sb = 0;
        for (int v : a) sa += v;
        for (int v : b) sb += v;
        return sa < sb;
    });
    return out;
}

struct Projection {
    Eigen::MatrixXd coef;  // K x targets
    double condition = 1.0;
    std::vector<std::vector<int>> exps;
    Vec center, scale;
    std::vector<bool> active;

    double basis(const Vec& x, int k) const {
        double v = 1.0;
        for (int c = 0; c < static_cast<int>(exps[k].size()); ++c) {
            if (exps[k][c] == 0) continue;
            if (!active[c]) return 0.0;
            v *= std::pow((x(c) - center(c)) / scale(c), exps[k][c]);
        }
        return v;
    }
    double eval(const Vec& x, int target) const {
        double s = 0.0;
        for (int k = 0; k < static_cast<int>(exps.size()); ++k) s += coef(k, target) * basis(x, k);
        return s;
    }
};

// Least-squares fit of each column of `targets` on a polynomial basis in the
// states. Components with zero spread are dropped (constant basis fallback).
inline Projection fit_projection(const std::vector<Vec>& xs, const Eigen::MatrixXd& targets, int degree,
                                 double ridge = 1e-10, double cond_max = 1e12) {
    const int N = static_cast<int>(xs.size());
    const int d = static_cast<int>(xs.front().size());
    Projection pr;
    pr.center = Vec::Zero(d);
    pr.scale = Vec::Ones(d);
    pr.active.assign(d, false);
    for (int c = 0; c < d; ++c) {
        double m = 0.0;
        for (const auto& x : xs) m += x(c);
        m /= N;
        double v = 0.0;
        for (const auto& x : xs) v += (x(c) - m) * (x(c) - m);
        const double sd = std::sqrt(v / N);
        pr.center(c) = m;
        pr.active[c] = sd > 1e-12 * (1.0 + std::abs(m));
        pr.scale(c) = pr.active[c] ? sd : 1.0;
    }
    bool any_active = false;
    for (bool b : pr.active) any_active = any_active || b;
    for (const auto& e : monomial_exponents(d, any_active ? degree : 0)) {
        bool ok = true;
        for (int c = 0; c < d; ++c) ok = ok && (e[c] == 0 || pr.active[c]);
        if (ok) pr.exps.push_back(e);
    }
    const int K = static_cast<int>(pr.exps.size());
    Eigen::MatrixXd A(N, K);
    for (int p = 0; p < N; ++p)
        for (int k = 0; k < K; ++k) A(p, k) = pr.basis(xs[p], k);
    Eigen::MatrixXd G = (A.transpose() * A) / N;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff(), lmax = es.eigenvalues().maxCoeff();
    pr.condition = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
    if (pr.condition > cond_max) fail(ErrorKind::regression, "ill-conditioned regression matrix", pr.condition);
    G.diagonal().array() += ridge;
    pr.coef = G.ldlt().solve((A.transpose() * targets) / N);
    return pr;
}

}  // namespace detail

inline BdsdeSolution solve_regression(const BdsdeProblem& problem, const PathEnsemble& ens, const BackwardPath& w,
                                      const PolynomialBasis& basis, const SolverOptions& opt = {},
                                      bool diagnostics = true) {
    const TimeGrid& grid = ens.grid;
    if (w.grid.n_steps != grid.n_steps) fail(ErrorKind::invalid_argument, "ensemble and backward path must share the grid");
    detail::check_contraction(problem.lipschitz_y, grid.dt);
    const int n = grid.n_steps, N = ens.n_paths, d = ens.d;
    BdsdeSolution sol;
    sol.mode = SolutionMode::regression;
    sol.grid = grid;
    sol.n_paths = N;
    sol.d = d;
    sol.y_paths.assign(static_cast<std::size_t>(N) * (n + 1), 0.0);
    sol.z_paths.assign(static_cast<std::size_t>(N) * (n + 1) * d, 0.0);
    sol.residual.assign(n, 0.0);
    sol.picard_iters.assign(n, 0);
    sol.projection_bias.assign(n, 0.0);
    sol.condition.assign(n, 0.0);
    auto Y = [&](int p, int i) -> double& { return sol.y_paths[static_cast<std::size_t>(p) * (n + 1) + i]; };
    auto Z = [&](int p, int i, int c) -> double& { return sol.z_paths[(static_cast<std::size_t>(p) * (n + 1) + i) * d + c]; };
    auto zvec = [&](int p, int i) {
        Vec z(d);
        for (int c = 0; c < d; ++c) z(c) = Z(p, i, c);
        return z;
    };

    std::vector<Vec> xs(N);
    // realized cash flow along each path; its spread gives the standard error
    // (the spread of the fitted values alone misses the projection noise)
    std::vector<double> realized(N);
    parallel_for(0, N, [&](std::size_t p) {
        Y(p, n) = problem.path_terminal ? problem.path_terminal(ens, p) : problem.terminal(ens.state_vec(p, n));
        realized[p] = Y(p, n);
    });
    {
        // terminal z: projection of xi * dX over the last step's law
        for (int p = 0; p < N; ++p) xs[p] = ens.state_vec(p, n - 1);
        Eigen::MatrixXd tg(N, d);
        for (int p = 0; p < N; ++p)
            for (int c = 0; c < d; ++c) tg(p, c) = Y(p, n) * ens.increment(p, n - 1, c);
        const auto pr = detail::fit_projection(xs, tg, basis.degree);
        const Mat inv = (ens.control[n - 1] * grid.dt).inverse();
        for (int p = 0; p < N; ++p) {
            Vec m(d);
            for (int c = 0; c < d; ++c) m(c) = pr.eval(xs[p], c);
            const Vec z = inv * m;
            for (int c = 0; c < d; ++c) Z(p, n, c) = z(c);
        }
    }

    for (int i = n - 1; i >= 0; --i) {
        const double t = grid.time(i), t1 = grid.time(i + 1);
        const Vec dw = w.increment(i);
        const double dv = detail::forcing_increment(problem, i);
        for (int p = 0; p < N; ++p) xs[p] = ens.state_vec(p, i);
        Eigen::MatrixXd tg(N, 1 + d);
        parallel_for(0, N, [&](std::size_t p) {
            const double psi =
                Y(p, i + 1) + detail::noise_dot(problem.g, t1, ens.state_vec(p, i + 1), Y(p, i + 1), zvec(p, i + 1), dw);
            tg(p, 0) = psi;
            for (int c = 0; c < d; ++c) tg(p, 1 + c) = psi * ens.increment(p, i, c);
            realized[p] += psi - Y(p, i + 1) + dv;
        });
        const auto pr = detail::fit_projection(xs, tg, basis.degree);
        sol.condition[i] = pr.condition;
        const Mat inv = (ens.control[i] * grid.dt).inverse();
        std::vector<int> iters(N, 0);
        std::vector<double> res(N, 0.0), resid(N, 0.0);
        parallel_for(0, N, [&](std::size_t p) {
            const double c = pr.eval(xs[p], 0);
            resid[p] = tg(p, 0) - c;
            Vec m(d);
            for (int k = 0; k < d; ++k) m(k) = pr.eval(xs[p], 1 + k);
            const Vec z = inv * m;
            for (int k = 0; k < d; ++k) Z(p, i, k) = z(k);
            double yv = c + dv;
            if (problem.f) {
                iters[p] = detail::picard(c + dv, grid.dt, [&](double y) { return problem.f(t, xs[p], y, z); }, opt, yv);
                const double fv = problem.f(t, xs[p], yv, z);
                res[p] = std::abs(yv - c - dv - fv * grid.dt);
                realized[p] += fv * grid.dt;
            }
            Y(p, i) = yv;
        });
        sol.residual[i] = *std::max_element(res.begin(), res.end());
        sol.picard_iters[i] = *std::max_element(iters.begin(), iters.end());
        if (diagnostics) {
            Eigen::MatrixXd r(N, 1);
            for (int p = 0; p < N; ++p) r(p, 0) = resid[p];
            const auto rich = detail::fit_projection(xs, r, basis.degree + 2, 1e-10, std::numeric_limits<double>::infinity());
            double s = 0.0;
            for (int p = 0; p < N; ++p) s += std::pow(rich.eval(xs[p], 0), 2);
            sol.projection_bias[i] = std::sqrt(s / N);
        }
    }
    {
        double m = 0.0, v = 0.0;
        for (int p = 0; p < N; ++p) m += realized[p];
        m /= N;
        for (int p = 0; p < N; ++p) v += (realized[p] - m) * (realized[p] - m);
        sol.y0_se = std::sqrt(v / std::max(1, N - 1) / N);
    }
    double m = 0.0;
    for (int p = 0; p < N; ++p) m += Y(p, 0);
    sol.y0 = m / N;
    return sol;
}

// ---------------------------------------------------------------------------

struct ComparisonReport {
    bool preconditions_hold = true;
    bool ordered = true;
    double worst_margin = std::numeric_limits<double>::infinity();  // min over nodes of y1 - y2
    int worst_level = -1, worst_node = -1;
    double tolerance = 0.0;
    bool holds() const { return !preconditions_hold || ordered; }
};

// Tree solutions only. Preconditions: xi1 >= xi2, f1 >= f2 along sol1,
// V1 - V2 nondecreasing.
inline ComparisonReport check_comparison(const BrownianTree& tree, const BdsdeSolution& s1, const BdsdeSolution& s2,
                                         const BdsdeProblem& p1, const BdsdeProblem& p2, double eps = 1e-11) {
    require(s1.mode == SolutionMode::tree && s2.mode == SolutionMode::tree, "comparison check needs tree solutions");
    ComparisonReport rep;
    rep.tolerance = eps;
    const int n = tree.grid.n_steps;
    for (int j = 0; j < tree.level_size(n); ++j) {
        const Vec x = vec1(tree.node(n, j));
        if (p1.terminal(x) < p2.terminal(x) - 1e-15) rep.preconditions_hold = false;
    }
    for (int i = 0; i < n && rep.preconditions_hold; ++i)
        for (int j = 0; j < tree.level_size(i); ++j) {
            const Vec x = vec1(tree.node(i, j));
            const double t = tree.grid.time(i);
            const double f1 = p1.f ? p1.f(t, x, s1.y[i][j], vec1(s1.z[i][j])) : 0.0;
            const double f2 = p2.f ? p2.f(t, x, s1.y[i][j], vec1(s1.z[i][j])) : 0.0;
            if (f1 < f2 - 1e-15) rep.preconditions_hold = false;
        }
    auto V = [](const BdsdeProblem& p, int i) { return p.forcing.empty() ? 0.0 : p.forcing[i]; };
    for (int i = 0; i < n; ++i)
        if ((V(p1, i + 1) - V(p2, i + 1)) < (V(p1, i) - V(p2, i)) - 1e-15) rep.preconditions_hold = false;
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j < tree.level_size(i); ++j) {
            const double m = s1.y[i][j] - s2.y[i][j];
            if (m < rep.worst_margin) {
                rep.worst_margin = m;
                rep.worst_level = i;
                rep.worst_node = j;
            }
        }
    rep.ordered = rep.worst_margin >= -eps;
    return rep;
}

}  // namespace bdsde
