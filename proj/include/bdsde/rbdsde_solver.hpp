#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "bdsde/bdsde_solver.hpp"
#include "bdsde/errors.hpp"
#include "bdsde/lattice_paths.hpp"

namespace bdsde {

// Lower barrier sampled at grid nodes. `S_left` gives the left limit at a node
// when the barrier jumps there; without it the barrier is treated as
// continuous from the left.
struct Barrier {
    std::function<double(double t, double x)> S;
    std::function<double(double t, double x)> S_left;
    double lipschitz_t = 1.0;  // local time-Lipschitz scale for jump attribution
};

struct ReflectedSolution {
    BrownianTree tree;
    std::vector<std::vector<double>> y, z, s;
    std::vector<std::vector<double>> dK_cont, dK_jump;  // increments at node i over [t_i, t_{i+1}]
    double Y0 = 0.0;
    double expected_KT = 0.0, expected_KT_cont = 0.0, expected_KT_jump = 0.0;
    int jump_steps = 0;

    double dK(int i, int j) const { return dK_cont[i][j] + dK_jump[i][j]; }
};

namespace detail {

inline void check_terminal_barrier(const BdsdeProblem& p, const Barrier& b, const BrownianTree& tree) {
    const int n = tree.grid.n_steps;
    const double T = tree.grid.time(n);
    for (int j = 0; j < tree.level_size(n); ++j) {
        const double x = tree.node(n, j);
        if (b.S(T, x) > p.terminal(vec1(x)) + 1e-12) fail(ErrorKind::invalid_barrier, "barrier exceeds terminal value");
    }
}

// Unique root of y = c + f(y) dt + n (S - y)^+ dt, branch by branch.
template <class Fn>
double penalized_step(double c, double S, double n_pen, double dt, Fn&& f, const SolverOptions& opt) {
    double y;
    picard(c, dt, f, opt, y);
    if (y >= S || n_pen == 0.0) return y;
    const double den = 1.0 + n_pen * dt;
    double v = (c + n_pen * dt * S) / den;
    for (int it = 0; it < opt.max_iter; ++it) {
        const double nx = (c + f(v) * dt + n_pen * dt * S) / den;
        const double diff = std::abs(nx - v);
        v = nx;
        if (diff <= opt.tol * std::max(1.0, std::abs(v))) return std::min(v, S);
    }
    fail(ErrorKind::step_size, "penalized fixed point did not converge", dt / 2);
}

}  // namespace detail

inline BdsdeSolution solve_penalized(const BdsdeProblem& problem, const Barrier& barrier, double n_pen,
                                     const BrownianTree& tree, const BackwardPath& w, const SolverOptions& opt = {}) {
    require(n_pen >= 0.0, "penalty level must be nonnegative");
    const TimeGrid& grid = tree.grid;
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
    sol.z[n].assign(tree.level_size(n), 0.0);
    for (int j = 0; j < tree.level_size(n); ++j) {
        const double x = tree.node(n, j);
        sol.y[n][j] = problem.terminal(vec1(x));
        double zz = 0.0;
        for (int k = 0; k < tree.branching; ++k) zz += tree.probs[k] * problem.terminal(vec1(x + tree.increment(k))) * tree.increment(k);
        sol.z[n][j] = zz / adt;
    }
    for (int i = n - 1; i >= 0; --i) {
        const double t = grid.time(i), t1 = grid.time(i + 1);
        const Vec dw = w.increment(i);
        const double dv = detail::forcing_increment(problem, i);
        const int m = tree.level_size(i);
        sol.y[i].assign(m, 0.0);
        sol.z[i].assign(m, 0.0);
        for (int j = 0; j < m; ++j) {
            const double x = tree.node(i, j);
            double c = 0.0, zz = 0.0;
            for (int k = 0; k < tree.branching; ++k) {
                const int jc = j + k;
                const double psi = sol.y[i + 1][jc] + detail::noise_dot(problem.g, t1, vec1(tree.node(i + 1, jc)),
                                                                        sol.y[i + 1][jc], vec1(sol.z[i + 1][jc]), dw);
                c += tree.probs[k] * psi;
                zz += tree.probs[k] * psi * tree.increment(k);
            }
            zz /= adt;
            const Vec xv = vec1(x), zv = vec1(zz);
            auto f = [&](double y) { return problem.f ? problem.f(t, xv, y, zv) : 0.0; };
            sol.y[i][j] = detail::penalized_step(c + dv, barrier.S(t, x), n_pen, grid.dt, f, opt);
            sol.z[i][j] = zz;
        }
    }
    sol.y0 = sol.y[0][0];
    return sol;
}

inline std::vector<double> penalization_trace(const BdsdeProblem& problem, const Barrier& barrier,
                                              const std::vector<double>& levels, const BrownianTree& tree,
                                              const BackwardPath& w, const SolverOptions& opt = {}) {
    std::vector<double> out;
    for (double n : levels) out.push_back(solve_penalized(problem, barrier, n, tree, w, opt).y0);
    return out;
}

// Reflection by projection: Y_i = max(S_i, C_i + f(Y_i) dt + dV_i).
inline ReflectedSolution solve_reflected(const BdsdeProblem& problem, const Barrier& barrier, const BrownianTree& tree,
                                         const BackwardPath& w, const SolverOptions& opt = {}) {
    detail::check_terminal_barrier(problem, barrier, tree);
    const TimeGrid& grid = tree.grid;
    detail::check_contraction(problem.lipschitz_y, grid.dt);
    const int n = grid.n_steps;
    const double adt = tree.a * grid.dt;
    ReflectedSolution r;
    r.tree = tree;
    r.y.resize(n + 1);
    r.z.resize(n + 1);
    r.s.resize(n + 1);
    r.dK_cont.resize(n + 1);
    r.dK_jump.resize(n + 1);
    const int mn = tree.level_size(n);
    r.y[n].resize(mn);
    r.z[n].assign(mn, 0.0);
    r.s[n].resize(mn);
    r.dK_cont[n].assign(mn, 0.0);
    r.dK_jump[n].assign(mn, 0.0);
    for (int j = 0; j < mn; ++j) {
        const double x = tree.node(n, j);
        r.y[n][j] = problem.terminal(vec1(x));
        r.s[n][j] = barrier.S(grid.time(n), x);
        double zz = 0.0;
        for (int k = 0; k < tree.branching; ++k) zz += tree.probs[k] * problem.terminal(vec1(x + tree.increment(k))) * tree.increment(k);
        r.z[n][j] = zz / adt;
    }
    for (int i = n - 1; i >= 0; --i) {
        const double t = grid.time(i), t1 = grid.time(i + 1);
        const Vec dw = w.increment(i);
        const double dv = detail::forcing_increment(problem, i);
        const int m = tree.level_size(i);
        r.y[i].assign(m, 0.0);
        r.z[i].assign(m, 0.0);
        r.s[i].assign(m, 0.0);
        r.dK_cont[i].assign(m, 0.0);
        r.dK_jump[i].assign(m, 0.0);
        bool jumped = false;
        for (int j = 0; j < m; ++j) {
            const double x = tree.node(i, j);
            double c = 0.0, zz = 0.0;
            for (int k = 0; k < tree.branching; ++k) {
                const int jc = j + k;
                const double psi = r.y[i + 1][jc] + detail::noise_dot(problem.g, t1, vec1(tree.node(i + 1, jc)),
                                                                      r.y[i + 1][jc], vec1(r.z[i + 1][jc]), dw);
                c += tree.probs[k] * psi;
                zz += tree.probs[k] * psi * tree.increment(k);
            }
            zz /= adt;
            const Vec xv = vec1(x), zv = vec1(zz);
            auto f = [&](double y) { return problem.f ? problem.f(t, xv, y, zv) : 0.0; };
            double yv = c + dv;
            if (problem.f) detail::picard(c + dv, grid.dt, f, opt, yv);
            const double S = barrier.S(t, x);
            r.s[i][j] = S;
            double dk = 0.0;
            if (yv < S) {
                dk = S - c - dv - f(S) * grid.dt;
                yv = S;
            }
            r.y[i][j] = yv;
            r.z[i][j] = zz;
            const double jump = barrier.S_left ? std::abs(barrier.S_left(t, x) - S)
                                               : std::abs(barrier.S(t1, x) - S);
            if (dk > 0.0 && jump > 10.0 * grid.dt * barrier.lipschitz_t) {
                r.dK_jump[i][j] = dk;
                jumped = true;
            } else {
                r.dK_cont[i][j] = dk;
            }
        }
        if (jumped) ++r.jump_steps;
    }
    r.Y0 = r.y[0][0];
    for (int i = 0; i < n; ++i) {
        const auto p = tree.level_probabilities(i);
        for (int j = 0; j < tree.level_size(i); ++j) {
            r.expected_KT_cont += p[j] * r.dK_cont[i][j];
            r.expected_KT_jump += p[j] * r.dK_jump[i][j];
        }
    }
    r.expected_KT = r.expected_KT_cont + r.expected_KT_jump;
    return r;
}

struct SkorokhodReport {
    double literal = 0.0;  // sum_i E[(Y_i - S_i) dK_i]
    double lagged = 0.0;   // sum_i E[(Y_{i+1} - S_{i+1}) dK_i]
};

inline SkorokhodReport skorokhod_diagnostic(const ReflectedSolution& r) {
    const auto& tree = r.tree;
    SkorokhodReport rep;
    std::vector<double> p{1.0};
    for (int i = 0; i < tree.grid.n_steps; ++i) {
        for (int j = 0; j < tree.level_size(i); ++j) {
            const double dk = r.dK(i, j);
            if (dk == 0.0) continue;
            rep.literal += p[j] * (r.y[i][j] - r.s[i][j]) * dk;
            double next = 0.0;
            for (int k = 0; k < tree.branching; ++k) next += tree.probs[k] * (r.y[i + 1][j + k] - r.s[i + 1][j + k]);
            rep.lagged += p[j] * next * dk;
        }
        std::vector<double> q(tree.level_size(i + 1), 0.0);
        for (int j = 0; j < tree.level_size(i); ++j)
            for (int k = 0; k < tree.branching; ++k) q[j + k] += p[j] * tree.probs[k];
        p.swap(q);
    }
    return rep;
}

// Optimal stopping by backward max(payoff, continuation).
inline std::vector<std::vector<double>> snell_envelope(const BrownianTree& tree,
                                                       const std::function<double(int i, double x)>& payoff,
                                                       const std::function<double(double x)>& terminal) {
    const int n = tree.grid.n_steps;
    std::vector<std::vector<double>> v(n + 1);
    v[n].resize(tree.level_size(n));
    for (int j = 0; j < tree.level_size(n); ++j) v[n][j] = terminal(tree.node(n, j));
    for (int i = n - 1; i >= 0; --i) {
        v[i].resize(tree.level_size(i));
        for (int j = 0; j < tree.level_size(i); ++j) {
            double c = 0.0;
            for (int k = 0; k < tree.branching; ++k) c += tree.probs[k] * v[i + 1][j + k];
            v[i][j] = std::max(payoff(i, tree.node(i, j)), c);
        }
    }
    return v;
}

// c_i = sum_{j >= i} g(t_{j+1}) dW_j for a noise coefficient depending on time
// only; Ybar = Y - c turns the reflected equation with f = 0 into a Snell
// envelope with payoff S - c.
inline std::vector<double> backward_shift(const std::function<double(double t)>& g, const BackwardPath& w) {
    const int n = w.grid.n_steps;
    std::vector<double> c(n + 1, 0.0);
    for (int i = n - 1; i >= 0; --i) c[i] = c[i + 1] + g(w.grid.time(i + 1)) * w.increment1(i);
    return c;
}

}  // namespace bdsde
