#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "bdsde/dp_operator.hpp"
#include "bdsde/errors.hpp"
#include "bdsde/lattice_paths.hpp"
#include "bdsde/parallel.hpp"

namespace bdsde {

// c[0] + c[1] x + c[2] x^2 + ...
struct Polynomial {
    std::vector<double> c;

    int degree() const {
        int d = static_cast<int>(c.size()) - 1;
        while (d > 0 && c[d] == 0.0) --d;
        return std::max(d, 0);
    }
    double operator()(double x) const {
        double v = 0.0;
        for (int k = static_cast<int>(c.size()) - 1; k >= 0; --k) v = v * x + c[k];
        return v;
    }
};

inline double gaussian_moment(int k) {
    if (k % 2) return 0.0;
    double m = 1.0;
    for (int j = k - 1; j > 0; j -= 2) m *= j;
    return m;
}

// (P_tau phi)(x) = E[phi(x + sqrt(a tau) N)], exact for polynomials.
inline Polynomial heat_semigroup(const Polynomial& phi, double a, double tau) {
    require(a >= 0.0 && tau >= 0.0, "heat semigroup needs a, tau >= 0");
    const double s = std::sqrt(a * tau);
    const int D = static_cast<int>(phi.c.size());
    Polynomial out{std::vector<double>(std::max(D, 1), 0.0)};
    // (x + sN)^k = sum_j C(k, j) x^{k-j} s^j N^j
    for (int k = 0; k < D; ++k) {
        double binom = 1.0;
        for (int j = 0; j <= k; ++j) {
            if (j > 0) binom = binom * (k - j + 1) / j;
            out.c[k - j] += phi.c[k] * binom * std::pow(s, j) * gaussian_moment(j);
        }
    }
    return out;
}

// General terminal data: Gauss-Hermite quadrature.
inline std::function<double(double)> heat_semigroup(const std::function<double(double)>& phi, double a, double tau,
                                                    int nodes = 40) {
    std::vector<double> gx, gw;
    gauss_hermite(nodes, gx, gw);
    const double s = std::sqrt(a * tau);
    return [phi, gx, gw, s](double x) {
        double v = 0.0;
        for (std::size_t k = 0; k < gx.size(); ++k) v += gw[k] * phi(x + s * gx[k]);
        return v;
    };
}

// Uncertain-volatility value for phi = sigma x^2 + linear + const.
inline double bsb_closed_form(const Polynomial& phi, double a_low, double a_high, double tau, double x) {
    if (phi.degree() > 2) fail(ErrorKind::unsupported_oracle, "closed form needs quadratic terminal data");
    const double sigma = phi.c.size() > 2 ? phi.c[2] : 0.0;
    const double a = sigma >= 0.0 ? a_high : a_low;
    return heat_semigroup(phi, a, tau)(x);
}

// u(t_i, x) = exp(beta (W_T - W_{t_i})) (P_{T - t_i} phi)(x) for h = 1/2 u_xx, g = beta u.
inline double linear_spde_closed_form(double beta, const Polynomial& phi, const BackwardPath& w, int i, double x) {
    require(w.dim() == 1, "linear SPDE oracle needs l = 1");
    const double tau = w.grid.horizon - w.grid.time(i);
    return std::exp(beta * w.tail1(i)) * heat_semigroup(phi, 1.0, tau)(x);
}

// ---------------------------------------------------------------------------
// Explicit finite differences for dv + htilde(t, x, v, Dv, D^2 v) dt = 0

enum class FdBoundary { dirichlet, linear_extrapolation };

using HtildeFn = std::function<double(double t, double x, double y, double z, double gamma)>;

struct RandomPdeProblem {
    HtildeFn htilde;
    std::function<double(double x)> terminal;
    double x_lo = -1.0, x_hi = 1.0;
    FdBoundary boundary = FdBoundary::linear_extrapolation;
    std::function<double(double t, double x)> dirichlet;
    double diffusivity_bound = 1.0;  // bound on 2 d htilde / d gamma
    double drift_bound = 0.0;        // bound on |d htilde / d z|
};

struct FdSolution {
    TimeGrid grid;
    std::vector<double> x;
    std::vector<std::vector<double>> v;  // per grid node
    int substeps = 1;

    double value(int i, double xq) const { return uniform_interp(x.front(), x[1] - x[0], v[i], xq); }
};

inline FdSolution fd_random_pde(const RandomPdeProblem& p, const TimeGrid& grid, int x_steps, int substeps = 0) {
    require(x_steps >= 2 && p.x_hi > p.x_lo, "FD lattice needs at least two intervals");
    if (p.boundary == FdBoundary::dirichlet && !p.dirichlet)
        fail(ErrorKind::invalid_argument, "Dirichlet boundary needs a boundary function");
    const double dx = (p.x_hi - p.x_lo) / x_steps;
    const double rate = p.diffusivity_bound / (dx * dx) + p.drift_bound / dx;
    const double dt_max = 1.0 / rate;
    if (substeps <= 0) {
        substeps = std::max(1, static_cast<int>(std::ceil(grid.dt / (0.9 * dt_max))));
    } else if (grid.dt / substeps > dt_max * (1.0 + 1e-12)) {
        fail(ErrorKind::stability, "explicit scheme violates the CFL bound", dt_max);
    }
    const double tau = grid.dt / substeps;
    const int N = x_steps + 1;
    FdSolution sol;
    sol.grid = grid;
    sol.substeps = substeps;
    sol.x.resize(N);
    for (int j = 0; j < N; ++j) sol.x[j] = p.x_lo + j * dx;
    sol.v.assign(grid.size(), std::vector<double>(N, 0.0));
    std::vector<double> cur(N), nxt(N);
    for (int j = 0; j < N; ++j) cur[j] = p.terminal(sol.x[j]);
    sol.v[grid.n_steps] = cur;
    for (int i = grid.n_steps - 1; i >= 0; --i) {
        for (int s = 0; s < substeps; ++s) {
            const double t = grid.time(i + 1) - s * tau;
            parallel_for(1, N - 1, [&](std::size_t j) {
                const double v0 = cur[j];
                const double zf = (cur[j + 1] - v0) / dx, zb = (v0 - cur[j - 1]) / dx;
                const double zc = 0.5 * (zf + zb);
                const double gam = (cur[j + 1] - 2 * v0 + cur[j - 1]) / (dx * dx);
                const double e = 1e-6 * (1.0 + std::abs(zc));
                const double b = (p.htilde(t, sol.x[j], v0, zc + e, gam) - p.htilde(t, sol.x[j], v0, zc - e, gam)) / (2 * e);
                double z = zc;
                if (b > 1e-10) z = zf;
                else if (b < -1e-10) z = zb;
                nxt[j] = v0 + tau * p.htilde(t, sol.x[j], v0, z, gam);
            });
            const double tn = t - tau;
            if (p.boundary == FdBoundary::dirichlet) {
                nxt[0] = p.dirichlet(tn, sol.x[0]);
                nxt[N - 1] = p.dirichlet(tn, sol.x[N - 1]);
            } else {
                nxt[0] = 2 * nxt[1] - nxt[2];
                nxt[N - 1] = 2 * nxt[N - 2] - nxt[N - 3];
            }
            cur.swap(nxt);
        }
        sol.v[i] = cur;
    }
    return sol;
}

// ---------------------------------------------------------------------------
// Product of two processes
//   X = X_0 + int alpha ds + int beta dB + int gamma d<-W + K

struct ItoProcess {
    std::function<double(double t, double b, double w)> alpha, beta, gamma;
    std::function<double(double t)> K;
    double x0 = 0.0;
};

struct ItoProductResult {
    double mean_abs_residual = 0.0;
    double mean_residual = 0.0;
};

// `bracket_sign` = -1 uses the -gamma1 gamma2 backward bracket; +1 flips it.
inline ItoProductResult ito_product_check(const ItoProcess& X1, const ItoProcess& X2, const BackwardPath& w,
                                          const PathEnsemble& ens, double bracket_sign = -1.0) {
    const TimeGrid& g = ens.grid;
    require(w.grid.n_steps == g.n_steps, "backward path and ensemble must share the grid");
    auto ev = [](const std::function<double(double, double, double)>& f, double t, double b, double ww) {
        return f ? f(t, b, ww) : 0.0;
    };
    auto kv = [](const ItoProcess& X, double t) { return X.K ? X.K(t) : 0.0; };
    std::vector<double> res(ens.n_paths, 0.0);
    parallel_for(0, ens.n_paths, [&](std::size_t p) {
        double x1 = X1.x0, x2 = X2.x0, rhs = 0.0;
        for (int k = 0; k < g.n_steps; ++k) {
            const double t = g.time(k), t1 = g.time(k + 1);
            const double b = ens.state(p, k), b1 = ens.state(p, k + 1), db = ens.increment(p, k);
            const double wk = w.values[k](0), wk1 = w.values[k + 1](0), dw = wk1 - wk;
            const double a = ens.control[k](0, 0);
            const double a1 = ev(X1.alpha, t, b, wk), a2 = ev(X2.alpha, t, b, wk);
            const double be1 = ev(X1.beta, t, b, wk), be2 = ev(X2.beta, t, b, wk);
            const double g1 = ev(X1.gamma, t1, b1, wk1), g2 = ev(X2.gamma, t1, b1, wk1);
            const double dk1 = kv(X1, t1) - kv(X1, t), dk2 = kv(X2, t1) - kv(X2, t);
            const double n1 = x1 + a1 * g.dt + be1 * db + g1 * dw + dk1;
            const double n2 = x2 + a2 * g.dt + be2 * db + g2 * dw + dk2;
            rhs += (a * be1 * be2 + bracket_sign * g1 * g2 + a1 * x2 + a2 * x1) * g.dt;
            rhs += (x2 * be1 + x1 * be2) * db;
            rhs += (n1 * g2 + n2 * g1) * dw;
            rhs += x1 * dk2 + x2 * dk1;
            x1 = n1;
            x2 = n2;
        }
        res[p] = (x1 * x2 - X1.x0 * X2.x0) - rhs;
    });
    ItoProductResult r;
    for (double v : res) {
        r.mean_abs_residual += std::abs(v);
        r.mean_residual += v;
    }
    r.mean_abs_residual /= ens.n_paths;
    r.mean_residual /= ens.n_paths;
    return r;
}

}  // namespace bdsde
