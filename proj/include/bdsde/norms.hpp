#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "bdsde/bdsde_solver.hpp"
#include "bdsde/errors.hpp"
#include "bdsde/lattice_paths.hpp"

namespace bdsde {

// Discrete solution trace on a recombining tree for one volatility. Optional
// fields may be left empty and count as zero.
struct NormTrace {
    BrownianTree tree;
    std::vector<std::vector<double>> y, z;
    std::vector<std::vector<double>> dK;  // increment over [t_i, t_{i+1}] at node (i, j)
    std::vector<std::vector<double>> F0;  // |F(t, X, 0, 0)| per node
    std::vector<std::vector<double>> g0;  // |g(t, X, 0, 0)| per node
};

inline NormTrace make_trace(const BrownianTree& tree, const BdsdeSolution& sol) {
    require(sol.mode == SolutionMode::tree, "norm trace needs a tree solution");
    NormTrace tr;
    tr.tree = tree;
    tr.y = sol.y;
    tr.z = sol.z;
    return tr;
}

struct NormOptions {
    double p = 2.0;
    double eps = 0.5;  // integrability exponent is p + eps
};

struct NormReport {
    double d2_norm = 0.0;   // max_a E[sup_t |Y_t|^p]
    double h2_norm = 0.0;   // max_a E[sum a |Z|^2 dt]
    double i2_norm = 0.0;   // max_a E[K_T^p]
    double phi = 0.0;       // max_a E[sum |F0|^{p+eps} dt]
    double psi = 0.0;       // max_a E[sum |g0|^{p+eps} dt]
    double lhat2 = 0.0;     // max over a, t, node of E_t[|Y_T|^p]
    int argmax_d2 = -1;
};

namespace detail {

inline double at_or_zero(const std::vector<std::vector<double>>& v, int i, int j) {
    return v.empty() ? 0.0 : v[i][j];
}

// E[sup_i |y_i|^p] by forward propagation of (node, running max) pairs.
inline double expected_running_max(const NormTrace& tr, double p) {
    const auto& T = tr.tree;
    const int n = T.grid.n_steps;
    std::vector<std::map<double, double>> cur(1);
    cur[0][std::pow(std::abs(tr.y[0][0]), p)] = 1.0;
    for (int i = 0; i < n; ++i) {
        std::vector<std::map<double, double>> nxt(T.level_size(i + 1));
        for (int j = 0; j < T.level_size(i); ++j)
            for (const auto& [m, pr] : cur[j])
                for (int k = 0; k < T.branching; ++k) {
                    const int jc = j + k;
                    const double v = std::max(m, std::pow(std::abs(tr.y[i + 1][jc]), p));
                    nxt[jc][v] += pr * T.probs[k];
                }
        cur.swap(nxt);
    }
    double e = 0.0;
    for (const auto& lvl : cur)
        for (const auto& [m, pr] : lvl) e += m * pr;
    return e;
}

// E[(sum_i dK_i)^2] by a backward first/second moment recursion.
inline double expected_k_second_moment(const NormTrace& tr) {
    if (tr.dK.empty()) return 0.0;
    const auto& T = tr.tree;
    const int n = T.grid.n_steps;
    std::vector<double> m1(T.level_size(n), 0.0), m2(T.level_size(n), 0.0);
    for (int i = n - 1; i >= 0; --i) {
        std::vector<double> a1(T.level_size(i)), a2(T.level_size(i));
        for (int j = 0; j < T.level_size(i); ++j) {
            double e1 = 0.0, e2 = 0.0;
            for (int k = 0; k < T.branching; ++k) {
                e1 += T.probs[k] * m1[j + k];
                e2 += T.probs[k] * m2[j + k];
            }
            const double d = tr.dK[i][j];
            a1[j] = d + e1;
            a2[j] = d * d + 2.0 * d * e1 + e2;
        }
        m1.swap(a1);
        m2.swap(a2);
    }
    return m2[0];
}

}  // namespace detail

// One trace per volatility grid entry, matched by value.
inline NormReport compute_norms(const std::vector<NormTrace>& traces, const VolatilityGrid& volgrid,
                                const NormOptions& opt = {}) {
    for (int k = 0; k < volgrid.size(); ++k) {
        const double a = volgrid.scalar(k);
        const bool found = std::any_of(traces.begin(), traces.end(),
                                       [a](const NormTrace& t) { return std::abs(t.tree.a - a) <= 1e-12 * a; });
        if (!found) fail(ErrorKind::invalid_argument, "missing trace for a volatility grid entry");
    }
    NormReport rep;
    const double q = opt.p + opt.eps;
    for (std::size_t idx = 0; idx < traces.size(); ++idx) {
        const auto& tr = traces[idx];
        const auto& T = tr.tree;
        const int n = T.grid.n_steps;
        require(static_cast<int>(tr.y.size()) == n + 1, "trace length must match the tree");
        const double dt = T.grid.dt;

        const double d2 = detail::expected_running_max(tr, opt.p);
        if (d2 > rep.d2_norm || rep.argmax_d2 < 0) {
            rep.d2_norm = d2;
            rep.argmax_d2 = static_cast<int>(idx);
        }

        double h2 = 0.0, phi = 0.0, psi = 0.0;
        std::vector<double> prob{1.0};
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < T.level_size(i); ++j) {
                const double zz = detail::at_or_zero(tr.z, i, j);
                h2 += prob[j] * T.a * zz * zz * dt;
                phi += prob[j] * std::pow(std::abs(detail::at_or_zero(tr.F0, i, j)), q) * dt;
                psi += prob[j] * std::pow(std::abs(detail::at_or_zero(tr.g0, i, j)), q) * dt;
            }
            std::vector<double> nx(T.level_size(i + 1), 0.0);
            for (int j = 0; j < T.level_size(i); ++j)
                for (int k = 0; k < T.branching; ++k) nx[j + k] += prob[j] * T.probs[k];
            prob.swap(nx);
        }
        rep.h2_norm = std::max(rep.h2_norm, h2);
        rep.phi = std::max(rep.phi, phi);
        rep.psi = std::max(rep.psi, psi);
        const double k2 = detail::expected_k_second_moment(tr);
        rep.i2_norm = std::max(rep.i2_norm, opt.p == 2.0 ? k2 : std::pow(std::max(k2, 0.0), opt.p / 2.0));

        // conditional moments of the terminal value at every node
        std::vector<double> m(T.level_size(n));
        for (int j = 0; j < T.level_size(n); ++j) m[j] = std::pow(std::abs(tr.y[n][j]), opt.p);
        double best = *std::max_element(m.begin(), m.end());
        for (int i = n - 1; i >= 0; --i) {
            std::vector<double> c(T.level_size(i), 0.0);
            for (int j = 0; j < T.level_size(i); ++j)
                for (int k = 0; k < T.branching; ++k) c[j] += T.probs[k] * m[j + k];
            best = std::max(best, *std::max_element(c.begin(), c.end()));
            m.swap(c);
        }
        rep.lhat2 = std::max(rep.lhat2, best);
    }
    return rep;
}

}  // namespace bdsde
