#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bdsde/bdsde_solver.hpp"
#include "bdsde/doss_transform.hpp"
#include "bdsde/generators.hpp"
#include "bdsde/harness/config.hpp"
#include "bdsde/pde_oracles.hpp"
#include "bdsde/rbdsde_solver.hpp"
#include "bdsde/rng.hpp"
#include "bdsde/tbdsde_solver.hpp"

namespace bdsde::harness {

struct PropsReport {
    std::string suite;
    int instances = 0;
    int violations = 0;
    double worst = 0.0;  // suite-specific violation measure
    std::string repro;   // parameters of the first failing instance
    std::vector<std::string> lines;

    bool passed() const { return violations == 0; }
};

inline const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> s = {"comparison", "minimality", "doss-identities",
                                               "skorokhod", "conjugate-order", "ito-product"};
    return s;
}

namespace detail {

using KeyValues = std::vector<std::pair<std::string, double>>;

// Uniform draws for one instance, keyed by (seed, instance, slot).
struct Draw {
    CounterRng rng;
    int instance;
    double operator()(int slot, double lo, double hi) const { return lo + (hi - lo) * rng.uniform(instance, 7, slot); }
};

inline std::string repro_text(const std::string& suite, std::uint64_t seed, int instance, const KeyValues& kv) {
    std::ostringstream os;
    os << "[property]\nsuite = " << suite << "\nseed = " << seed << "\ninstance = " << instance << "\n";
    if (!kv.empty()) {
        os << "\n[instance]\n";
        for (const auto& [k, v] : kv) os << k << " = " << format_double(v) << "\n";
    }
    return os.str();
}

inline void record(PropsReport& r, bool violated, double measure, const std::string& suite, std::uint64_t seed,
                   int instance, const KeyValues& kv) {
    ++r.instances;
    r.worst = std::max(r.worst, measure);
    if (!violated) return;
    if (r.violations == 0) r.repro = repro_text(suite, seed, instance, kv);
    ++r.violations;
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------

inline PropsReport comparison_suite(std::uint64_t seed, int only, int count) {
    PropsReport rep;
    rep.suite = "comparison";
    const CounterRng rng(seed, Stream::property);
    const TimeGrid grid = build_time_grid(0.0, 1.0, 16);
    for (int inst = 0; inst < count; ++inst) {
        if (only >= 0 && inst != only) continue;
        const Draw d{rng, inst};
        const double a = d(0, 0.5, 2.0), c0 = d(1, -1, 1), c1 = d(2, -1, 1), c2 = d(3, -1, 1);
        const double d0 = inst % 4 == 0 ? 0.0 : d(4, 0, 0.2), d1 = d(5, 0, 0.5);
        const double L1 = d(6, -1, 1), L2 = d(7, -0.5, 0.5), c3 = d(8, -0.5, 0.5), e = inst % 5 == 0 ? 0.0 : d(9, 0, 0.3);
        const double gam = d(10, -0.3, 0.3), gam0 = d(11, -0.5, 0.5), q = d(12, -0.5, 0.5);
        const double a_lo = d(13, 0.5, 1.0), a_hi = d(14, 1.0, 2.0);
        const KeyValues kv = {{"a", a},   {"c0", c0},   {"c1", c1},     {"c2", c2},   {"d0", d0},   {"d1", d1},
                              {"L1", L1}, {"L2", L2},   {"c3", c3},     {"e", e},     {"gam", gam}, {"gam0", gam0},
                              {"q", q},   {"a_lo", a_lo}, {"a_hi", a_hi}};
        const BackwardPath w = sample_backward_path(grid, 1, seed * 1000 + inst);
        auto xi2 = [=](double x) { return c0 + c1 * x + c2 * std::sin(3 * x); };
        auto xi1 = [=](double x) { return xi2(x) + d0 + d1 * x * x; };

        // classical BDSDE on the binomial tree
        BdsdeProblem p1, p2;
        p2.terminal = [=](const Vec& x) { return xi2(x(0)); };
        p1.terminal = [=](const Vec& x) { return xi1(x(0)); };
        p2.f = [=](double, const Vec& x, double y, const Vec& z) { return L1 * std::sin(y) + L2 * std::cos(x(0)) * z(0) + c3; };
        p1.f = [=](double t, const Vec& x, double y, const Vec& z) { return p2.f(t, x, y, z) + e; };
        p1.g = p2.g = [=](double, const Vec&, double y, const Vec&) { return vec1(gam * std::sin(y) + gam0); };
        p1.lipschitz_y = p2.lipschitz_y = std::abs(L1);
        const BrownianTree tree = build_tree(grid, a, 2);
        const auto s1 = solve_tree(p1, tree, w), s2 = solve_tree(p2, tree, w);
        const auto cr = check_comparison(tree, s1, s2, p1, p2, 1e-11);
        const bool v1 = !cr.preconditions_hold || !cr.ordered;
        double m1 = cr.worst_margin < 0 ? -cr.worst_margin : 0.0;

        // 2BDSDE by dynamic programming on the shared trinomial geometry
        TbdsdeProblem t1, t2;
        t2.terminal = xi2;
        t1.terminal = xi1;
        t2.F = [=](double, double x, double y, double z, double aa) { return L1 * std::sin(y) + L2 * std::cos(x) * z + c3 + q * aa; };
        t1.F = [=](double t, double x, double y, double z, double aa) { return t2.F(t, x, y, z, aa) + e; };
        t1.g = t2.g = [=](double, double, double y, double) { return gam * std::sin(y) + gam0; };
        t1.volgrid = t2.volgrid = scalar_volatility_grid(a_lo, a_hi, 3);
        t1.lipschitz_y = t2.lipschitz_y = std::abs(L1);
        DpOptions o;
        o.lattice.engine = DpEngine::tree;
        const auto u1 = solve_dp(t1, grid, w, o), u2 = solve_dp(t2, grid, w, o);
        double m2 = 0.0;
        for (int i = 0; i <= grid.n_steps; ++i)
            for (std::size_t j = 0; j < u1.levels[i].y.size(); ++j) {
                const double gap = u2.levels[i].y[j] - u1.levels[i].y[j];
                m2 = std::max(m2, gap / (1.0 + std::abs(u1.levels[i].y[j])));
            }
        const bool v2 = m2 > 1e-11;
        record(rep, v1 || v2, std::max(m1, m2), rep.suite, seed, inst, kv);
    }
    rep.lines.push_back("ordered instances (BDSDE tree and 2BDSDE DP): " + std::to_string(rep.instances - rep.violations) +
                        "/" + std::to_string(rep.instances) + ", worst violation " + fmt(rep.worst));
    return rep;
}

// ---------------------------------------------------------------------------

struct GapStudy {
    std::vector<int> n_steps;
    std::vector<double> gaps;
    std::vector<double> ratios;
};

inline GapStudy bsb_minimality_study(const std::vector<int>& levels) {
    GapStudy st;
    TbdsdeProblem p;
    p.terminal = [](double x) { return x * x; };
    p.volgrid = scalar_volatility_grid(0.5, 2.0, 4);
    DpOptions o;
    o.lattice.x0 = 1.0;
    for (int n : levels) {
        const TimeGrid grid = build_time_grid(0.0, 1.0, n);
        const BackwardPath w = zero_backward_path(grid);
        const auto sol = solve_dp(p, grid, w, o);
        st.n_steps.push_back(n);
        st.gaps.push_back(minimality_gap(p, sol, w).gap[0]);
    }
    for (std::size_t k = 1; k < st.gaps.size(); ++k) st.ratios.push_back(st.gaps[k - 1] / st.gaps[k]);
    return st;
}

inline PropsReport minimality_suite(std::uint64_t seed) {
    PropsReport rep;
    rep.suite = "minimality";
    const auto st = bsb_minimality_study({16, 32, 64});
    for (std::size_t k = 0; k < st.ratios.size(); ++k) {
        const double r = st.ratios[k];
        const bool bad = !(r >= 1.5 && r <= 2.5);
        record(rep, bad, bad ? std::abs(r - 2.0) : 0.0, rep.suite, seed, static_cast<int>(k),
               {{"n_coarse", static_cast<double>(st.n_steps[k])}, {"ratio", r}});
    }
    std::string g;
    for (std::size_t k = 0; k < st.gaps.size(); ++k)
        g += "n=" + std::to_string(st.n_steps[k]) + " gap=" + fmt(st.gaps[k]) + (k + 1 < st.gaps.size() ? ", " : "");
    rep.lines.push_back("BSB min-over-a remaining K: " + g);
    return rep;
}

// ---------------------------------------------------------------------------

inline PropsReport doss_identities_suite(std::uint64_t seed, int only, int count) {
    PropsReport rep;
    rep.suite = "doss-identities";
    const CounterRng rng(seed, Stream::property);
    const TimeGrid grid = build_time_grid(0.0, 1.0, 16);
    for (int inst = 0; inst < count; ++inst) {
        if (only >= 0 && inst != only) continue;
        const Draw d{rng, inst};
        const double beta = d(0, -0.8, 0.8);
        const BackwardPath w = sample_backward_path(grid, 1, seed * 1000 + inst);
        const FlowField flow = solve_flow(linear_flow(beta), w, FlowLattice{uniform_points(-1, 1, 3), uniform_points(-3, 3, 7)});
        const InverseField inv = invert_flow(flow);
        const double m = std::max(derivative_identity_report(flow, inv, 4).max(), roundtrip_error(flow, inv));
        record(rep, m > 1e-8, m, rep.suite, seed, inst, {{"beta", beta}});
    }
    rep.lines.push_back("linear flow identities: max violation " + fmt(rep.worst) + " over " +
                        std::to_string(rep.instances) + " instances");
    return rep;
}

// ---------------------------------------------------------------------------

struct SkorokhodStudy {
    std::vector<int> n_steps;
    std::vector<double> literal, lagged, y0;
};

// American-put-like obstacle: S = xi = (1 - x)^+, f = -r y, a = 0.09, x0 = 1.
inline SkorokhodStudy put_skorokhod_study(const std::vector<int>& levels) {
    SkorokhodStudy st;
    BdsdeProblem p;
    p.terminal = [](const Vec& x) { return std::max(1.0 - x(0), 0.0); };
    p.f = [](double, const Vec&, double y, const Vec&) { return -0.5 * y; };
    p.lipschitz_y = 0.5;
    Barrier b;
    b.S = [](double, double x) { return std::max(1.0 - x, 0.0); };
    for (int n : levels) {
        const TimeGrid grid = build_time_grid(0.0, 1.0, n);
        const auto r = solve_reflected(p, b, build_tree(grid, 0.09, 2, 1.0), zero_backward_path(grid));
        const auto sk = skorokhod_diagnostic(r);
        st.n_steps.push_back(n);
        st.literal.push_back(sk.literal);
        st.lagged.push_back(sk.lagged);
        st.y0.push_back(r.Y0);
    }
    return st;
}

inline PropsReport skorokhod_suite(std::uint64_t seed) {
    PropsReport rep;
    rep.suite = "skorokhod";
    const auto st = put_skorokhod_study({32, 64, 128});
    for (std::size_t k = 0; k < st.n_steps.size(); ++k) {
        const double dt = 1.0 / st.n_steps[k];
        const bool bad = st.literal[k] != 0.0 || !(st.lagged[k] >= 0.0 && st.lagged[k] < dt);
        record(rep, bad, st.lagged[k] / dt, rep.suite, seed, static_cast<int>(k),
               {{"n_steps", static_cast<double>(st.n_steps[k])}, {"lagged", st.lagged[k]}});
    }
    for (std::size_t k = 1; k < st.n_steps.size(); ++k) {
        const double ratio = st.lagged[k - 1] / st.lagged[k];
        record(rep, !(ratio >= 1.4), 0.0, rep.suite, seed, static_cast<int>(k + 10), {{"ratio", ratio}});
    }
    std::string s;
    for (std::size_t k = 0; k < st.n_steps.size(); ++k)
        s += "n=" + std::to_string(st.n_steps[k]) + " sum=" + fmt(st.lagged[k]) + (k + 1 < st.n_steps.size() ? ", " : "");
    rep.lines.push_back("lagged Skorokhod sums: " + s);
    return rep;
}

// ---------------------------------------------------------------------------

// h(gamma) = 1/2 lo gamma + 1/2 (hi - lo) softplus(k gamma) / k: convex,
// nondecreasing, with slopes in [lo/2, hi/2].
inline HamiltonianSpec softplus_hamiltonian(double lo, double hi, double k, double shift, const std::vector<Mat>& gam) {
    HamiltonianSpec s;
    s.h = [=](const State&, const Mat& g) {
        const double v = k * g(0, 0);
        const double sp = v > 30 ? v : std::log1p(std::exp(v));
        return 0.5 * lo * g(0, 0) + 0.5 * (hi - lo) * sp / k + shift;
    };
    s.gamma_domain = gam;
    s.monotone_convex = true;
    s.truncated_unbounded = false;
    return s;
}

inline PropsReport conjugate_order_suite(std::uint64_t seed, int only, int count) {
    PropsReport rep;
    rep.suite = "conjugate-order";
    const CounterRng rng(seed, Stream::property);
    const double G = 20.0;
    const auto gam = scalar_gamma_grid(-G, G, 801);
    const double dgam = 2 * G / 800;
    const State st = scalar_state(0.0, 0.0, 0.0, 0.0);
    for (int inst = 0; inst < count; ++inst) {
        if (only >= 0 && inst != only) continue;
        const Draw d{rng, inst};
        const double lo = d(0, 0.2, 1.0), hi = d(1, 1.5, 3.0), k1 = d(2, 0.5, 3.0), k2 = d(3, 0.5, 3.0);
        const double sh = d(4, -1, 1), bump = d(5, 0.0, 0.5);
        const auto h1 = softplus_hamiltonian(lo, hi, k1, sh, gam);
        auto h2 = softplus_hamiltonian(lo, hi, k2, sh, gam);
        // h2 = max(h1 shifted up, its own softplus) >= h1
        h2.h = [h1f = h1.h, h2f = h2.h, bump](const State& s, const Mat& g) {
            return std::max(h1f(s, g) + bump, h2f(s, g));
        };
        const VolatilityGrid vg = scalar_volatility_grid(lo, hi, 41);
        const double da = (hi - lo) / 40;
        double worst = 0.0;
        bool bad = false;
        // order reversal
        for (const auto& a : vg.a_values) {
            const double f1 = fenchel_conjugate(h1, st, a), f2 = fenchel_conjugate(h2, st, a);
            if (f1 < f2 - 1e-12) {
                bad = true;
                worst = std::max(worst, f2 - f1);
            }
        }
        // hhat <= h on grid points, hhat = h within tolerance
        const auto pair = make_conjugate_pair(h1, vg);
        const double tol = 0.5 * da * G + 0.5 * hi * dgam;
        for (int q = 0; q < 21; ++q) {
            const double g = -0.9 * G + 1.8 * G * q / 20;
            const double gg = gam[static_cast<std::size_t>(std::lround((g + G) / dgam))](0, 0);
            const double hh = biconjugate(pair, st, mat1(gg)), hv = h1.h(st, mat1(gg));
            if (hh > hv + 1e-12) {
                bad = true;
                worst = std::max(worst, hh - hv);
            }
            if (std::abs(hh - hv) > tol) {
                bad = true;
                worst = std::max(worst, std::abs(hh - hv) - tol);
            }
        }
        record(rep, bad, worst, rep.suite, seed, inst,
               {{"lo", lo}, {"hi", hi}, {"k1", k1}, {"k2", k2}, {"shift", sh}, {"bump", bump}});
    }
    rep.lines.push_back("conjugate pairs: " + std::to_string(rep.instances - rep.violations) + "/" +
                        std::to_string(rep.instances) + " without violations");
    return rep;
}

// ---------------------------------------------------------------------------

struct ItoProductStudy {
    std::vector<int> n_steps;
    std::vector<double> bb;        // B.B residual
    std::vector<double> ww, ww_flipped;
    double cross = 0.0;            // W-only x B-only residual at the finest level
};

inline ItoProductStudy ito_product_study(const std::vector<int>& levels, int n_paths, int w_seeds, std::uint64_t seed) {
    ItoProductStudy st;
    ItoProcess B, W;
    B.beta = [](double, double, double) { return 1.0; };
    W.gamma = [](double, double, double) { return 1.0; };
    for (int n : levels) {
        const TimeGrid grid = build_time_grid(0.0, 1.0, n);
        const PathEnsemble ens = sample_forward_ensemble(grid, n_paths, mat1(1.0), seed, vec1(0.0));
        double bb = 0, ww = 0, wf = 0, cr = 0;
        for (int s = 0; s < w_seeds; ++s) {
            const BackwardPath w = sample_backward_path(grid, 1, seed * 100 + s);
            bb += ito_product_check(B, B, w, ens).mean_abs_residual;
            ww += ito_product_check(W, W, w, ens).mean_abs_residual;
            wf += ito_product_check(W, W, w, ens, +1.0).mean_abs_residual;
            cr = std::max(cr, ito_product_check(W, B, w, ens).mean_abs_residual);
        }
        st.n_steps.push_back(n);
        st.bb.push_back(bb / w_seeds);
        st.ww.push_back(ww / w_seeds);
        st.ww_flipped.push_back(wf / w_seeds);
        st.cross = cr;
    }
    return st;
}

inline PropsReport ito_product_suite(std::uint64_t seed) {
    PropsReport rep;
    rep.suite = "ito-product";
    const auto st = ito_product_study({64, 128, 256}, 400, 8, seed);
    for (std::size_t k = 1; k < st.n_steps.size(); ++k)
        record(rep, !(st.bb[k] < st.bb[k - 1]), 0.0, rep.suite, seed, static_cast<int>(k),
               {{"n_steps", static_cast<double>(st.n_steps[k])}, {"bb", st.bb[k]}, {"bb_coarse", st.bb[k - 1]}});
    const double ratio = st.ww_flipped.back() / st.ww.back();
    record(rep, !(ratio > 10.0), 0.0, rep.suite, seed, 10, {{"flip_ratio", ratio}});
    record(rep, !(st.cross < 1e-10), st.cross, rep.suite, seed, 11, {{"cross", st.cross}});
    rep.lines.push_back("B.B residual " + fmt(st.bb.front()) + " -> " + fmt(st.bb.back()) +
                        "; W.W correct " + fmt(st.ww.back()) + " vs flipped " + fmt(st.ww_flipped.back()));
    return rep;
}

}  // namespace detail

// `instance` >= 0 reruns a single randomized instance.
inline PropsReport property_suite(const std::string& name, std::uint64_t seed, int instance = -1, int count = 100) {
    if (name == "comparison") return detail::comparison_suite(seed, instance, count);
    if (name == "minimality") return detail::minimality_suite(seed);
    if (name == "doss-identities") return detail::doss_identities_suite(seed, instance, std::min(count, 20));
    if (name == "skorokhod") return detail::skorokhod_suite(seed);
    if (name == "conjugate-order") return detail::conjugate_order_suite(seed, instance, count);
    if (name == "ito-product") return detail::ito_product_suite(seed);
    fail(ErrorKind::config, "unknown property suite '" + name + "'");
}

}  // namespace bdsde::harness
