// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "bdsde/bdsde_solver.hpp"
#include "bdsde/doss_transform.hpp"
#include "bdsde/harness/config.hpp"
#include "bdsde/harness/props.hpp"
#include "bdsde/harness/runner.hpp"
#include "bdsde/parallel.hpp"
#include "bdsde/pde_oracles.hpp"
#include "bdsde/rbdsde_solver.hpp"
#include "bdsde/tbdsde_solver.hpp"

using namespace bdsde;
using namespace bdsde::harness;

namespace {

int failures = 0;

void report(int id, const char* title, bool ok, const std::string& detail) {
    std::printf("[%s] %2d %s: %s\n", ok ? "PASS" : "FAIL", id, title, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string f(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class Fn>
void guarded(int id, const char* title, Fn&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        report(id, title, false, std::string("threw: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

void classical_reduction() {
    const char* title = "classical reduction";
    const TimeGrid grid = build_time_grid(0.0, 1.0, 64);
    const BackwardPath w = sample_backward_path(grid, 1, 101);
    const auto t0 = std::chrono::steady_clock::now();

    TbdsdeProblem tp;
    tp.terminal = [](double x) { return std::sin(x) + 0.5 * x * x; };
    tp.F = [](double, double x, double y, double z, double) { return -0.3 * y + 0.2 * std::cos(x) + 0.1 * std::sin(z); };
    tp.g = [](double, double, double y, double) { return 0.3 * y + 0.1; };
    tp.volgrid = singleton_volatility_grid(1.0);
    tp.lipschitz_y = 0.3;
    DpOptions o;
    o.lattice.engine = DpEngine::tree;
    const auto dp = solve_dp(tp, grid, w, o);
    const auto kt = extract_k(dp, tp, w);

    BdsdeProblem p;
    p.terminal = [](const Vec& x) { return std::sin(x(0)) + 0.5 * x(0) * x(0); };
    p.f = [](double, const Vec& x, double y, const Vec& z) { return -0.3 * y + 0.2 * std::cos(x(0)) + 0.1 * std::sin(z(0)); };
    p.g = [](double, const Vec&, double y, const Vec&) { return vec1(0.3 * y + 0.1); };
    p.lipschitz_y = 0.3;
    const auto tri = solve_tree(p, build_tree(grid, 1.0, 3, 0.0, dp.op().geometry().dx), w);
    const double secs = seconds_since(t0);

    double diff = 0.0;
    for (int i = 0; i <= grid.n_steps; ++i)
        for (std::size_t j = 0; j < tri.y[i].size(); ++j) diff = std::max(diff, std::abs(tri.y[i][j] - dp.levels[i].y[j]));
    report(1, title, diff < 1e-10 && kt.max_KT < 1e-9 && secs < 1.0,
           "max nodewise |Y - y| = " + f(diff) + " (< 1e-10), K_T <= " + f(kt.max_KT) + " (< 1e-9), " + f(secs, 3) +
               " s (< 1 s)");
}

void bsb_oracle() {
    const char* title = "BSB quadratic oracle";
    const auto t0 = std::chrono::steady_clock::now();
    TbdsdeProblem p;
    p.terminal = [](double x) { return x * x; };
    p.volgrid = scalar_volatility_grid(0.5, 2.0, 4);
    DpOptions o;
    o.lattice.x0 = 1.0;
    std::vector<double> errs;
    double y64 = 0.0, frac = 0.0;
    for (int n : {64, 128, 256}) {
        const TimeGrid grid = build_time_grid(0.0, 1.0, n);
        const BackwardPath w = zero_backward_path(grid);
        const auto sol = solve_dp(p, grid, w, o);
        errs.push_back(std::abs(sol.Y0 - 3.0));
        if (n == 64) {
            y64 = sol.Y0;
            frac = argmax_fraction(sol, p.volgrid.size() - 1);
        }
    }
    const double secs = seconds_since(t0);
    const double r1 = errs[0] / errs[1], r2 = errs[1] / errs[2];
    const bool halving = r1 >= 1.4 && r1 <= 2.6 && r2 >= 1.4 && r2 <= 2.6;
    const bool ok = std::abs(y64 - 3.0) <= 0.02 * 3.0 && halving && frac >= 0.99 && secs < 30.0;
    report(2, title, ok,
           "Y0(n=64) = " + f(y64, 7) + " vs 3 (2%), error ratios " + f(r1, 3) + ", " + f(r2, 3) +
               " (2 +/- 30%), argmax a_high at " + f(100 * frac, 4) + "% (>= 99%), " + f(secs, 3) + " s (< 30 s)");
}

SpdeProblem bsb_spde(double beta) {
    SpdeProblem s;
    s.phi = [](double x) { return x * x; };
    s.g = linear_flow(beta);
    s.volgrid = scalar_volatility_grid(0.5, 2.0, 4);
    return s;
}

// The direct scheme and the flow integrator carry noise errors of opposite sign,
// so a single W path can land on a cancellation; errors are compared in RMS
// over independent W paths.
void doss_roundtrip() {
    const char* title = "Doss roundtrip";
    const double beta = 0.5;
    const int paths = 16;
    const TimeGrid grid = build_time_grid(0.0, 1.0, 64);
    const SpdeProblem s = bsb_spde(beta);
    DpOptions o;
    o.lattice.x0 = 1.0;
    o.noise = NoiseScheme::stratonovich;
    double rt = 0.0, closed = 0.0, gap2 = 0.0, err2 = 0.0;
    int pathwise = 0;
    for (int m = 0; m < paths; ++m) {
        const BackwardPath w = sample_backward_path(grid, 1, 300 + m);
        const FlowField flow = solve_flow(s.g, w, FlowLattice{uniform_points(-1, 3, 5), uniform_points(-20, 20, 41)});
        rt = std::max(rt, roundtrip_error(flow, invert_flow(flow)));
        const double growth = std::exp(beta * w.tail1(0));
        for (double y : flow.lattice.y) closed = std::max(closed, std::abs(flow.evaluate(0, 1.0, y).eta - y * growth) / (1 + std::abs(y)));
        const double direct = solve_dp(stratonovich_problem(s), grid, w, o).Y0;
        const double doss = solve_via_doss(s, grid, flow, w, o).Y0;
        const double gap = std::abs(direct - doss), err = std::abs(direct - 3.0 * growth);
        gap2 += gap * gap;
        err2 += err * err;
        if (gap <= 3.0 * err) ++pathwise;
    }
    const double gap_rms = std::sqrt(gap2 / paths), err_rms = std::sqrt(err2 / paths);
    const bool ok = rt < 1e-8 && gap_rms <= 3.0 * err_rms;
    report(3, title, ok,
           "roundtrip max node error " + f(rt) + " (< 1e-8); over " + std::to_string(paths) +
               " W paths at n=64, RMS |Y0 direct - Y0 via transform| = " + f(gap_rms) +
               " <= 3 x RMS direct discretization error " + f(err_rms) + " (pathwise on " + std::to_string(pathwise) +
               "/" + std::to_string(paths) + "); Heun flow vs closed form " + f(closed) + " relative");
}

// Weak comparison over W: pathwise the two schemes differ at O(sqrt(dt)), so the
// W-average is taken with sum(dW^2 - dt) as a control variate.
void stratonovich_ito() {
    const char* title = "Stratonovich/Ito equivalence";
    const double beta = 0.5;
    const SpdeProblem s = bsb_spde(beta);
    const TbdsdeProblem ps = stratonovich_problem(s), pi = ito_problem(s);
    const std::vector<int> levels = {16, 32, 64};
    const int M = 1500;
    const int L = static_cast<int>(levels.size());
    std::vector<std::vector<double>> D(L), Ei(L), Es(L), CV(L);
    for (int m = 0; m < M; ++m) {
        const BackwardPath fine = sample_backward_path(build_time_grid(0.0, 1.0, levels.back()), 1, 40000 + m);
        const double oracle = 3.0 * std::exp(beta * fine.tail1(0));
        for (int l = 0; l < L; ++l) {
            const BackwardPath w = coarsen_backward_path(fine, levels.back() / levels[l]);
            const TimeGrid& grid = w.grid;
            DpOptions o;
            o.lattice.engine = DpEngine::tree;
            o.lattice.x0 = 1.0;
            o.noise = NoiseScheme::backward_ito;
            const double yi = solve_dp(pi, grid, w, o).Y0;
            o.noise = NoiseScheme::stratonovich;
            const double ys = solve_dp(ps, grid, w, o).Y0;
            double cv = 0.0;
            for (int i = 0; i < grid.n_steps; ++i) cv += w.increment1(i) * w.increment1(i) - grid.dt;
            D[l].push_back(ys - yi);
            Ei[l].push_back(yi - oracle);
            Es[l].push_back(ys - oracle);
            CV[l].push_back(cv);
        }
    }
    // control-variate mean and standard error
    auto cv_mean = [&](const std::vector<double>& v, const std::vector<double>& c, double& se) {
        double mv = 0, mc = 0;
        for (int m = 0; m < M; ++m) {
            mv += v[m];
            mc += c[m];
        }
        mv /= M;
        mc /= M;
        double cov = 0, var = 0;
        for (int m = 0; m < M; ++m) {
            cov += (v[m] - mv) * (c[m] - mc);
            var += (c[m] - mc) * (c[m] - mc);
        }
        const double b = var > 0 ? cov / var : 0.0;
        double mean = 0, ss = 0;
        for (int m = 0; m < M; ++m) mean += v[m] - b * c[m];
        mean /= M;
        for (int m = 0; m < M; ++m) ss += std::pow(v[m] - b * c[m] - mean, 2);
        se = std::sqrt(ss / (M - 1) / M);
        return mean;
    };
    std::vector<double> dts, md(L), sd(L), mi(L), ms(L);
    double ci_num = 0, cs_num = 0, den = 0;
    for (int l = 0; l < L; ++l) {
        double se_i, se_s;
        dts.push_back(1.0 / levels[l]);
        md[l] = cv_mean(D[l], CV[l], sd[l]);
        mi[l] = cv_mean(Ei[l], CV[l], se_i);
        ms[l] = cv_mean(Es[l], CV[l], se_s);
        ci_num += mi[l] * dts[l];
        cs_num += ms[l] * dts[l];
        den += dts[l] * dts[l];
    }
    const double Ci = ci_num / den, Cs = cs_num / den;
    bool ok = true;
    std::string detail;
    for (int l = 0; l < L; ++l) {
        const double env = (std::abs(Ci) + std::abs(Cs)) * dts[l] + 3.0 * sd[l];
        ok = ok && std::abs(md[l]) <= env;
        detail += "n=" + std::to_string(levels[l]) + " |E[Ys - Yi]| = " + f(std::abs(md[l])) + " <= " + f(env) + "; ";
    }
    report(4, title, ok,
           detail + "fitted C_ito = " + f(Ci) + ", C_strat = " + f(Cs) + ", " + std::to_string(M) + " W paths");
}

void linear_spde_oracle() {
    const char* title = "linear SPDE oracle";
    const double target = std::exp(0.1);
    ExperimentConfig c;
    c.problem = "linear_spde";
    c.n_steps = 64;
    c.noise_kind = "bridge";
    c.endpoint = 0.25;
    c.scheme = "stratonovich";
    c.backend = "dp";
    const double dp = run(c).rows.front().value;
    c.backend = "fd";
    const double fd = run(c).rows.front().value;
    const double e_dp = std::abs(dp - target) / target, e_fd = std::abs(fd - target) / target;
    report(5, title, e_dp <= 0.02 && e_fd <= 1e-3,
           "u(0,0) DP = " + f(dp, 7) + " (rel error " + f(e_dp, 3) + " <= 2%), FD on transformed equation = " + f(fd, 7) +
               " (rel error " + f(e_fd, 3) + " <= 0.1%), oracle " + f(target, 7));
}

std::string props_line(const PropsReport& r) {
    std::string s = std::to_string(r.violations) + " violations in " + std::to_string(r.instances) + " checks";
    for (const auto& l : r.lines) s += "; " + l;
    return s;
}

void comparison() {
    const auto r = property_suite("comparison", 1);
    report(6, "comparison suites", r.passed() && r.instances >= 100, props_line(r));
}

void minimality() {
    const auto st = harness::detail::bsb_minimality_study({16, 32, 64});
    bool ok = true;
    std::string s;
    for (std::size_t k = 0; k < st.gaps.size(); ++k) s += "n=" + std::to_string(st.n_steps[k]) + " gap " + f(st.gaps[k]) + ", ";
    for (double r : st.ratios) {
        ok = ok && r >= 1.5 && r <= 2.5;
        s += "ratio " + f(r, 3) + " ";
    }
    report(7, "minimality gap", ok, s + "(each in [1.5, 2.5])");
}

void reflected() {
    const char* title = "reflected equation";
    const TimeGrid grid = build_time_grid(0.0, 1.0, 64);
    const BackwardPath w = zero_backward_path(grid);
    const BrownianTree tree = build_tree(grid, 1.0, 2, 0.0);
    BdsdeProblem p;
    p.terminal = [](const Vec&) { return 0.0; };
    Barrier b;
    b.S = [](double t, double) { return t < 1.0 ? 1.0 : 0.0; };
    const auto pen = penalization_trace(p, b, {1, 10, 100, 1000}, tree, w);
    bool mono = true;
    for (std::size_t k = 1; k < pen.size(); ++k) mono = mono && pen[k] >= pen[k - 1];
    const auto snell = snell_envelope(tree, [&](int i, double x) { return b.S(grid.time(i), x); },
                                      [](double) { return 0.0; });
    const double gap = std::abs(pen.back() - snell[0][0]);

    const auto st = harness::detail::put_skorokhod_study({32, 64, 128});
    bool sk = true;
    std::string s;
    for (std::size_t k = 0; k < st.n_steps.size(); ++k) {
        const double dt = 1.0 / st.n_steps[k];
        sk = sk && st.literal[k] == 0.0 && st.lagged[k] >= 0.0 && st.lagged[k] < dt;
        if (k > 0) sk = sk && st.lagged[k - 1] / st.lagged[k] >= 1.4;
        s += f(st.lagged[k]) + (k + 1 < st.n_steps.size() ? " -> " : "");
    }
    report(8, title, mono && gap < 1e-3 && sk,
           "penalized Y0 " + f(pen[0], 6) + ", " + f(pen[1], 6) + ", " + f(pen[2], 6) + ", " + f(pen[3], 8) +
               (mono ? " (nondecreasing)" : " (NOT monotone)") + ", gap to Snell " + f(gap) +
               " (< 1e-3); Skorokhod sums (dt scale, n = 32, 64, 128) " + s);
}

void conjugate() {
    const auto r = property_suite("conjugate-order", 1);
    report(9, "conjugate layer", r.passed() && r.instances >= 100, props_line(r));
}

void ito_product() {
    const auto st = harness::detail::ito_product_study({64, 128, 256}, 400, 8, 1);
    bool ok = true;
    for (std::size_t k = 1; k < st.bb.size(); ++k) ok = ok && st.bb[k] < st.bb[k - 1];
    const double ratio = st.ww_flipped.back() / st.ww.back();
    ok = ok && ratio > 10.0;
    report(10, "Ito product witness", ok,
           "B.B residual " + f(st.bb[0]) + " -> " + f(st.bb[1]) + " -> " + f(st.bb[2]) + "; W.W flipped/correct " +
               f(st.ww_flipped.back()) + "/" + f(st.ww.back()) + " = " + f(ratio, 3) + " (> 10)");
}

void determinism() {
    const std::vector<std::string> names = {"heat_mc", "bsb_quadratic", "linear_spde_fd", "classical_bdsde_linear",
                                            "reflected_constant_barrier"};
    bool ok = true;
    std::string bad;
    for (const auto& name : names) {
        const ExperimentConfig c = load_config(std::string(BDSDE_CONFIG_DIR) + "/" + name + ".ini");
        set_workers(1);
        const std::string a = to_csv(run(c).rows, c.precision);
        set_workers(4);
        const std::string b = to_csv(run(c).rows, c.precision);
        const std::string again = to_csv(run(c).rows, c.precision);
        set_workers(1);
        if (a != b || b != again) {
            ok = false;
            bad += " " + name;
        }
    }
    report(11, "determinism", ok,
           std::to_string(names.size()) + " configs, CSV byte-identical with 1 and 4 workers and on rerun" +
               (ok ? "" : "; differs:" + bad));
}

}  // namespace

int main() {
    guarded(1, "classical reduction", classical_reduction);
    guarded(2, "BSB quadratic oracle", bsb_oracle);
    guarded(3, "Doss roundtrip", doss_roundtrip);
    guarded(4, "Stratonovich/Ito equivalence", stratonovich_ito);
    guarded(5, "linear SPDE oracle", linear_spde_oracle);
    guarded(6, "comparison suites", comparison);
    guarded(7, "minimality gap", minimality);
    guarded(8, "reflected equation", reflected);
    guarded(9, "conjugate layer", conjugate);
    guarded(10, "Ito product witness", ito_product);
    guarded(11, "determinism", determinism);
    std::printf("%d of 11 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
