#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bdsde/harness/config.hpp"
#include "bdsde/harness/registry.hpp"

namespace bdsde::harness {

inline constexpr const char* kVersion = "0.1.0";

struct ResultRow {
    std::string quantity;
    double dt = 0.0;
    double value = 0.0;
    double oracle = kNaN;
    double abs_error = kNaN;
    std::uint64_t seed_w = 0, seed_b = 0;
};

struct RunRecord {
    std::uint64_t hash = 0;
    std::string problem, backend;
    std::vector<ResultRow> rows;
    bool has_oracle = false;
    bool within_tolerance = true;
    double tolerance = 0.0;
    double wall_seconds = 0.0;  // timing field, never written to the CSV
    std::string version = kVersion;
};

inline BackwardPath make_backward_path(const ExperimentConfig& cfg, const TimeGrid& grid, std::uint64_t seed) {
    if (cfg.noise_kind == "zero") return zero_backward_path(grid);
    if (cfg.noise_kind == "linear") return linear_backward_path(grid, vec1(cfg.endpoint));
    BackwardPath w = sample_backward_path(grid, 1, seed);
    if (cfg.noise_kind == "bridge") w = pin_backward_path(w, vec1(cfg.endpoint));
    return w;
}

inline std::string resolve_backend(const ExperimentConfig& cfg, const ProblemEntry& e) {
    const std::string b = cfg.backend.empty() ? e.backends.front() : cfg.backend;
    if (!e.supports(b)) fail(ErrorKind::config, "backend '" + b + "' is not available for problem '" + e.name + "'");
    return b;
}

inline std::map<std::string, double> resolve_params(const ExperimentConfig& cfg, const ProblemEntry& e) {
    std::map<std::string, double> p = e.params;
    for (const auto& [k, v] : cfg.params) {
        if (!p.count(k)) fail(ErrorKind::config, "unknown key params." + k + " for problem '" + e.name + "'");
        p[k] = v;
    }
    return p;
}

inline VolatilityGrid resolve_volgrid(const ExperimentConfig& cfg, const ProblemEntry& e) {
    if (cfg.volgrid_set) return scalar_volatility_grid(cfg.a_low, cfg.a_high, cfg.n_points);
    return scalar_volatility_grid(e.a_low, e.a_high, e.n_points);
}

inline double tolerance_for(const ExperimentConfig& cfg, const ProblemEntry& e, const ProblemOutput& out) {
    if (cfg.tolerance >= 0.0) return cfg.tolerance + 4.0 * out.se;
    return e.tol_abs + e.tol_rel * std::abs(out.oracle) + 4.0 * out.se;
}

// One solve on a given backward path; rows for every reported quantity.
inline std::vector<ResultRow> solve_rows(const ExperimentConfig& cfg, const ProblemEntry& e, const BackwardPath& w,
                                         bool& within) {
    const TimeGrid grid = build_time_grid(0.0, cfg.T, cfg.n_steps);
    RunContext ctx{cfg, resolve_backend(cfg, e), grid, w, resolve_volgrid(cfg, e), cfg.x0_set ? cfg.x0 : e.x0,
                   resolve_params(cfg, e)};
    const ProblemOutput out = e.solve(ctx);
    std::vector<ResultRow> rows;
    ResultRow r{"Y0", grid.dt, out.value, out.oracle, kNaN, w.seed, cfg.b_seed};
    if (!std::isnan(out.oracle)) {
        r.abs_error = std::abs(out.value - out.oracle);
        if (!(r.abs_error <= tolerance_for(cfg, e, out))) within = false;
    }
    rows.push_back(r);
    if (out.se > 0.0) rows.push_back({"Y0_se", grid.dt, out.se, kNaN, kNaN, w.seed, cfg.b_seed});
    for (const auto& x : out.extras) {
        ResultRow q{x.quantity, grid.dt, x.value, x.oracle, kNaN, w.seed, cfg.b_seed};
        if (!std::isnan(x.oracle)) q.abs_error = std::abs(x.value - x.oracle);
        rows.push_back(q);
    }
    return rows;
}

inline RunRecord run(const ExperimentConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    const ProblemEntry& e = find_problem(cfg.problem);
    RunRecord rec;
    rec.hash = config_hash(cfg);
    rec.problem = e.name;
    rec.backend = resolve_backend(cfg, e);
    rec.has_oracle = e.has_oracle();
    const TimeGrid grid = build_time_grid(0.0, cfg.T, cfg.n_steps);
    bool within = true;
    for (int k = 0; k < cfg.w_outer; ++k) {
        const BackwardPath w = make_backward_path(cfg, grid, cfg.w_seed + k);
        const auto rows = solve_rows(cfg, e, w, within);
        rec.rows.insert(rec.rows.end(), rows.begin(), rows.end());
    }
    rec.within_tolerance = !rec.has_oracle || within;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_number(double v, int precision) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    return buf;
}

inline std::string to_csv(const std::vector<ResultRow>& rows, int precision) {
    std::ostringstream os;
    os << "quantity,dt,value,oracle,abs_error,seed_w,seed_b\n";
    for (const auto& r : rows)
        os << r.quantity << ',' << format_number(r.dt, precision) << ',' << format_number(r.value, precision) << ','
           << format_number(r.oracle, precision) << ',' << format_number(r.abs_error, precision) << ',' << r.seed_w
           << ',' << r.seed_b << '\n';
    return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::config, "cannot write " + path);
    out << text;
}

// ---------------------------------------------------------------------------
// Convergence study

struct StudyResult {
    std::vector<ResultRow> rows;  // Y0 per level, then the fitted order
    std::vector<double> dts, errors;
    double order = kNaN;
    bool exact = false;  // all errors at rounding level
    bool passed = true;
};

// Least-squares slope of log(error) against log(dt).
inline double fit_order(const std::vector<double>& dts, const std::vector<double>& errs) {
    const int n = static_cast<int>(dts.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        const double x = std::log(dts[i]), y = std::log(errs[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline StudyResult convergence_study(const ExperimentConfig& base, int halvings) {
    if (halvings < 2) fail(ErrorKind::config, "a study needs at least two halvings");
    const ProblemEntry& e = find_problem(base.problem);
    if (!e.has_oracle()) fail(ErrorKind::unsupported_oracle, "problem '" + e.name + "' has no oracle to study against");
    const std::string backend = resolve_backend(base, e);
    // one backward trajectory on the finest grid, coarsened for every level
    const int finest = base.n_steps << halvings;
    const BackwardPath fine = make_backward_path(base, build_time_grid(0.0, base.T, finest), base.w_seed);
    StudyResult st;
    bool within = true;
    for (int h = 0; h <= halvings; ++h) {
        ExperimentConfig c = base;
        c.n_steps = base.n_steps << h;
        if (backend == "mc") c.n_paths = base.n_paths << (2 * h);
        const BackwardPath w = coarsen_backward_path(fine, 1 << (halvings - h));
        auto rows = solve_rows(c, e, w, within);
        st.dts.push_back(rows.front().dt);
        st.errors.push_back(rows.front().abs_error);
        st.rows.push_back(rows.front());
    }
    double worst = 0.0;
    for (double v : st.errors) worst = std::max(worst, v);
    st.exact = worst < 1e-11;
    ResultRow r{"fitted_order", 0.0, kNaN, e.expected_order, kNaN, base.w_seed, base.b_seed};
    if (!st.exact) {
        st.order = fit_order(st.dts, st.errors);
        r.value = st.order;
        if (!std::isnan(e.expected_order)) {
            r.abs_error = std::abs(st.order - e.expected_order);
            st.passed = r.abs_error <= e.order_tolerance;
        }
    } else {
        st.passed = std::isnan(e.expected_order);
    }
    st.rows.push_back(r);
    return st;
}

}  // namespace bdsde::harness
