#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bdsde/errors.hpp"
#include "bdsde/linalg.hpp"
#include "bdsde/parallel.hpp"
#include "bdsde/rng.hpp"

namespace bdsde {

struct TimeGrid {
    double t0 = 0.0;
    double horizon = 1.0;
    int n_steps = 1;
    double dt = 1.0;

    double time(int i) const { return i == n_steps ? horizon : t0 + i * dt; }
    int size() const { return n_steps + 1; }
};

inline TimeGrid build_time_grid(double t0, double T, int n) {
    if (!(T > t0)) fail(ErrorKind::invalid_argument, "time grid needs T > t0");
    if (n < 1) fail(ErrorKind::invalid_argument, "time grid needs at least one step");
    return TimeGrid{t0, T, n, (T - t0) / n};
}

// ---------------------------------------------------------------------------
// Backward noise

struct BackwardPath {
    TimeGrid grid;
    std::vector<Vec> values;  // W(t_i), i = 0..n
    std::uint64_t seed = 0;

    int dim() const { return values.empty() ? 0 : static_cast<int>(values.front().size()); }
    Vec increment(int i) const { return values[i + 1] - values[i]; }
    double increment1(int i) const { return values[i + 1](0) - values[i](0); }
    // W_T - W_{t_i}
    Vec tail(int i) const { return values.back() - values[i]; }
    double tail1(int i) const { return values.back()(0) - values[i](0); }
};

inline BackwardPath sample_backward_path(const TimeGrid& grid, int l, std::uint64_t seed) {
    if (l < 1 || l > kMaxDim) fail(ErrorKind::invalid_argument, "backward noise dimension out of range");
    CounterRng rng(seed, Stream::backward);
    BackwardPath w{grid, {}, seed};
    w.values.assign(grid.size(), Vec::Zero(l));
    const double sd = std::sqrt(grid.dt);
    for (int i = 0; i < grid.n_steps; ++i)
        for (int c = 0; c < l; ++c) w.values[i + 1](c) = w.values[i](c) + sd * rng.normal(0, i, c);
    return w;
}

inline BackwardPath zero_backward_path(const TimeGrid& grid, int l = 1) {
    return BackwardPath{grid, std::vector<Vec>(grid.size(), Vec::Zero(l)), 0};
}

// W_t = endpoint * (t - t0) / (T - t0): a smooth path, used for flow order studies.
inline BackwardPath linear_backward_path(const TimeGrid& grid, const Vec& endpoint) {
    BackwardPath w{grid, {}, 0};
    for (int i = 0; i <= grid.n_steps; ++i) w.values.push_back(endpoint * (static_cast<double>(i) / grid.n_steps));
    return w;
}

// Brownian bridge shift of a sampled path so that W_T - W_0 equals `endpoint`.
inline BackwardPath pin_backward_path(const BackwardPath& w, const Vec& endpoint) {
    BackwardPath out = w;
    const Vec shift = endpoint - (w.values.back() - w.values.front());
    const int n = w.grid.n_steps;
    for (int i = 0; i <= n; ++i) out.values[i] = w.values[i] + shift * (static_cast<double>(i) / n);
    return out;
}

inline BackwardPath negate_backward_path(const BackwardPath& w) {
    BackwardPath out = w;
    for (auto& v : out.values) v = -v;
    return out;
}

// Keeps every `factor`-th node: the same Brownian trajectory on a coarser grid.
inline BackwardPath coarsen_backward_path(const BackwardPath& w, int factor) {
    require(factor >= 1 && w.grid.n_steps % factor == 0, "coarsening factor must divide the step count");
    BackwardPath out{build_time_grid(w.grid.t0, w.grid.horizon, w.grid.n_steps / factor), {}, w.seed};
    for (int i = 0; i <= w.grid.n_steps; i += factor) out.values.push_back(w.values[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Volatility grid

struct VolatilityGrid {
    std::vector<Mat> a_values;
    Mat a_low;
    Mat a_high;

    int size() const { return static_cast<int>(a_values.size()); }
    int dim() const { return static_cast<int>(a_low.rows()); }
    double scalar(int k) const { return a_values[k](0, 0); }
    double scalar_low() const { return a_low(0, 0); }
    double scalar_high() const { return a_high(0, 0); }
};

inline VolatilityGrid make_volatility_grid(std::vector<Mat> values, const Mat& lo, const Mat& hi) {
    if (values.empty()) fail(ErrorKind::invalid_argument, "volatility grid is empty");
    require_pd(lo, "a_low");
    require_pd(hi, "a_high");
    for (std::size_t k = 0; k < values.size(); ++k) {
        require_pd(values[k], "volatility grid entry");
        if (values[k].rows() != lo.rows()) fail(ErrorKind::invalid_argument, "volatility grid dimension mismatch");
        if (!psd_leq(lo, values[k]) || !psd_leq(values[k], hi))
            fail(ErrorKind::invalid_argument, "volatility grid entry outside [a_low, a_high]");
        if (k > 0 && !psd_leq(values[k - 1], values[k]))
            fail(ErrorKind::invalid_argument, "volatility grid must be ascending");
    }
    return VolatilityGrid{std::move(values), lo, hi};
}

// n_points equally spaced scalars on [a_low, a_high]
inline VolatilityGrid scalar_volatility_grid(double a_low, double a_high, int n_points) {
    if (!(a_low > 0.0) || a_high < a_low) fail(ErrorKind::invalid_argument, "need 0 < a_low <= a_high");
    if (n_points < 1 || (n_points == 1 && a_high != a_low))
        fail(ErrorKind::invalid_argument, "need at least two points for a nondegenerate interval");
    std::vector<Mat> vals;
    for (int k = 0; k < n_points; ++k)
        vals.push_back(mat1(n_points == 1 ? a_low : a_low + (a_high - a_low) * k / (n_points - 1)));
    return make_volatility_grid(std::move(vals), mat1(a_low), mat1(a_high));
}

inline VolatilityGrid singleton_volatility_grid(double a) { return scalar_volatility_grid(a, a, 1); }

// ---------------------------------------------------------------------------
// Recombining tree (d = 1)
//
// Level i holds i+1 nodes (binomial) or 2i+1 nodes (trinomial). Child k of
// node (i, j) is (i+1, j+k), k < branching.

struct BrownianTree {
    TimeGrid grid;
    double a = 1.0;
    double x0 = 0.0;
    int branching = 2;
    double step = 0.0;               // spatial step of the lattice
    std::vector<double> probs;       // child probabilities, identical at every node
    std::vector<double> offsets;     // child displacement in units of `step`

    int level_size(int i) const { return branching == 2 ? i + 1 : 2 * i + 1; }
    double node(int i, int j) const {
        return branching == 2 ? x0 + (2 * j - i) * step : x0 + (j - i) * step;
    }
    std::vector<double> level(int i) const {
        std::vector<double> xs(level_size(i));
        for (int j = 0; j < level_size(i); ++j) xs[j] = node(i, j);
        return xs;
    }
    double increment(int k) const { return offsets[k] * step; }

    // Forward node probabilities at level i.
    std::vector<double> level_probabilities(int i) const {
        std::vector<double> p{1.0};
        for (int l = 0; l < i; ++l) {
            std::vector<double> q(level_size(l + 1), 0.0);
            for (int j = 0; j < level_size(l); ++j)
                for (int k = 0; k < branching; ++k) q[j + k] += p[j] * probs[k];
            p.swap(q);
        }
        return p;
    }
};

// `spacing` overrides the trinomial step; p_up = p_down = a dt / (2 spacing^2).
inline BrownianTree build_tree(const TimeGrid& grid, const Mat& a, int branching, double x0 = 0.0, double spacing = 0.0) {
    if (a.rows() != 1) fail(ErrorKind::unsupported_backend, "tree backend requires d = 1");
    require_pd(a, "tree volatility");
    if (branching != 2 && branching != 3) fail(ErrorKind::invalid_argument, "branching must be 2 or 3");
    BrownianTree t;
    t.grid = grid;
    t.a = a(0, 0);
    t.x0 = x0;
    t.branching = branching;
    const double var = t.a * grid.dt;
    if (branching == 2) {
        t.step = std::sqrt(var);
        t.probs = {0.5, 0.5};
        t.offsets = {-1.0, 1.0};
    } else {
        t.step = spacing > 0.0 ? spacing : std::sqrt(3.0 * var);
        const double p = var / (2.0 * t.step * t.step);
        if (p > 0.5 + 1e-15) fail(ErrorKind::invalid_argument, "trinomial spacing too small for this volatility");
        t.probs = {p, 1.0 - 2.0 * p, p};
        t.offsets = {-1.0, 0.0, 1.0};
    }
    return t;
}

inline BrownianTree build_tree(const TimeGrid& grid, double a, int branching, double x0 = 0.0, double spacing = 0.0) {
    return build_tree(grid, mat1(a), branching, x0, spacing);
}

// ---------------------------------------------------------------------------
// Monte Carlo ensemble

struct PathEnsemble {
    TimeGrid grid;
    int n_paths = 0;
    int d = 1;
    std::uint64_t seed = 0;
    std::vector<Mat> control;       // per step
    std::vector<double> increments; // [path][step][comp]
    std::vector<double> states;     // [path][node][comp]

    double increment(int p, int i, int c = 0) const {
        return increments[(static_cast<std::size_t>(p) * grid.n_steps + i) * d + c];
    }
    double state(int p, int i, int c = 0) const {
        return states[(static_cast<std::size_t>(p) * (grid.n_steps + 1) + i) * d + c];
    }
    Vec state_vec(int p, int i) const {
        Vec x(d);
        for (int c = 0; c < d; ++c) x(c) = state(p, i, c);
        return x;
    }
    Vec increment_vec(int p, int i) const {
        Vec x(d);
        for (int c = 0; c < d; ++c) x(c) = increment(p, i, c);
        return x;
    }
};

inline PathEnsemble sample_forward_ensemble(const TimeGrid& grid, int n_paths, const std::vector<Mat>& control,
                                            std::uint64_t seed, const Vec& x0) {
    if (n_paths < 1) fail(ErrorKind::invalid_argument, "ensemble needs at least one path");
    if (static_cast<int>(control.size()) != grid.n_steps)
        fail(ErrorKind::invalid_argument, "control length must match the step count");
    const int d = static_cast<int>(x0.size());
    std::vector<Mat> roots;
    for (const auto& a : control) {
        if (a.rows() != d) fail(ErrorKind::invalid_argument, "control dimension mismatch");
        require_pd(a, "volatility control");
        roots.push_back(sqrt_psd(a));
    }
    PathEnsemble e;
    e.grid = grid;
    e.n_paths = n_paths;
    e.d = d;
    e.seed = seed;
    e.control = control;
    const int n = grid.n_steps;
    e.increments.assign(static_cast<std::size_t>(n_paths) * n * d, 0.0);
    e.states.assign(static_cast<std::size_t>(n_paths) * (n + 1) * d, 0.0);
    const CounterRng rng(seed, Stream::forward);
    const double sd = std::sqrt(grid.dt);
    parallel_for(0, n_paths, [&](std::size_t p) {
        double* inc = &e.increments[p * n * d];
        double* st = &e.states[p * (n + 1) * d];
        for (int c = 0; c < d; ++c) st[c] = x0(c);
        Vec db(d);
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < d; ++c) db(c) = sd * rng.normal(p, i, c);
            const Vec dx = roots[i] * db;
            for (int c = 0; c < d; ++c) {
                inc[i * d + c] = dx(c);
                st[(i + 1) * d + c] = st[i * d + c] + dx(c);
            }
        }
    });
    return e;
}

inline PathEnsemble sample_forward_ensemble(const TimeGrid& grid, int n_paths, const Mat& a, std::uint64_t seed,
                                            const Vec& x0) {
    return sample_forward_ensemble(grid, n_paths, std::vector<Mat>(grid.n_steps, a), seed, x0);
}

}  // namespace bdsde
