#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bdsde/errors.hpp"
#include "bdsde/lattice_paths.hpp"
#include "bdsde/linalg.hpp"
#include "bdsde/rng.hpp"

namespace bdsde {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct State {
    double t = 0.0;
    Vec x = Vec::Zero(1);
    double y = 0.0;
    Vec z = Vec::Zero(1);
};

inline State scalar_state(double t, double x, double y, double z) { return State{t, vec1(x), y, vec1(z)}; }

using HamiltonianFn = std::function<double(const State&, const Mat& gamma)>;
using ConjugateFn = std::function<double(const State&, const Mat& a)>;

struct HamiltonianSpec {
    HamiltonianFn h;
    std::vector<Mat> gamma_domain;
    bool monotone_convex = false;
    // The finite gamma grid truncates an unbounded D_H; enables the blow-up probe.
    bool truncated_unbounded = true;
    double blowup_threshold = 1e6;
};

// Uniform scalar gamma grid on [lo, hi]; 0 is inserted if missing.
inline std::vector<Mat> scalar_gamma_grid(double lo, double hi, int n) {
    require(n >= 2 && hi > lo, "gamma grid needs n >= 2 and hi > lo");
    std::vector<Mat> g;
    bool has_zero = false;
    for (int k = 0; k < n; ++k) {
        const double v = lo + (hi - lo) * k / (n - 1);
        has_zero = has_zero || v == 0.0;
        g.push_back(mat1(v));
    }
    if (!has_zero && lo < 0.0 && hi > 0.0) {
        g.push_back(mat1(0.0));
        std::sort(g.begin(), g.end(), [](const Mat& a, const Mat& b) { return a(0, 0) < b(0, 0); });
    }
    return g;
}

namespace detail {
inline double conjugate_sup(const HamiltonianSpec& spec, const State& s, const Mat& a, double scale) {
    double best = -kInf;
    for (const auto& g0 : spec.gamma_domain) {
        const Mat g = g0 * scale;
        best = std::max(best, 0.5 * (a * g).trace() - spec.h(s, g));
    }
    return best;
}
}  // namespace detail

// F(a) = sup_gamma { 1/2 Tr(a gamma) - h(gamma) }. When the gamma grid stands in
// for an unbounded domain, the grid is scaled out by 1e3 and 1e6; a sup that
// keeps growing with the scale is reported as +inf.
inline double fenchel_conjugate(const HamiltonianSpec& spec, const State& s, const Mat& a) {
    if (spec.gamma_domain.empty()) fail(ErrorKind::invalid_argument, "empty gamma domain");
    require_pd(a, "conjugate volatility");
    const double base = detail::conjugate_sup(spec, s, a, 1.0);
    if (base > spec.blowup_threshold) return kInf;
    if (spec.truncated_unbounded) {
        const double p1 = detail::conjugate_sup(spec, s, a, 1e3);
        const double p2 = detail::conjugate_sup(spec, s, a, 1e6);
        if (p1 > 0.0 && p2 >= 100.0 * p1) return kInf;
    }
    return base;
}

struct ConjugatePair {
    ConjugateFn F;
    VolatilityGrid domain;
};

inline ConjugatePair make_conjugate_pair(const HamiltonianSpec& spec, const VolatilityGrid& volgrid) {
    return ConjugatePair{[spec](const State& s, const Mat& a) { return fenchel_conjugate(spec, s, a); }, volgrid};
}

// hhat(gamma) = sup over the a-grid of 1/2 Tr(a gamma) - F(a); infinite F entries are skipped.
inline double biconjugate(const ConjugatePair& pair, const State& s, const Mat& gamma) {
    if (pair.domain.size() == 0) fail(ErrorKind::invalid_argument, "empty volatility grid");
    double best = -kInf;
    for (const auto& a : pair.domain.a_values) {
        const double f = pair.F(s, a);
        if (std::isinf(f) && f > 0) continue;
        best = std::max(best, 0.5 * (a * gamma).trace() - f);
    }
    if (std::isinf(best)) fail(ErrorKind::invalid_argument, "conjugate is +inf on the whole volatility grid");
    return best;
}

// Volatility entries on which F is finite at the given state.
inline std::vector<int> finite_domain(const ConjugatePair& pair, const State& s) {
    std::vector<int> idx;
    for (int k = 0; k < pair.domain.size(); ++k)
        if (std::isfinite(pair.F(s, pair.domain.a_values[k]))) idx.push_back(k);
    return idx;
}

// ---------------------------------------------------------------------------

using NoiseFn = std::function<Vec(double t, const Vec& x, double y, const Vec& z)>;

struct GeneratorConstants {
    double C = 0.0;       // Lipschitz constant of F, and of g in y
    double alpha = 0.0;   // z-contraction of g
    double lambda = 0.0;
    double c = 0.0;       // growth of g g^T
    double beta = 0.0;
};

struct GeneratorBundle {
    NoiseFn g;
    NoiseFn dy_g;  // empty: central differences
    ConjugateFn F;
    GeneratorConstants constants;
    double h_fd = 1e-5;

    Vec dgdy(double t, const Vec& x, double y, const Vec& z) const {
        if (dy_g) return dy_g(t, x, y, z);
        return (g(t, x, y + h_fd, z) - g(t, x, y - h_fd, z)) / (2.0 * h_fd);
    }
};

// f = F + 1/2 Tr[g (D_y g)^T]
inline double stratonovich_correction(const GeneratorBundle& b, double F_value, const State& s) {
    if (!b.g) return F_value;
    const Vec gv = b.g(s.t, s.x, s.y, s.z);
    const Vec dg = b.dgdy(s.t, s.x, s.y, s.z);
    return F_value + 0.5 * gv.dot(dg);
}

struct AssumptionCheck {
    std::string name;
    bool passed = true;
    double worst = 0.0;   // most negative slack seen (>= 0 when passed)
    std::string sample;   // description of the worst sample
};

struct AssumptionReport {
    std::vector<AssumptionCheck> checks;
    bool all_passed() const {
        for (const auto& c : checks)
            if (!c.passed) return false;
        return true;
    }
    const AssumptionCheck* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }
};

struct SampleBox {
    double t_max = 1.0;
    double x_radius = 3.0;
    double y_radius = 5.0;
    double z_radius = 5.0;
};

inline AssumptionReport validate_assumptions(const GeneratorBundle& b, const VolatilityGrid& volgrid, int n_samples,
                                             std::uint64_t seed = 1, SampleBox box = {}) {
    require(n_samples >= 1, "need at least one sample");
    const CounterRng rng(seed, Stream::property);
    const int d = volgrid.dim();
    const auto& k = b.constants;
    auto uni = [&](int i, int c, double r) { return r * (2.0 * rng.uniform(i, 0, c) - 1.0); };
    auto draw_vec = [&](int i, int c0, double r) {
        Vec v(d);
        for (int c = 0; c < d; ++c) v(c) = uni(i, c0 + c, r);
        return v;
    };
    auto describe = [](double t, double y, double y2) {
        std::ostringstream os;
        os << "t=" << t << " y=" << y << " y'=" << y2;
        return os.str();
    };

    AssumptionReport rep;
    AssumptionCheck contraction{"z_contraction", k.alpha < 1.0, 1.0 - k.alpha, "alpha=" + std::to_string(k.alpha)};
    rep.checks.push_back(contraction);

    AssumptionCheck ellip{"ellipticity", true, kInf, ""};
    for (const auto& a : volgrid.a_values) {
        const double slack = min_eigenvalue((1.0 - k.lambda) * a - k.alpha * Mat::Identity(d, d));
        if (slack < ellip.worst) {
            ellip.worst = slack;
            ellip.sample = "a_min_eig=" + std::to_string(min_eigenvalue(a));
        }
    }
    ellip.passed = ellip.worst >= -1e-12 && k.lambda >= 0.0 && k.lambda < 1.0;
    rep.checks.push_back(ellip);

    if (b.g) {
        AssumptionCheck lip{"g_lipschitz", true, kInf, ""};
        AssumptionCheck growth{"g_growth", true, kInf, ""};
        for (int i = 0; i < n_samples; ++i) {
            const double t = box.t_max * rng.uniform(i, 0, 100);
            const Vec x = draw_vec(i, 10, box.x_radius);
            const double y1 = uni(i, 20, box.y_radius), y2 = uni(i, 21, box.y_radius);
            const Vec z1 = draw_vec(i, 30, box.z_radius), z2 = draw_vec(i, 40, box.z_radius);
            const Vec g1 = b.g(t, x, y1, z1), g2 = b.g(t, x, y2, z2);
            const double lslack =
                k.C * (y1 - y2) * (y1 - y2) + k.alpha * (z1 - z2).squaredNorm() - (g1 - g2).squaredNorm();
            if (lslack < lip.worst) {
                lip.worst = lslack;
                lip.sample = describe(t, y1, y2);
            }
            double gslack;
            if (g1.size() == d) {
                const Mat bound = k.c * (1.0 + y1 * y1) * Mat::Identity(d, d) + k.beta * z1 * z1.transpose();
                gslack = min_eigenvalue(bound - g1 * g1.transpose());
            } else {
                gslack = k.c * (1.0 + y1 * y1) + k.beta * z1.squaredNorm() - g1.squaredNorm();
            }
            if (gslack < growth.worst) {
                growth.worst = gslack;
                growth.sample = describe(t, y1, y1);
            }
        }
        lip.passed = lip.worst >= -1e-10 * (1.0 + box.y_radius * box.y_radius);
        growth.passed = growth.worst >= -1e-10 * (1.0 + box.y_radius * box.y_radius);
        rep.checks.push_back(lip);
        rep.checks.push_back(growth);
    }

    if (b.F) {
        AssumptionCheck flip{"F_lipschitz", true, kInf, ""};
        for (int i = 0; i < n_samples; ++i) {
            const double t = box.t_max * rng.uniform(i, 1, 100);
            const Vec x = draw_vec(i, 50, box.x_radius);
            const double y1 = uni(i, 60, box.y_radius), y2 = uni(i, 61, box.y_radius);
            const Vec z1 = draw_vec(i, 70, box.z_radius), z2 = draw_vec(i, 80, box.z_radius);
            for (const auto& a : volgrid.a_values) {
                const double f1 = b.F(State{t, x, y1, z1}, a), f2 = b.F(State{t, x, y2, z2}, a);
                if (!std::isfinite(f1) || !std::isfinite(f2)) continue;
                const double slack =
                    k.C * (std::abs(y1 - y2) + (sqrt_psd(a) * (z1 - z2)).norm()) - std::abs(f1 - f2);
                if (slack < flip.worst) {
                    flip.worst = slack;
                    flip.sample = describe(t, y1, y2);
                }
            }
        }
        flip.passed = flip.worst >= -1e-10;
        rep.checks.push_back(flip);
    }
    for (auto& c : rep.checks)
        if (std::isinf(c.worst)) c.worst = 0.0;
    return rep;
}

}  // namespace bdsde
