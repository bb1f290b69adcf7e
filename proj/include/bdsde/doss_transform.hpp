#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "bdsde/errors.hpp"
#include "bdsde/lattice_paths.hpp"
#include "bdsde/parallel.hpp"
#include "bdsde/tbdsde_solver.hpp"

namespace bdsde {

using FlowFn = std::function<double(double t, double x, double y)>;

// Scalar coefficient of the flow d eta = g(t, x, eta) o dW (l = 1). Missing
// partials fall back to central differences of g itself.
struct FlowCoefficient {
    FlowFn g;
    FlowFn gy, gx, gyy, gxy, gxx;
    double h_fd = 1e-4;

    double val(double t, double x, double y) const { return g ? g(t, x, y) : 0.0; }
    double dy(double t, double x, double y) const {
        if (gy) return gy(t, x, y);
        if (!g) return 0.0;
        return (g(t, x, y + h_fd) - g(t, x, y - h_fd)) / (2 * h_fd);
    }
    double dx(double t, double x, double y) const {
        if (gx) return gx(t, x, y);
        if (!g) return 0.0;
        return (g(t, x + h_fd, y) - g(t, x - h_fd, y)) / (2 * h_fd);
    }
    double dyy(double t, double x, double y) const {
        if (gyy) return gyy(t, x, y);
        if (!g) return 0.0;
        return (g(t, x, y + h_fd) - 2 * g(t, x, y) + g(t, x, y - h_fd)) / (h_fd * h_fd);
    }
    double dxx(double t, double x, double y) const {
        if (gxx) return gxx(t, x, y);
        if (!g) return 0.0;
        return (g(t, x + h_fd, y) - 2 * g(t, x, y) + g(t, x - h_fd, y)) / (h_fd * h_fd);
    }
    double dxy(double t, double x, double y) const {
        if (gxy) return gxy(t, x, y);
        if (!g) return 0.0;
        const double h = h_fd;
        return (g(t, x + h, y + h) - g(t, x + h, y - h) - g(t, x - h, y + h) + g(t, x - h, y - h)) / (4 * h * h);
    }
};

inline FlowCoefficient linear_flow(double beta) {
    FlowCoefficient c;
    c.g = [beta](double, double, double y) { return beta * y; };
    c.gy = [beta](double, double, double) { return beta; };
    c.gx = c.gyy = c.gxy = c.gxx = [](double, double, double) { return 0.0; };
    return c;
}

struct FlowPoint {
    double eta = 0.0, dy = 1.0, dx = 0.0, dxx = 0.0, dxy = 0.0, dyy = 0.0;
};

struct FlowLattice {
    std::vector<double> x;
    std::vector<double> y;
};

inline std::vector<double> uniform_points(double lo, double hi, int n) {
    std::vector<double> v(n);
    for (int k = 0; k < n; ++k) v[k] = n == 1 ? lo : lo + (hi - lo) * k / (n - 1);
    return v;
}

namespace detail {

// One Heun step from t_{i+1} back to t_i together with its exact tangent and
// second-order variations in (y, x).
inline FlowPoint heun_step(const FlowCoefficient& c, double s1, double s0, double x, const FlowPoint& p, double dw) {
    const double e = p.eta;
    const double a = c.val(s1, x, e);
    const double ay_ = c.dy(s1, x, e), ax_ = c.dx(s1, x, e);
    const double ayy = c.dyy(s1, x, e), axy = c.dxy(s1, x, e), axx = c.dxx(s1, x, e);
    // a as a function of the parameters
    const double a_y = ay_ * p.dy;
    const double a_x = ay_ * p.dx + ax_;
    const double a_yy = ayy * p.dy * p.dy + ay_ * p.dyy;
    const double a_xy = ayy * p.dy * p.dx + ay_ * p.dxy + axy * p.dy;
    const double a_xx = ayy * p.dx * p.dx + ay_ * p.dxx + 2 * axy * p.dx + axx;

    const double et = e + a * dw;
    const double et_y = p.dy + a_y * dw, et_x = p.dx + a_x * dw;
    const double et_yy = p.dyy + a_yy * dw, et_xy = p.dxy + a_xy * dw, et_xx = p.dxx + a_xx * dw;

    const double b = c.val(s0, x, et);
    const double by_ = c.dy(s0, x, et), bx_ = c.dx(s0, x, et);
    const double byy = c.dyy(s0, x, et), bxy = c.dxy(s0, x, et), bxx = c.dxx(s0, x, et);
    const double b_y = by_ * et_y;
    const double b_x = by_ * et_x + bx_;
    const double b_yy = byy * et_y * et_y + by_ * et_yy;
    const double b_xy = byy * et_y * et_x + by_ * et_xy + bxy * et_y;
    const double b_xx = byy * et_x * et_x + by_ * et_xx + 2 * bxy * et_x + bxx;

    FlowPoint q;
    q.eta = e + 0.5 * (a + b) * dw;
    q.dy = p.dy + 0.5 * (a_y + b_y) * dw;
    q.dx = p.dx + 0.5 * (a_x + b_x) * dw;
    q.dyy = p.dyy + 0.5 * (a_yy + b_yy) * dw;
    q.dxy = p.dxy + 0.5 * (a_xy + b_xy) * dw;
    q.dxx = p.dxx + 0.5 * (a_xx + b_xx) * dw;
    if (!std::isfinite(q.eta) || !std::isfinite(q.dy) || std::abs(q.eta) > 1e12)
        fail(ErrorKind::step_size, "flow integration diverged", 0.0);
    return q;
}

}  // namespace detail

struct FlowField {
    TimeGrid grid;
    FlowLattice lattice;
    FlowCoefficient coef;
    BackwardPath w;
    std::vector<FlowPoint> table;  // [i][ix][iy]

    const FlowPoint& at(int i, int ix, int iy) const {
        return table[(static_cast<std::size_t>(i) * lattice.x.size() + ix) * lattice.y.size() + iy];
    }

    // Direct integration from T down to t_i; exact for the discrete flow.
    FlowPoint evaluate(int i, double x, double y) const {
        FlowPoint p;
        p.eta = y;
        for (int k = grid.n_steps - 1; k >= i; --k)
            p = detail::heun_step(coef, grid.time(k + 1), grid.time(k), x, p, w.increment1(k));
        return p;
    }

    // All levels at once: out[i] = flow at t_i.
    std::vector<FlowPoint> evaluate_path(double x, double y) const {
        std::vector<FlowPoint> out(grid.size());
        out[grid.n_steps].eta = y;
        for (int k = grid.n_steps - 1; k >= 0; --k)
            out[k] = detail::heun_step(coef, grid.time(k + 1), grid.time(k), x, out[k + 1], w.increment1(k));
        return out;
    }
};

inline FlowField solve_flow(const FlowCoefficient& coef, const BackwardPath& w, const FlowLattice& lattice) {
    if (w.dim() != 1) fail(ErrorKind::invalid_argument, "flow supports a scalar backward noise only");
    require(!lattice.x.empty() && !lattice.y.empty(), "flow lattice is empty");
    FlowField f;
    f.grid = w.grid;
    f.lattice = lattice;
    f.coef = coef;
    f.w = w;
    const int n = w.grid.n_steps;
    const std::size_t nx = lattice.x.size(), ny = lattice.y.size();
    f.table.resize((n + 1) * nx * ny);
    parallel_for(0, nx * ny, [&](std::size_t q) {
        const std::size_t ix = q / ny, iy = q % ny;
        const auto path = f.evaluate_path(lattice.x[ix], lattice.y[iy]);
        for (int i = 0; i <= n; ++i) f.table[(i * nx + ix) * ny + iy] = path[i];
    });
    return f;
}

// ---------------------------------------------------------------------------
// Inverse

struct InversePoint {
    double E = 0.0, dy = 1.0, dx = 0.0, dxx = 0.0, dxy = 0.0, dyy = 0.0;
};

// Derivatives of E at (t, x, eta(t, x, u)) from the identities of the inverse map.
inline InversePoint inverse_from_flow(double u, const FlowPoint& p) {
    InversePoint q;
    q.E = u;
    q.dy = 1.0 / p.dy;
    q.dx = -p.dx / p.dy;
    q.dyy = -p.dyy / (p.dy * p.dy * p.dy);
    q.dxy = -(q.dyy * p.dy * p.dx + q.dy * p.dxy) / p.dy;
    q.dxx = -(2 * q.dxy * p.dx + q.dyy * p.dx * p.dx + q.dy * p.dxx);
    return q;
}

// Root of eta(t_i, x, u) = target with u bracketed in [lo, hi].
inline double invert_point(const FlowField& f, int i, double x, double target, double lo, double hi) {
    double flo = f.evaluate(i, x, lo).eta - target, fhi = f.evaluate(i, x, hi).eta - target;
    if (flo > 0.0 || fhi < 0.0) fail(ErrorKind::range, "target outside the flow's range on the y-lattice");
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    double u = lo + (hi - lo) * (-flo) / (fhi - flo);
    for (int it = 0; it < 200; ++it) {
        const FlowPoint p = f.evaluate(i, x, u);
        const double r = p.eta - target;
        if (r == 0.0) return u;
        if (r < 0.0) lo = u; else hi = u;
        double next = u - r / p.dy;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const double step = std::abs(next - u);
        u = next;
        if (step <= 2e-16 * std::max(1.0, std::abs(u)) || hi - lo <= 4e-16 * std::max(1.0, std::abs(u))) break;
    }
    return u;
}

struct InverseField {
    const FlowField* flow = nullptr;
    std::vector<InversePoint> table;  // [i][ix][iy], iy indexes target values lattice.y
    std::vector<char> valid;
    int invalid_count = 0;

    const InversePoint& at(int i, int ix, int iy) const {
        return table[(static_cast<std::size_t>(i) * flow->lattice.x.size() + ix) * flow->lattice.y.size() + iy];
    }
    bool is_valid(int i, int ix, int iy) const {
        return valid[(static_cast<std::size_t>(i) * flow->lattice.x.size() + ix) * flow->lattice.y.size() + iy];
    }

    InversePoint evaluate(int i, double x, double y) const {
        const auto& ly = flow->lattice.y;
        const double u = invert_point(*flow, i, x, y, ly.front(), ly.back());
        return inverse_from_flow(u, flow->evaluate(i, x, u));
    }
};

inline InverseField invert_flow(const FlowField& flow) {
    InverseField inv;
    inv.flow = &flow;
    const auto& L = flow.lattice;
    const int n = flow.grid.n_steps;
    const std::size_t nx = L.x.size(), ny = L.y.size();
    for (const auto& p : flow.table)
        if (!(p.dy > 0.0)) fail(ErrorKind::singular_flow, "flow is not strictly increasing in y");
    inv.table.resize((n + 1) * nx * ny);
    inv.valid.assign((n + 1) * nx * ny, 0);
    std::vector<int> bad(nx * (n + 1), 0);
    parallel_for(0, (n + 1) * nx, [&](std::size_t q) {
        const int i = static_cast<int>(q / nx);
        const std::size_t ix = q % nx;
        const double lo = flow.at(i, ix, 0).eta, hi = flow.at(i, ix, ny - 1).eta;
        for (std::size_t iy = 0; iy < ny; ++iy) {
            const std::size_t idx = (i * nx + ix) * ny + iy;
            const double target = L.y[iy];
            if (target < lo || target > hi) {
                ++bad[q];
                continue;
            }
            const double u = invert_point(flow, i, L.x[ix], target, L.y.front(), L.y.back());
            inv.table[idx] = inverse_from_flow(u, flow.evaluate(i, L.x[ix], u));
            inv.valid[idx] = 1;
        }
    });
    for (int b : bad) inv.invalid_count += b;
    return inv;
}

// max over the lattice of |E(t, x, eta(t, x, y)) - y|
inline double roundtrip_error(const FlowField& flow, const InverseField& inv) {
    const auto& L = flow.lattice;
    double worst = 0.0;
    for (int i = 0; i <= flow.grid.n_steps; ++i)
        for (std::size_t ix = 0; ix < L.x.size(); ++ix)
            for (std::size_t iy = 0; iy < L.y.size(); ++iy) {
                const double e = flow.at(i, ix, iy).eta;
                const double u = invert_point(flow, i, L.x[ix], e, L.y.front(), L.y.back());
                worst = std::max(worst, std::abs(u - L.y[iy]));
            }
    (void)inv;
    return worst;
}

struct IdentityReport {
    double inverse_y = 0.0;   // D_yE D_yeta = 1
    double inverse_x = 0.0;   // D_xE + D_yE D_xeta = 0
    double inverse_yy = 0.0;  // D_yyE (D_yeta)^2 + D_yE D_yyeta = 0
    double inverse_xy = 0.0;  // mixed second-order identity
    double inverse_xx = 0.0;
    double chain_first = 0.0;   // D_x psi = D_x eta + D_y eta D_x phi
    double chain_second = 0.0;  // second-order chain rule
    double max() const {
        return std::max({inverse_y, inverse_x, inverse_yy, inverse_xy, inverse_xx, chain_first, chain_second});
    }
};

// Identities checked against finite differences of the root-found inverse and
// of a composite field psi(x) = eta(t, x, phi(x)), independent of the tables.
inline IdentityReport derivative_identity_report(const FlowField& flow, const InverseField& inv, int stride = 1) {
    IdentityReport rep;
    const auto& L = flow.lattice;
    const double lo = L.y.front(), hi = L.y.back();
    const double h1 = 1e-5, h2 = 1e-3;
    auto phi = [](double x) { return 0.3 * std::sin(x) + 0.2 * x; };
    auto dphi = [](double x) { return 0.3 * std::cos(x) + 0.2; };
    auto ddphi = [](double x) { return -0.3 * std::sin(x); };
    auto rel = [](double v, double scale) { return std::abs(v) / (1.0 + std::abs(scale)); };
    // fourth-order five-point stencil
    auto second_diff = [](auto&& f, double f0, double h) {
        return (-f(2 * h) + 16 * f(h) - 30 * f0 + 16 * f(-h) - f(-2 * h)) / (12 * h * h);
    };
    for (int i = 0; i <= flow.grid.n_steps; i += stride)
        for (std::size_t ix = 0; ix < L.x.size(); ++ix)
            for (std::size_t iy = 1; iy + 1 < L.y.size(); ++iy) {
                const double x = L.x[ix];
                const FlowPoint p = flow.at(i, ix, iy);
                const double e = p.eta;
                auto E = [&](double xx, double yy) { return invert_point(flow, i, xx, yy, lo, hi); };
                const double Ey = (E(x, e + h1) - E(x, e - h1)) / (2 * h1);
                const double Ex = (E(x + h1, e) - E(x - h1, e)) / (2 * h1);
                const double E0 = E(x, e);
                const double Eyy = second_diff([&](double d) { return E(x, e + d); }, E0, h2);
                const double Exx = second_diff([&](double d) { return E(x + d, e); }, E0, h2);
                const double Exy = (E(x + h2, e + h2) - E(x + h2, e - h2) - E(x - h2, e + h2) + E(x - h2, e - h2)) /
                                   (4 * h2 * h2);
                rep.inverse_y = std::max(rep.inverse_y, rel(Ey * p.dy - 1.0, 0.0));
                rep.inverse_x = std::max(rep.inverse_x, rel(Ex + Ey * p.dx, Ey * p.dx));
                rep.inverse_yy = std::max(rep.inverse_yy, rel(Eyy * p.dy * p.dy + Ey * p.dyy, Ey * p.dyy));
                rep.inverse_xy =
                    std::max(rep.inverse_xy, rel(Exy * p.dy + Eyy * p.dy * p.dx + Ey * p.dxy, Ey * p.dxy));
                rep.inverse_xx = std::max(
                    rep.inverse_xx, rel(Exx + 2 * Exy * p.dx + Eyy * p.dx * p.dx + Ey * p.dxx, Ey * p.dxx));

                auto psi = [&](double xx) { return flow.evaluate(i, xx, phi(xx)).eta; };
                const FlowPoint q = flow.evaluate(i, x, phi(x));
                const double dpsi = (psi(x + h1) - psi(x - h1)) / (2 * h1);
                const double ddpsi = second_diff([&](double d) { return psi(x + d); }, psi(x), h2);
                const double f1 = q.dx + q.dy * dphi(x);
                const double f2 = q.dxx + 2 * q.dxy * dphi(x) + q.dyy * dphi(x) * dphi(x) + q.dy * ddphi(x);
                rep.chain_first = std::max(rep.chain_first, rel(dpsi - f1, f1));
                rep.chain_second = std::max(rep.chain_second, rel(ddpsi - f2, f2));
            }
    (void)inv;
    return rep;
}

// ---------------------------------------------------------------------------
// Transformed generator. F is the Stratonovich driver in the minus convention
// (Y_t = xi - int F ds + int g o dW - int Z dB + K_T - K_t):
//   ftilde = (F(t, x, eta, eta_y z + eta_x, a) - 1/2 a eta_xx - z a eta_xy - 1/2 eta_yy a z^2) / eta_y

inline double transformed_generator(const ScalarDriver& F, const FlowPoint& p, double t, double x, double z, double a) {
    if (p.dy < 1e-10) fail(ErrorKind::singular_flow, "D_y eta below 1e-10");
    const double fv = F ? F(t, x, p.eta, p.dy * z + p.dx, a) : 0.0;
    return (fv - 0.5 * a * p.dxx - z * a * p.dxy - 0.5 * p.dyy * a * z * z) / p.dy;
}

inline double transformed_generator(const ScalarDriver& F, const FlowField& flow, int i, double x, double y, double z,
                                    double a) {
    return transformed_generator(F, flow.evaluate(i, x, y), flow.grid.time(i), x, z, a);
}

// Traces along one forward path on the grid.
struct ProcessTrace {
    std::vector<double> x, y, z, k;
};

// (Y, Z, K) -> (U, V, Ktilde): U = E(t, X, Y), V = E_y Z + E_x, dKtilde = E_y dK.
inline ProcessTrace transform_solution(const ProcessTrace& tr, const FlowField& flow) {
    const int n = flow.grid.n_steps;
    require(static_cast<int>(tr.y.size()) == n + 1 && tr.x.size() == tr.y.size(), "trace must be aligned with the grid");
    const auto& L = flow.lattice;
    ProcessTrace out;
    out.x = tr.x;
    out.y.resize(n + 1);
    out.z.resize(n + 1);
    out.k.assign(n + 1, 0.0);
    std::vector<double> Ey(n + 1);
    for (int i = 0; i <= n; ++i) {
        const double u = invert_point(flow, i, tr.x[i], tr.y[i], L.y.front(), L.y.back());
        const InversePoint q = inverse_from_flow(u, flow.evaluate(i, tr.x[i], u));
        out.y[i] = u;
        out.z[i] = q.dy * (tr.z.empty() ? 0.0 : tr.z[i]) + q.dx;
        Ey[i] = q.dy;
    }
    if (!tr.k.empty())
        for (int i = 0; i < n; ++i) out.k[i + 1] = out.k[i] + Ey[i] * (tr.k[i + 1] - tr.k[i]);
    return out;
}

// (U, V, Ktilde) -> (Y, Z, K): Y = eta(t, X, U), Z = eta_y V + eta_x, dK = eta_y dKtilde.
inline ProcessTrace back_transform(const ProcessTrace& tr, const FlowField& flow) {
    const int n = flow.grid.n_steps;
    ProcessTrace out;
    out.x = tr.x;
    out.y.resize(n + 1);
    out.z.resize(n + 1);
    out.k.assign(n + 1, 0.0);
    std::vector<double> ey(n + 1);
    for (int i = 0; i <= n; ++i) {
        const FlowPoint p = flow.evaluate(i, tr.x[i], tr.y[i]);
        out.y[i] = p.eta;
        out.z[i] = p.dy * (tr.z.empty() ? 0.0 : tr.z[i]) + p.dx;
        ey[i] = p.dy;
    }
    if (!tr.k.empty())
        for (int i = 0; i < n; ++i) out.k[i + 1] = out.k[i] + ey[i] * (tr.k[i + 1] - tr.k[i]);
    return out;
}

struct SamplePoint {
    int i = 0;
    double x = 0.0, y = 0.0, z = 0.0, a = 1.0;
};

// H = E_y F + 1/2 E_xx a + 1/2 E_yy a z^2 + E_xy z a at (t, x, Y, Z) against
// ftilde at (t, x, U, V); returns the max discrepancy.
inline double consistency_check_H_equals_ftilde(const ScalarDriver& F, const FlowField& flow,
                                                const std::vector<SamplePoint>& samples) {
    const auto& L = flow.lattice;
    double worst = 0.0;
    for (const auto& s : samples) {
        const double t = flow.grid.time(s.i);
        const double u = invert_point(flow, s.i, s.x, s.y, L.y.front(), L.y.back());
        const FlowPoint p = flow.evaluate(s.i, s.x, u);
        const InversePoint q = inverse_from_flow(u, p);
        const double fv = F ? F(t, s.x, s.y, s.z, s.a) : 0.0;
        const double H = q.dy * fv + 0.5 * q.dxx * s.a + 0.5 * q.dyy * s.a * s.z * s.z + q.dxy * s.z * s.a;
        const double v = q.dy * s.z + q.dx;
        const double ft = transformed_generator(F, p, t, s.x, v, s.a);
        worst = std::max(worst, std::abs(H - ft));
    }
    return worst;
}

struct GrowthReport {
    double value_c_wt = 0.0;         // |zeta| <= |y| + C |W_t|
    double value_c_increment = 0.0;  // |zeta| <= |y| + C |W_T - W_t|
    double deriv_c_wt = 0.0;         // |D zeta| <= C exp(C |W_t|)
    double deriv_c_increment = 0.0;
    bool wt_finite = true;
    bool increment_finite = true;
    bool passed() const { return wt_finite || increment_finite; }
};

inline GrowthReport growth_check(const FlowField& flow, const InverseField& inv, double cap = 1e6) {
    GrowthReport rep;
    const auto& L = flow.lattice;
    auto smallest_exp_c = [cap](double D, double w) {
        D = std::abs(D);
        if (D <= 0.0) return 0.0;
        if (w <= 0.0) return D;
        double lo = 0.0, hi = cap;
        if (hi * std::exp(std::min(700.0, hi * w)) < D) return std::numeric_limits<double>::infinity();
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (mid * std::exp(std::min(700.0, mid * w)) >= D) hi = mid; else lo = mid;
        }
        return hi;
    };
    auto value_c = [](double zeta, double y, double w) {
        const double ex = std::abs(zeta) - std::abs(y);
        if (ex <= 1e-12 * (1.0 + std::abs(y))) return 0.0;
        if (w <= 0.0) return std::numeric_limits<double>::infinity();
        return ex / w;
    };
    for (int i = 0; i <= flow.grid.n_steps; ++i) {
        const double wt = std::abs(flow.w.values[i](0) - flow.w.values[0](0));
        const double winc = std::abs(flow.w.tail1(i));
        for (std::size_t ix = 0; ix < L.x.size(); ++ix)
            for (std::size_t iy = 0; iy < L.y.size(); ++iy) {
                const FlowPoint& p = flow.at(i, ix, iy);
                const double y = L.y[iy];
                std::vector<std::pair<double, double>> vals{{p.eta, y}};
                std::vector<double> derivs{p.dy, p.dx, p.dxx, p.dxy, p.dyy};
                if (inv.is_valid(i, ix, iy)) {
                    const InversePoint& q = inv.at(i, ix, iy);
                    vals.push_back({q.E, y});
                    derivs.insert(derivs.end(), {q.dy, q.dx, q.dxx, q.dxy, q.dyy});
                }
                for (const auto& [z, yy] : vals) {
                    rep.value_c_wt = std::max(rep.value_c_wt, value_c(z, yy, wt));
                    rep.value_c_increment = std::max(rep.value_c_increment, value_c(z, yy, winc));
                }
                for (double D : derivs) {
                    rep.deriv_c_wt = std::max(rep.deriv_c_wt, smallest_exp_c(D, wt));
                    rep.deriv_c_increment = std::max(rep.deriv_c_increment, smallest_exp_c(D, winc));
                }
            }
    }
    rep.wt_finite = rep.value_c_wt <= cap && rep.deriv_c_wt <= cap;
    rep.increment_finite = rep.value_c_increment <= cap && rep.deriv_c_increment <= cap;
    return rep;
}

// ---------------------------------------------------------------------------
// Stochastic PDE problems in Feynman-Kac form:
//   Y_t = phi(X_T) - int F(a) ds + int g(Y) o dW - int Z dB + K_T - K_t

struct SpdeProblem {
    ScalarTerminal phi;
    ScalarDriver F;  // minus convention, Stratonovich form
    FlowCoefficient g;
    VolatilityGrid volgrid;
    double lipschitz_y = 0.0;
};

// Direct 2BDSDE with the Stratonovich integral (trapezoidal scheme).
inline TbdsdeProblem stratonovich_problem(const SpdeProblem& s) {
    TbdsdeProblem p;
    p.terminal = s.phi;
    if (s.F) p.F = [F = s.F](double t, double x, double y, double z, double a) { return -F(t, x, y, z, a); };
    if (s.g.g) p.g = [g = s.g](double t, double x, double y, double) { return g.val(t, x, y); };
    p.volgrid = s.volgrid;
    p.lipschitz_y = s.lipschitz_y;
    return p;
}

// Itô form: driver -F + 1/2 g D_y g with the backward Itô scheme.
inline TbdsdeProblem ito_problem(const SpdeProblem& s) {
    TbdsdeProblem p = stratonovich_problem(s);
    p.F = [F = s.F, g = s.g](double t, double x, double y, double z, double a) {
        const double base = F ? -F(t, x, y, z, a) : 0.0;
        return base + 0.5 * g.val(t, x, y) * g.dy(t, x, y);
    };
    p.lipschitz_y = s.lipschitz_y;
    return p;
}

// Transformed 2BSDE: no backward integral, driver -ftilde, same terminal data.
inline TbdsdeProblem transformed_problem(const SpdeProblem& s, const FlowField& flow) {
    TbdsdeProblem p;
    p.terminal = s.phi;
    const TimeGrid grid = flow.grid;
    p.F = [F = s.F, &flow, grid](double t, double x, double u, double v, double a) {
        const int i = std::clamp(static_cast<int>(std::lround((t - grid.t0) / grid.dt)), 0, grid.n_steps);
        return -transformed_generator(F, flow.evaluate(i, x, u), t, x, v, a);
    };
    p.volgrid = s.volgrid;
    p.lipschitz_y = s.lipschitz_y;
    return p;
}

// htilde(t, x, y, z, gamma) = sup_a { 1/2 a gamma - ftilde(t, x, y, z, a) }, with
// t mapped to the grid node at or after it.
inline std::function<double(double, double, double, double, double)> transformed_hamiltonian(const SpdeProblem& s,
                                                                                               const FlowField& flow) {
    const TimeGrid grid = flow.grid;
    return [s, &flow, grid](double t, double x, double y, double z, double gamma) {
        const int i = std::clamp(static_cast<int>(std::ceil((t - grid.t0) / grid.dt - 1e-9)), 0, grid.n_steps);
        const FlowPoint p = flow.evaluate(i, x, y);
        double best = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < s.volgrid.size(); ++k) {
            const double a = s.volgrid.scalar(k);
            best = std::max(best, 0.5 * a * gamma - transformed_generator(s.F, p, grid.time(i), x, z, a));
        }
        return best;
    };
}

struct DossResult {
    double U0 = 0.0;
    double Y0 = 0.0;
    TbdsdeSolution transformed;
};

// Solves the transformed 2BSDE and maps the root value back through the flow.
inline DossResult solve_via_doss(const SpdeProblem& s, const TimeGrid& grid, const FlowField& flow,
                                 const BackwardPath& w, const DpOptions& opt = {}) {
    DossResult r;
    DpOptions o = opt;
    o.noise = NoiseScheme::backward_ito;
    r.transformed = solve_dp(transformed_problem(s, flow), grid, w, o);
    r.U0 = r.transformed.Y0;
    r.Y0 = flow.evaluate(0, opt.lattice.x0, r.U0).eta;
    return r;
}

}  // namespace bdsde
