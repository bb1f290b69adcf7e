#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "bdsde/errors.hpp"
#include "bdsde/lattice_paths.hpp"
#include "bdsde/linalg.hpp"
#include "bdsde/parallel.hpp"

namespace bdsde {

enum class DpEngine { lattice, tree };
enum class Quadrature { exact_linear, gauss_hermite };

// Probabilists' Gauss-Hermite rule (weights sum to 1) by Golub-Welsch.
inline void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    require(n >= 1, "Gauss-Hermite needs at least one node");
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    nodes.resize(n);
    weights.resize(n);
    for (int k = 0; k < n; ++k) {
        nodes[k] = es.eigenvalues()(k);
        weights[k] = es.eigenvectors()(0, k) * es.eigenvectors()(0, k);
    }
}

// Linear interpolation on a uniform lattice, linear extrapolation outside.
inline double uniform_interp(double x_min, double dx, const std::vector<double>& v, double x) {
    const int N = static_cast<int>(v.size());
    if (N == 1) return v[0];
    const double s = (x - x_min) / dx;
    int j = static_cast<int>(std::floor(s));
    j = std::clamp(j, 0, N - 2);
    const double w = s - j;
    return v[j] + w * (v[j + 1] - v[j]);
}

struct DpGeometry {
    DpEngine engine = DpEngine::lattice;
    double x0 = 0.0;
    double x_min = 0.0;
    double dx = 0.0;  // lattice spacing, or trinomial step for the tree engine
    int size = 0;     // lattice node count (lattice engine)
    int center = 0;   // index of x0 on the lattice
};

struct DpLatticeOptions {
    DpEngine engine = DpEngine::lattice;
    double x0 = 0.0;
    double dx_per_dt = 1.0;
    int x_steps = 0;  // > 0 overrides dx_per_dt: intervals across the whole lattice
    double half_width_sd = 6.0;
    Quadrature quadrature = Quadrature::exact_linear;
    int gh_nodes = 7;
    double a_geometry = 0.0;  // > 0: lattice geometry from this volatility instead of a_high
};

// One-step conditional expectation E_i[psi(X_{i+1})] and its Stein slope
// E_i[psi dX]/(a dt) under each scalar volatility of the grid.
class DpOperator {
public:
    DpOperator(const TimeGrid& grid, const VolatilityGrid& vg, const DpLatticeOptions& opt) : grid_(grid), opt_(opt) {
        if (vg.dim() != 1) fail(ErrorKind::unsupported_backend, "dynamic programming backend requires d = 1");
        for (int k = 0; k < vg.size(); ++k) a_.push_back(vg.scalar(k));
        const double a_geo = opt.a_geometry > 0.0 ? opt.a_geometry : vg.scalar_high();
        geo_.engine = opt.engine;
        geo_.x0 = opt.x0;
        if (opt.engine == DpEngine::tree) {
            geo_.dx = std::sqrt(3.0 * a_geo * grid.dt);
            for (double a : a_) {
                if (a > a_geo * (1.0 + 1e-12)) fail(ErrorKind::invalid_argument, "tree geometry too narrow for the grid");
                const double p = a * grid.dt / (2.0 * geo_.dx * geo_.dx);
                probs_.push_back({p, 1.0 - 2.0 * p, p});
            }
            return;
        }
        const double L = opt.half_width_sd * std::sqrt(a_geo * (grid.horizon - grid.t0));
        int half;
        if (opt.x_steps > 0) {
            half = std::max(1, opt.x_steps / 2);
            geo_.dx = L / half;
        } else {
            geo_.dx = opt.dx_per_dt * grid.dt;
            half = static_cast<int>(std::ceil(L / geo_.dx - 1e-9));
        }
        geo_.size = 2 * half + 1;
        geo_.center = half;
        geo_.x_min = opt.x0 - half * geo_.dx;
        const double sig_min = std::sqrt(*std::min_element(a_.begin(), a_.end()) * grid.dt);
        if (geo_.dx > sig_min)
            fail(ErrorKind::resolution, "lattice spacing exceeds the one-step standard deviation", sig_min);
        if (opt.quadrature == Quadrature::gauss_hermite) gauss_hermite(opt.gh_nodes, gh_x_, gh_w_);
        for (double a : a_) kernels_.push_back(make_kernel(std::sqrt(a * grid.dt)));
    }

    const DpGeometry& geometry() const { return geo_; }
    const TimeGrid& grid() const { return grid_; }
    int n_vol() const { return static_cast<int>(a_.size()); }
    double vol(int k) const { return a_[k]; }

    int level_size(int i) const { return geo_.engine == DpEngine::tree ? 2 * i + 1 : geo_.size; }
    double node(int i, int j) const {
        return geo_.engine == DpEngine::tree ? geo_.x0 + (j - i) * geo_.dx : geo_.x_min + j * geo_.dx;
    }
    std::vector<double> level(int i) const {
        std::vector<double> xs(level_size(i));
        for (int j = 0; j < level_size(i); ++j) xs[j] = node(i, j);
        return xs;
    }
    int root_index(int i) const { return geo_.engine == DpEngine::tree ? i : geo_.center; }

    // Value of a level-(i) nodal function at arbitrary x.
    double interp(int i, const std::vector<double>& v, double x) const {
        if (geo_.engine == DpEngine::tree) return uniform_interp(geo_.x0 - i * geo_.dx, geo_.dx, v, x);
        return uniform_interp(geo_.x_min, geo_.dx, v, x);
    }

    // psi lives on level i+1; outputs live on level i.
    void expect(int i, int k, const std::vector<double>& psi, std::vector<double>& mean, std::vector<double>& z) const {
        const int m = level_size(i);
        mean.assign(m, 0.0);
        z.assign(m, 0.0);
        const double adt = a_[k] * grid_.dt;
        if (geo_.engine == DpEngine::tree) {
            const auto& p = probs_[k];
            for (int j = 0; j < m; ++j) {
                double c = 0.0, zz = 0.0;
                for (int c3 = 0; c3 < 3; ++c3) {
                    c += p[c3] * psi[j + c3];
                    zz += p[c3] * psi[j + c3] * ((c3 - 1) * geo_.dx);
                }
                mean[j] = c;
                z[j] = zz / adt;
            }
            return;
        }
        if (opt_.quadrature == Quadrature::gauss_hermite) {
            const double sig = std::sqrt(adt);
            for (int j = 0; j < m; ++j) {
                double c = 0.0, zz = 0.0;
                for (std::size_t q = 0; q < gh_x_.size(); ++q) {
                    const double v = uniform_interp(geo_.x_min, geo_.dx, psi, node(i, j) + sig * gh_x_[q]);
                    c += gh_w_[q] * v;
                    zz += gh_w_[q] * v * gh_x_[q];
                }
                mean[j] = c;
                z[j] = zz / sig;
            }
            return;
        }
        const Kernel& K = kernels_[k];
        const int M = K.M;
        const int N = m;
        // ghost nodes by linear extrapolation
        std::vector<double> ext(N + 2 * M + 2);
        const double sl = psi[1] - psi[0], sr = psi[N - 1] - psi[N - 2];
        for (int q = 0; q < static_cast<int>(ext.size()); ++q) {
            const int j = q - M - 1;
            if (j < 0)
                ext[q] = psi[0] + j * sl;
            else if (j >= N)
                ext[q] = psi[N - 1] + (j - N + 1) * sr;
            else
                ext[q] = psi[j];
        }
        parallel_for(0, N, [&](std::size_t j) {
            const double* e = &ext[j + M + 1];
            double c = 0.0;
            for (int q = -M; q <= M; ++q) c += K.w[q + M] * e[q];
            double zz = 0.0;
            for (int q = -M; q < M; ++q) zz += K.qz[q + M] * (e[q + 1] - e[q]);
            mean[j] = c;
            z[j] = zz / geo_.dx;
        });
    }

private:
    struct Kernel {
        int M = 0;
        std::vector<double> w;   // nodal weights, index q + M
        std::vector<double> qz;  // interval probabilities, index q + M
    };

    // Exact Gaussian expectation of the piecewise-linear interpolant:
    // w_q = G(q+1) - 2G(q) + G(q-1), G(c) = E[(c + sN)^+], s = sigma/dx.
    Kernel make_kernel(double sigma) const {
        Kernel K;
        const double s = sigma / geo_.dx;
        K.M = static_cast<int>(std::ceil(8.0 * s)) + 2;
        auto G = [s](double c) { return c * norm_cdf(c / s) + s * norm_pdf(c / s); };
        K.w.resize(2 * K.M + 1);
        double tot = 0.0;
        for (int q = -K.M; q <= K.M; ++q) {
            K.w[q + K.M] = G(q + 1) - 2.0 * G(q) + G(q - 1);
            tot += K.w[q + K.M];
        }
        for (auto& v : K.w) v /= tot;
        K.qz.resize(2 * K.M);
        for (int q = -K.M; q < K.M; ++q) K.qz[q + K.M] = norm_cdf((q + 1) / s) - norm_cdf(q / s);
        return K;
    }

    TimeGrid grid_;
    DpLatticeOptions opt_;
    DpGeometry geo_;
    std::vector<double> a_;
    std::vector<std::array<double, 3>> probs_;
    std::vector<Kernel> kernels_;
    std::vector<double> gh_x_, gh_w_;
};

}  // namespace bdsde
