#include <cmath>

#include <gtest/gtest.h>

#include "bdsde/pde_oracles.hpp"

using namespace bdsde;

TEST(HeatSemigroup, PolynomialMoments) {
    const double a = 1.5, tau = 0.4, s2 = a * tau;
    const Polynomial x{{0, 1}}, x2{{0, 0, 1}}, x4{{0, 0, 0, 0, 1}};
    for (double q : {-1.3, 0.0, 0.7}) {
        EXPECT_NEAR(heat_semigroup(x, a, tau)(q), q, 1e-14);
        EXPECT_NEAR(heat_semigroup(x2, a, tau)(q), q * q + s2, 1e-14);
        EXPECT_NEAR(heat_semigroup(x4, a, tau)(q), std::pow(q, 4) + 6 * q * q * s2 + 3 * s2 * s2, 1e-13);
    }
    EXPECT_NEAR(heat_semigroup(x2, a, 0.0)(2.0), 4.0, 1e-15);
    EXPECT_THROW(heat_semigroup(x2, -1.0, tau), Error);
}

TEST(HeatSemigroup, QuadratureOverload) {
    const double a = 0.8, tau = 0.5;
    const auto quart = heat_semigroup([](double x) { return std::pow(x, 4); }, a, tau);
    const Polynomial x4{{0, 0, 0, 0, 1}};
    EXPECT_NEAR(quart(0.6), heat_semigroup(x4, a, tau)(0.6), 1e-10);
    // E cos(x + s N) = cos(x) exp(-s^2 / 2)
    const auto c = heat_semigroup([](double x) { return std::cos(x); }, a, tau);
    EXPECT_NEAR(c(0.3), std::cos(0.3) * std::exp(-0.5 * a * tau), 1e-12);
}

TEST(BsbClosedForm, ConvexAndConcave) {
    EXPECT_NEAR(bsb_closed_form(Polynomial{{0, 0, 1}}, 0.5, 2.0, 1.0, 1.0), 3.0, 1e-14);
    EXPECT_NEAR(bsb_closed_form(Polynomial{{0, 0, -1}}, 0.5, 2.0, 1.0, 1.0), -1.5, 1e-14);
    EXPECT_NEAR(bsb_closed_form(Polynomial{{2, 3}}, 0.5, 2.0, 1.0, 1.0), 5.0, 1e-14);
    try {
        bsb_closed_form(Polynomial{{0, 0, 0, 1}}, 0.5, 2.0, 1.0, 0.0);
        FAIL() << "expected an unsupported_oracle error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::unsupported_oracle);
    }
}

TEST(LinearSpdeClosedForm, ScalesWithBackwardNoise) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 8);
    const Polynomial phi{{0, 0, 1}};
    const BackwardPath lin = linear_backward_path(g, vec1(0.2));
    EXPECT_NEAR(linear_spde_closed_form(0.5, phi, lin, 0, 1.0), std::exp(0.1) * 2.0, 1e-14);
    EXPECT_NEAR(linear_spde_closed_form(0.5, phi, lin, 8, 1.0), 1.0, 1e-15);

    const BackwardPath w = sample_backward_path(g, 1, 31);
    EXPECT_NEAR(linear_spde_closed_form(0.0, phi, w, 2, 0.4), heat_semigroup(phi, 1.0, 0.75)(0.4), 1e-14);
    const BackwardPath nw = negate_backward_path(w);
    for (int i : {0, 3, 6}) {
        const double r = linear_spde_closed_form(0.7, phi, w, i, 0.2) / linear_spde_closed_form(0.7, phi, nw, i, 0.2);
        EXPECT_NEAR(r, std::exp(2 * 0.7 * w.tail1(i)), 1e-12);
    }
}

TEST(FiniteDifference, HeatQuadraticIsExact) {
    const double T = 1.0;
    RandomPdeProblem p;
    p.htilde = [](double, double, double, double, double gam) { return 0.5 * gam; };
    p.terminal = [](double x) { return x * x; };
    p.boundary = FdBoundary::dirichlet;
    p.dirichlet = [T](double t, double x) { return x * x + (T - t); };
    const auto sol = fd_random_pde(p, build_time_grid(0.0, T, 10), 40);
    EXPECT_GT(sol.substeps, 1);
    EXPECT_NEAR(sol.value(0, 0.0), T, 1e-10);
    EXPECT_NEAR(sol.value(5, 0.5), 0.25 + 0.5, 1e-10);
}

TEST(FiniteDifference, Barenblatt) {
    RandomPdeProblem p;
    p.htilde = [](double, double, double, double, double gam) { return 0.5 * std::max(0.5 * gam, 2.0 * gam); };
    p.terminal = [](double x) { return -x * x; };
    p.x_lo = -2.0;
    p.x_hi = 2.0;
    p.diffusivity_bound = 2.0;
    p.boundary = FdBoundary::dirichlet;
    p.dirichlet = [](double t, double x) { return -x * x - 0.5 * (1.0 - t); };
    const auto sol = fd_random_pde(p, build_time_grid(0.0, 1.0, 20), 80);
    EXPECT_NEAR(sol.value(0, 0.0), bsb_closed_form(Polynomial{{0, 0, -1}}, 0.5, 2.0, 1.0, 0.0), 1e-10);
}

TEST(FiniteDifference, CflViolationReportsStableStep) {
    RandomPdeProblem p;
    p.htilde = [](double, double, double, double, double gam) { return 0.5 * gam; };
    p.terminal = [](double x) { return x * x; };
    const double dx = 2.0 / 40;
    try {
        fd_random_pde(p, build_time_grid(0.0, 1.0, 10), 40, 1);
        FAIL() << "expected a stability error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::stability);
        EXPECT_NEAR(e.detail(), dx * dx, 1e-15);
    }
    RandomPdeProblem q = p;
    q.boundary = FdBoundary::dirichlet;
    EXPECT_THROW(fd_random_pde(q, build_time_grid(0.0, 1.0, 10), 40), Error);
}

TEST(ItoProduct, DeterministicProcesses) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 32);
    const PathEnsemble ens = sample_forward_ensemble(g, 10, mat1(1.0), 1, vec1(0.0));
    ItoProcess X;
    X.alpha = [](double, double, double) { return 1.0; };
    const auto r = ito_product_check(X, X, zero_backward_path(g), ens);
    // left-point sums of 2t dt miss T dt
    EXPECT_NEAR(r.mean_residual, g.dt, 1e-13);
}

TEST(ItoProduct, ForwardSquareConverges) {
    ItoProcess B;
    B.beta = [](double, double, double) { return 1.0; };
    double prev = 1e9;
    for (int n : {16, 256, 4096}) {
        const TimeGrid g = build_time_grid(0.0, 1.0, n);
        const auto r = ito_product_check(B, B, zero_backward_path(g), sample_forward_ensemble(g, 200, mat1(1.0), 4, vec1(0.0)));
        EXPECT_LT(r.mean_abs_residual, prev);
        prev = r.mean_abs_residual;
    }
    EXPECT_LT(prev, 0.05);
}

TEST(ItoProduct, CrossTermIsExact) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 64);
    ItoProcess B, W;
    B.beta = [](double, double, double) { return 1.0; };
    W.gamma = [](double, double, double) { return 1.0; };
    const auto r = ito_product_check(B, W, sample_backward_path(g, 1, 2), sample_forward_ensemble(g, 100, mat1(1.0), 3, vec1(0.0)));
    EXPECT_LT(r.mean_abs_residual, 1e-12);
}

TEST(ItoProduct, BackwardBracketSign) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 4096);
    ItoProcess W;
    W.gamma = [](double, double, double) { return 1.0; };
    const BackwardPath w = sample_backward_path(g, 1, 6);
    const PathEnsemble ens = sample_forward_ensemble(g, 2, mat1(1.0), 1, vec1(0.0));
    const auto right = ito_product_check(W, W, w, ens);
    const auto flipped = ito_product_check(W, W, w, ens, 1.0);
    EXPECT_LT(std::abs(right.mean_residual), 0.1);
    EXPECT_NEAR(flipped.mean_residual, -2.0, 0.1);
}
