#include <cmath>

#include <gtest/gtest.h>

#include "bdsde/doss_transform.hpp"

using namespace bdsde;

namespace {

FlowLattice small_lattice() { return {uniform_points(-1.0, 1.0, 3), uniform_points(-2.0, 2.0, 9)}; }

FlowCoefficient sine_flow() {
    FlowCoefficient c;
    c.g = [](double, double x, double y) { return 0.3 * std::sin(y) + 0.1 * std::cos(x); };
    return c;
}

}  // namespace

TEST(Flow, ZeroCoefficientIsIdentity) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 8);
    const auto f = solve_flow(FlowCoefficient{}, sample_backward_path(g, 1, 3), small_lattice());
    for (int i = 0; i <= 8; ++i) {
        const FlowPoint p = f.evaluate(i, 0.4, 1.3);
        EXPECT_EQ(p.eta, 1.3);
        EXPECT_EQ(p.dy, 1.0);
        EXPECT_EQ(p.dx, 0.0);
        EXPECT_EQ(p.dyy, 0.0);
    }
}

TEST(Flow, LinearCoefficientSecondOrder) {
    const double beta = 0.5, exact = std::exp(0.15);
    std::vector<double> err;
    for (int n : {8, 16, 32}) {
        const TimeGrid g = build_time_grid(0.0, 1.0, n);
        const auto f = solve_flow(linear_flow(beta), linear_backward_path(g, vec1(0.3)), small_lattice());
        const FlowPoint p = f.evaluate(0, 0.0, 1.0);
        err.push_back(std::abs(p.eta - exact));
        EXPECT_NEAR(p.dy, p.eta, 1e-14);  // eta is linear in y
        EXPECT_NEAR(p.dyy, 0.0, 1e-14);
    }
    EXPECT_LT(err[0], 1e-4);
    EXPECT_NEAR(err[0] / err[1], 4.0, 0.2);
    EXPECT_NEAR(err[1] / err[2], 4.0, 0.2);
}

TEST(Flow, ConstantCoefficientShiftsByIncrement) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 16);
    const BackwardPath w = sample_backward_path(g, 1, 9);
    FlowCoefficient c;
    c.g = [](double, double, double) { return 0.7; };
    const auto f = solve_flow(c, w, small_lattice());
    for (int i = 0; i <= 16; ++i) EXPECT_NEAR(f.evaluate(i, 0.0, 0.2).eta, 0.2 + 0.7 * w.tail1(i), 1e-13);

    const auto inv = invert_flow(f);
    const auto rep = growth_check(f, inv);
    EXPECT_TRUE(rep.increment_finite);
    EXPECT_LE(rep.value_c_increment, 0.7 + 1e-9);
}

TEST(Inverse, LinearFlowInverse) {
    const double beta = 0.5;
    const TimeGrid g = build_time_grid(0.0, 1.0, 16);
    const BackwardPath w = sample_backward_path(g, 1, 5);
    const auto f = solve_flow(linear_flow(beta), w, {uniform_points(-1, 1, 3), uniform_points(-4.0, 4.0, 17)});
    const auto inv = invert_flow(f);
    for (int i = 0; i <= 16; i += 4) {
        const double scale = f.evaluate(i, 0.0, 1.0).eta;
        double prod = 1.0;  // Heun on a linear coefficient is a truncated exponential per step
        for (int k = i; k < 16; ++k) {
            const double d = beta * w.increment1(k);
            prod *= 1.0 + d + 0.5 * d * d;
        }
        EXPECT_NEAR(scale, prod, 1e-13);
        EXPECT_NEAR(scale, std::exp(beta * w.tail1(i)), 0.05);
        const InversePoint q = inv.evaluate(i, 0.0, 0.9);
        EXPECT_NEAR(q.E, 0.9 / scale, 1e-12);
        EXPECT_NEAR(q.dy, 1.0 / scale, 1e-12);
    }
    EXPECT_LT(roundtrip_error(f, inv), 1e-8);
    EXPECT_LT(derivative_identity_report(f, inv, 4).max(), 1e-8);
}

TEST(Inverse, NonlinearFlowIdentities) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 8);
    const auto f = solve_flow(sine_flow(), sample_backward_path(g, 1, 12), small_lattice());
    const auto inv = invert_flow(f);
    EXPECT_LT(roundtrip_error(f, inv), 1e-8);
    EXPECT_LT(derivative_identity_report(f, inv, 4).max(), 1e-4);
}

TEST(Inverse, TargetOutsideRange) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 4);
    const auto f = solve_flow(linear_flow(0.5), linear_backward_path(g, vec1(1.0)), small_lattice());
    try {
        invert_point(f, 0, 0.0, 50.0, -2.0, 2.0);
        FAIL() << "expected a range error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::range);
    }
}

TEST(TransformedGenerator, LinearFlow) {
    const double e = std::exp(0.4);
    FlowPoint p;
    p.eta = 2.0 * e;
    p.dy = e;
    ScalarDriver F = [](double, double, double y, double z, double a) { return y + 2.0 * z + a; };
    // (e u + 2 e z + a) / e
    EXPECT_NEAR(transformed_generator(F, p, 0.0, 0.0, 0.5, 1.5), 2.0 + 1.0 + 1.5 / e, 1e-13);
    EXPECT_NEAR(transformed_generator(ScalarDriver{}, p, 0.0, 0.0, 0.5, 1.5), 0.0, 1e-15);
}

TEST(TransformedGenerator, SingularFlow) {
    FlowPoint p;
    p.dy = 1e-12;
    try {
        transformed_generator(ScalarDriver{}, p, 0.0, 0.0, 0.0, 1.0);
        FAIL() << "expected a singular_flow error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::singular_flow);
    }
}

TEST(TransformedGenerator, ConsistencyWithChainRule) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 8);
    const auto f = solve_flow(sine_flow(), sample_backward_path(g, 1, 2), small_lattice());
    ScalarDriver F = [](double t, double x, double y, double z, double a) {
        return std::sin(y) - 0.2 * z * z + 0.1 * a * x + t;
    };
    std::vector<SamplePoint> pts;
    for (int i : {0, 3, 7})
        for (double y : {-0.5, 0.0, 0.8}) pts.push_back({i, 0.3, y, 0.4, 1.2});
    EXPECT_LT(consistency_check_H_equals_ftilde(F, f, pts), 1e-8);
}

TEST(Trace, TransformRoundTrip) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 8);
    const auto f = solve_flow(sine_flow(), sample_backward_path(g, 1, 6), small_lattice());
    ProcessTrace tr;
    for (int i = 0; i <= 8; ++i) {
        tr.x.push_back(0.1 * i - 0.3);
        tr.y.push_back(0.5 * std::cos(i));
        tr.z.push_back(0.2 * i);
        tr.k.push_back(0.05 * i);
    }
    const auto back = back_transform(transform_solution(tr, f), f);
    for (int i = 0; i <= 8; ++i) {
        EXPECT_NEAR(back.y[i], tr.y[i], 1e-10);
        EXPECT_NEAR(back.z[i], tr.z[i], 1e-9);
    }
    EXPECT_EQ(back.k[0], 0.0);
    for (int i = 0; i < 8; ++i) EXPECT_GT(back.k[i + 1], back.k[i]);
}

TEST(Trace, ConstantSolutionUnderLinearFlow) {
    const double beta = 0.5;
    const TimeGrid g = build_time_grid(0.0, 1.0, 8);
    const auto f = solve_flow(linear_flow(beta), sample_backward_path(g, 1, 4), small_lattice());
    ProcessTrace tr;
    tr.x.assign(9, 0.0);
    tr.y.assign(9, 1.0);
    const auto u = transform_solution(tr, f);
    for (int i = 0; i <= 8; ++i) {
        const double s = f.evaluate(i, 0.0, 1.0).eta;
        EXPECT_NEAR(u.y[i], 1.0 / s, 1e-12);
        EXPECT_NEAR(u.z[i], 0.0, 1e-15);
    }
}
