#include <cmath>

#include <gtest/gtest.h>

#include "bdsde/rbdsde_solver.hpp"

using namespace bdsde;

namespace {

BdsdeProblem put_problem() {
    BdsdeProblem p;
    p.terminal = [](const Vec& x) { return std::max(1.0 - std::exp(x(0)), 0.0); };
    return p;
}

Barrier put_barrier() {
    Barrier b;
    b.S = [](double, double x) { return std::max(1.0 - std::exp(x), 0.0); };
    return b;
}

}  // namespace

TEST(Penalized, ZeroPenaltyIsUnreflected) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 16);
    const BackwardPath w = sample_backward_path(g, 1, 3);
    const BrownianTree tree = build_tree(g, 0.2, 2);
    BdsdeProblem p = put_problem();
    p.f = [](double, const Vec&, double y, const Vec&) { return -0.05 * y; };
    p.g = [](double, const Vec&, double y, const Vec&) { return vec1(0.1 * y); };
    p.lipschitz_y = 0.05;
    const auto a = solve_tree(p, tree, w), b = solve_penalized(p, put_barrier(), 0.0, tree, w);
    for (int i = 0; i <= 16; ++i)
        for (int j = 0; j < tree.level_size(i); ++j) EXPECT_NEAR(a.y[i][j], b.y[i][j], 1e-12);
    EXPECT_THROW(solve_penalized(p, put_barrier(), -1.0, tree, w), Error);
}

TEST(Penalized, MonotoneAndBelowReflected) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 32);
    const BackwardPath w = zero_backward_path(g);
    const BrownianTree tree = build_tree(g, 0.2, 2);
    const BdsdeProblem p = put_problem();
    const auto trace = penalization_trace(p, put_barrier(), {0, 1, 10, 100, 1000, 1e5}, tree, w);
    const double refl = solve_reflected(p, put_barrier(), tree, w).Y0;
    for (std::size_t k = 1; k < trace.size(); ++k) EXPECT_GE(trace[k], trace[k - 1] - 1e-14);
    for (double v : trace) EXPECT_LE(v, refl + 1e-12);
    EXPECT_NEAR(trace.back(), refl, 1e-4);
}

TEST(Reflected, FarBarrierIsInactive) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 16);
    const BackwardPath w = sample_backward_path(g, 1, 8);
    const BrownianTree tree = build_tree(g, 1.0, 2);
    BdsdeProblem p;
    p.terminal = [](const Vec& x) { return x(0) * x(0); };
    p.g = [](double, const Vec&, double y, const Vec&) { return vec1(0.2 * y); };
    Barrier b;
    b.S = [](double, double) { return -100.0; };
    const auto r = solve_reflected(p, b, tree, w);
    const auto s = solve_tree(p, tree, w);
    for (int i = 0; i <= 16; ++i)
        for (int j = 0; j < tree.level_size(i); ++j) EXPECT_NEAR(r.y[i][j], s.y[i][j], 1e-13);
    EXPECT_EQ(r.expected_KT, 0.0);
    const auto sk = skorokhod_diagnostic(r);
    EXPECT_EQ(sk.literal, 0.0);
    EXPECT_EQ(sk.lagged, 0.0);
}

TEST(Reflected, ConstantBarrierWithTerminalDrop) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 32);
    const BrownianTree tree = build_tree(g, 1.0, 2);
    BdsdeProblem p;
    p.terminal = [](const Vec&) { return 0.0; };
    Barrier b;
    b.S = [](double t, double) { return t < 1.0 ? 1.0 : 0.0; };
    const auto r = solve_reflected(p, b, tree, zero_backward_path(g));
    for (int i = 0; i < 32; ++i)
        for (double y : r.y[i]) EXPECT_DOUBLE_EQ(y, 1.0);
    EXPECT_DOUBLE_EQ(r.expected_KT, 1.0);
    EXPECT_DOUBLE_EQ(r.expected_KT_jump, 1.0);
    EXPECT_EQ(r.jump_steps, 1);
}

TEST(Reflected, BarrierAboveTerminalRejected) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 4);
    const BrownianTree tree = build_tree(g, 1.0, 2);
    BdsdeProblem p;
    p.terminal = [](const Vec&) { return 0.0; };
    Barrier b;
    b.S = [](double, double) { return 0.5; };
    try {
        solve_reflected(p, b, tree, zero_backward_path(g));
        FAIL() << "expected an invalid_barrier error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::invalid_barrier);
    }
}

TEST(Reflected, MatchesSnellEnvelope) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 32);
    const BrownianTree tree = build_tree(g, 0.2, 2);
    const auto r = solve_reflected(put_problem(), put_barrier(), tree, zero_backward_path(g));
    const auto v = snell_envelope(tree, [](int, double x) { return std::max(1.0 - std::exp(x), 0.0); },
                                  [](double x) { return std::max(1.0 - std::exp(x), 0.0); });
    for (int i = 0; i <= 32; ++i)
        for (int j = 0; j < tree.level_size(i); ++j) EXPECT_NEAR(r.y[i][j], v[i][j], 1e-14);
    EXPECT_GT(r.expected_KT, 0.0);
    EXPECT_EQ(r.expected_KT_jump, 0.0);
}

TEST(Reflected, BackwardShiftReducesToSnell) {
    const double beta = 0.3;
    const TimeGrid g = build_time_grid(0.0, 1.0, 24);
    const BackwardPath w = sample_backward_path(g, 1, 17);
    const BrownianTree tree = build_tree(g, 0.2, 2);
    BdsdeProblem p = put_problem();
    p.g = [beta](double t, const Vec&, double, const Vec&) { return vec1(beta * (1.0 + t)); };
    const auto c = backward_shift([beta](double t) { return beta * (1.0 + t); }, w);
    EXPECT_EQ(c[24], 0.0);
    const auto r = solve_reflected(p, put_barrier(), tree, w);
    const auto v = snell_envelope(tree, [&](int i, double x) { return std::max(1.0 - std::exp(x), 0.0) - c[i]; },
                                  [](double x) { return std::max(1.0 - std::exp(x), 0.0); });
    for (int i = 0; i <= 24; ++i)
        for (int j = 0; j < tree.level_size(i); ++j) EXPECT_NEAR(r.y[i][j] - c[i], v[i][j], 1e-13);

    const auto constant = backward_shift([](double) { return 2.0; }, w);
    for (int i = 0; i <= 24; ++i) EXPECT_NEAR(constant[i], 2.0 * w.tail1(i), 1e-13);
}

TEST(Skorokhod, LiteralSumVanishesUnderProjection) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 32);
    const BrownianTree tree = build_tree(g, 0.2, 2);
    auto r = solve_reflected(put_problem(), put_barrier(), tree, zero_backward_path(g));
    const auto rep = skorokhod_diagnostic(r);
    EXPECT_EQ(rep.literal, 0.0);
    EXPECT_GE(rep.lagged, 0.0);
    EXPECT_LT(rep.lagged, g.dt);

    // lift Y off the barrier wherever the reflection pushed
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < tree.level_size(i); ++j)
            if (r.dK(i, j) > 0.0) r.y[i][j] += 0.1;
    EXPECT_GT(skorokhod_diagnostic(r).literal, 0.0);
}
