#include <cmath>
#include <string>

#include <gtest/gtest.h>

#include "bdsde/harness/config.hpp"
#include "bdsde/harness/props.hpp"
#include "bdsde/harness/registry.hpp"
#include "bdsde/harness/runner.hpp"
#include "bdsde/parallel.hpp"

using namespace bdsde;
using namespace bdsde::harness;

namespace {

const char* kMinimal = "[problem]\nname = identity\nbackend = tree\n\n[grid]\nT = 1\nn_steps = 16\n";

ErrorKind kind_of(const std::string& text) {
    try {
        parse_config_text(text);
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::verification;  // parsed without error
}

std::string config_path(const std::string& name) { return std::string(BDSDE_CONFIG_DIR) + "/" + name; }

}  // namespace

TEST(Config, ParsesSectionsAndDefaults) {
    const auto c = parse_config_text(std::string(kMinimal) +
                                     "\n[volgrid]\na_low = 0.5\na_high = 2\nn_points = 4\n[params]\nr = 0.25\n"
                                     "[noise]\nkind = bridge\nendpoint = 0.3\nscheme = stratonovich\n");
    EXPECT_EQ(c.problem, "identity");
    EXPECT_EQ(c.backend, "tree");
    EXPECT_EQ(c.n_steps, 16);
    EXPECT_TRUE(c.volgrid_set);
    EXPECT_EQ(c.n_points, 4);
    EXPECT_DOUBLE_EQ(c.params.at("r"), 0.25);
    EXPECT_EQ(c.noise_kind, "bridge");
    EXPECT_EQ(c.scheme, "stratonovich");
    EXPECT_FALSE(c.x0_set);
    EXPECT_EQ(c.w_seed, 1u);
}

TEST(Config, RejectsUnknownOrMissing) {
    EXPECT_EQ(kind_of(std::string(kMinimal) + "[grid2]\nT = 1\n"), ErrorKind::config);
    EXPECT_EQ(kind_of(std::string(kMinimal) + "[mc]\npaths = 10\n"), ErrorKind::config);
    EXPECT_EQ(kind_of("[problem]\nname = heat\n"), ErrorKind::config);
    EXPECT_EQ(kind_of("[grid]\nT = 1\nn_steps = 4\n"), ErrorKind::config);
    EXPECT_EQ(kind_of(std::string(kMinimal) + "[mc]\nn_paths = many\n"), ErrorKind::config);
    EXPECT_EQ(kind_of(std::string(kMinimal) + "[noise]\nkind = pink\n"), ErrorKind::config);
    EXPECT_EQ(kind_of(std::string(kMinimal) + "[volgrid]\na_low = 2\na_high = 1\nn_points = 2\n"), ErrorKind::config);
    EXPECT_EQ(kind_of(kMinimal), ErrorKind::verification);
}

TEST(Config, ParseErrorNamesLine) {
    try {
        parse_config_text("[problem]\nname = identity\n[grid\n");
        FAIL() << "expected a config error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::config);
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

TEST(Config, SerializeRoundTripAndHash) {
    auto c = load_config(config_path("bsb_quadratic.ini"));
    c.params["k"] = 0.125;
    c.csv = "a.csv";
    const auto back = parse_config_text(serialize_config(c));
    EXPECT_EQ(serialize_config(back), serialize_config(c));
    EXPECT_EQ(config_hash(back), config_hash(c));

    auto other = c;
    other.csv = "elsewhere.csv";
    EXPECT_EQ(config_hash(other), config_hash(c));
    other.n_steps += 1;
    EXPECT_NE(config_hash(other), config_hash(c));
    EXPECT_EQ(hex(0xabcULL), "0000000000000abc");
}

TEST(Config, ShippedConfigsLoad) {
    for (const char* name : {"bsb_concave.ini", "bsb_quadratic.ini", "bsb_quadratic_fd.ini",
                             "classical_bdsde_linear.ini", "flow_linear.ini", "heat.ini", "heat_mc.ini",
                             "identity.ini", "linear_spde.ini", "linear_spde_doss.ini", "linear_spde_fd.ini",
                             "mixed_convexity.ini", "reflected_constant_barrier.ini"}) {
        const auto c = load_config(config_path(name));
        EXPECT_NO_THROW(find_problem(c.problem)) << name;
    }
    try {
        load_config(config_path("missing_grid.ini"));
        FAIL() << "expected a config error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::config);
    }
    EXPECT_THROW(load_config(config_path("no_such_file.ini")), Error);
}

TEST(Runner, IdentityIsExact) {
    const auto rec = run(parse_config_text(kMinimal));
    ASSERT_FALSE(rec.rows.empty());
    EXPECT_EQ(rec.rows[0].quantity, "Y0");
    EXPECT_NEAR(rec.rows[0].value, 0.5, 1e-12);
    EXPECT_TRUE(rec.within_tolerance);
    EXPECT_EQ(rec.backend, "tree");

    const auto st = convergence_study(parse_config_text(kMinimal), 2);
    EXPECT_TRUE(st.exact);
    EXPECT_TRUE(st.passed);
    EXPECT_EQ(st.rows.size(), 4u);
}

TEST(Runner, ErrorsForBadSelections) {
    auto c = parse_config_text(kMinimal);
    c.problem = "nope";
    EXPECT_THROW(run(c), Error);
    c = parse_config_text(kMinimal);
    c.backend = "fd";
    EXPECT_THROW(run(c), Error);
    c = parse_config_text(kMinimal);
    c.params["unknown"] = 1.0;
    try {
        run(c);
        FAIL() << "expected a config error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::config);
    }
}

TEST(Runner, CsvIndependentOfWorkers) {
    auto c = load_config(config_path("heat_mc.ini"));
    c.n_paths = 2000;
    c.n_steps = 16;
    set_workers(1);
    const std::string a = to_csv(run(c).rows, c.precision);
    set_workers(4);
    const std::string b = to_csv(run(c).rows, c.precision);
    set_workers(1);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.substr(0, a.find('\n')), "quantity,dt,value,oracle,abs_error,seed_w,seed_b");
    EXPECT_EQ(to_csv(run(c).rows, c.precision), a);
}

TEST(Runner, OuterSeedsProduceRowsPerPath) {
    auto c = parse_config_text(kMinimal);
    c.w_outer = 3;
    const auto rec = run(c);
    ASSERT_EQ(rec.rows.size(), 3u);
    EXPECT_EQ(rec.rows[0].seed_w, 1u);
    EXPECT_EQ(rec.rows[2].seed_w, 3u);
}

TEST(Runner, FitOrder) {
    EXPECT_NEAR(fit_order({0.1, 0.05, 0.025}, {0.2, 0.1, 0.05}), 1.0, 1e-12);
    EXPECT_NEAR(fit_order({0.1, 0.05, 0.025}, {0.01, 0.0025, 0.000625}), 2.0, 1e-12);
    EXPECT_EQ(format_number(kNaN, 6), "nan");
}

TEST(Props, SuitesAndRepro) {
    EXPECT_EQ(suite_names().size(), 6u);
    const auto rep = property_suite("comparison", 5, -1, 5);
    EXPECT_EQ(rep.instances, 5);
    EXPECT_TRUE(rep.passed());
    EXPECT_EQ(property_suite("comparison", 5, 2).instances, 1);
    EXPECT_THROW(property_suite("nope", 1), Error);

    const std::string r = harness::detail::repro_text("x", 9, 4, {{"beta", 0.5}});
    EXPECT_EQ(r, "[property]\nsuite = x\nseed = 9\ninstance = 4\n\n[instance]\nbeta = 0.5\n");
}
