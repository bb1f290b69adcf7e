#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bdsde/harness/config.hpp"
#include "bdsde/harness/props.hpp"
#include "bdsde/harness/registry.hpp"
#include "bdsde/harness/runner.hpp"
#include "bdsde/parallel.hpp"

namespace fs = std::filesystem;
using namespace bdsde;
using namespace bdsde::harness;

namespace {

constexpr int kOk = 0, kError = 1, kTolerance = 2;

std::string default_out_dir() {
    const char* env = std::getenv("BDSDE_OUT_DIR");
    return env && *env ? env : ".";
}

// --out wins, then outputs.csv from the config, then <out dir>/<problem>-<hash>.csv
std::string csv_path(const std::string& out, const ExperimentConfig& cfg, const std::string& suffix) {
    if (!out.empty()) return out;
    if (!cfg.csv.empty()) return cfg.csv;
    return (fs::path(default_out_dir()) / (cfg.problem + "-" + hex(config_hash(cfg)) + suffix + ".csv")).string();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Solvers for doubly stochastic backward equations under volatility uncertainty"};
    app.require_subcommand(1);
    std::string config, out, suite = "all";
    long long seed = -1;
    bool quiet = false;
    int workers = 1, halvings = 3, instance = -1;

    auto common = [&](CLI::App* s, bool needs_config) {
        auto* o = s->add_option("--config", config, "experiment config (sectioned key = value)");
        if (needs_config) o->required()->check(CLI::ExistingFile);
        s->add_option("--seed", seed, "override the seeds (w_seed = N, b_seed = N + 1)");
        s->add_option("--out", out, "output CSV path");
        s->add_flag("--quiet", quiet, "print nothing on success");
        s->add_option("--workers", workers, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
    };
    auto* run_cmd = app.add_subcommand("run", "solve one configured problem and compare with its oracle");
    common(run_cmd, true);
    auto* study_cmd = app.add_subcommand("study", "convergence study with dt halved each round");
    common(study_cmd, true);
    study_cmd->add_option("--halvings", halvings, "number of halvings (>= 2)");
    auto* props_cmd = app.add_subcommand("props", "randomized property suites");
    common(props_cmd, false);
    props_cmd->add_option("--suite", suite, "suite name or 'all'");
    props_cmd->add_option("--instance", instance, "rerun a single instance");
    auto* list_cmd = app.add_subcommand("list-problems", "list registered problems");

    CLI11_PARSE(app, argc, argv);
    set_workers(workers);

    try {
        if (list_cmd->parsed()) {
            for (const auto& e : registry()) {
                std::cout << e.name << "  [";
                for (std::size_t k = 0; k < e.backends.size(); ++k) std::cout << (k ? "|" : "") << e.backends[k];
                std::cout << "]  oracle: " << e.oracle << "\n    " << e.description << "\n";
            }
            return kOk;
        }
        if (props_cmd->parsed()) {
            const std::uint64_t s = seed >= 0 ? static_cast<std::uint64_t>(seed) : 1;
            if (suite != "all" && std::find(suite_names().begin(), suite_names().end(), suite) == suite_names().end())
                fail(ErrorKind::config, "unknown property suite '" + suite + "'");
            int rc = kOk;
            for (const auto& name : suite_names()) {
                if (suite != "all" && suite != name) continue;
                const PropsReport r = property_suite(name, s, instance);
                if (!quiet || !r.passed()) {
                    std::cout << (r.passed() ? "PASS " : "FAIL ") << name << ": " << r.violations << " violations in "
                              << r.instances << " checks\n";
                    for (const auto& l : r.lines) std::cout << "  " << l << "\n";
                }
                if (!r.passed()) {
                    rc = kTolerance;
                    const std::string path =
                        out.empty() ? (fs::path(default_out_dir()) / ("repro-" + name + ".ini")).string() : out;
                    write_text(path, r.repro);
                    std::cout << "  reproducing instance written to " << path << "\n";
                }
            }
            return rc;
        }

        ExperimentConfig cfg = load_config(config);
        if (seed >= 0) {
            cfg.w_seed = static_cast<std::uint64_t>(seed);
            cfg.b_seed = static_cast<std::uint64_t>(seed) + 1;
        }
        if (run_cmd->parsed()) {
            const RunRecord rec = run(cfg);
            const std::string path = csv_path(out, cfg, "");
            write_text(path, to_csv(rec.rows, cfg.precision));
            if (!quiet || !rec.within_tolerance) {
                std::cout << rec.problem << " [" << rec.backend << "] hash " << hex(rec.hash) << "\n";
                for (const auto& r : rec.rows)
                    std::cout << "  " << r.quantity << " = " << format_number(r.value, cfg.precision)
                              << (std::isnan(r.oracle) ? "" : "  oracle " + format_number(r.oracle, cfg.precision))
                              << "\n";
                if (!rec.has_oracle) std::cout << "  no oracle registered: tolerance check skipped\n";
                std::cout << "  " << (rec.within_tolerance ? "within tolerance" : "TOLERANCE FAILURE") << ", wrote "
                          << path << "\n";
            }
            return rec.within_tolerance ? kOk : kTolerance;
        }
        const StudyResult st = convergence_study(cfg, halvings);
        const std::string path = csv_path(out, cfg, "-study");
        write_text(path, to_csv(st.rows, cfg.precision));
        if (!quiet || !st.passed) {
            for (std::size_t k = 0; k < st.dts.size(); ++k)
                std::cout << "  dt = " << format_number(st.dts[k], 6) << "  error = " << format_number(st.errors[k], 6)
                          << "\n";
            if (st.exact)
                std::cout << "  errors at rounding level at every dt\n";
            else
                std::cout << "  fitted order " << format_number(st.order, 4) << "\n";
            std::cout << "  " << (st.passed ? "order as expected" : "ORDER OUTSIDE TOLERANCE") << ", wrote " << path
                      << "\n";
        }
        return st.passed ? kOk : kTolerance;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kError;
    }
}
