#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "bdsde/errors.hpp"

namespace bdsde::harness {

struct ExperimentConfig {
    std::string problem;
    std::string backend;  // empty: the problem's default
    double tolerance = -1.0;  // < 0: the registered tolerance

    double T = 1.0;
    int n_steps = 64;

    int x_steps = 0;
    double dx_per_dt = 1.0;
    double half_width_sd = 6.0;
    double x0 = 0.0;
    bool x0_set = false;
    std::string engine = "lattice";  // dp engine: lattice | tree

    int n_paths = 4000;
    int basis_degree = 3;
    int w_outer = 1;  // outer loop over backward-noise seeds

    double a_low = 1.0;
    double a_high = 1.0;
    int n_points = 1;
    bool volgrid_set = false;

    std::uint64_t w_seed = 1;
    std::uint64_t b_seed = 2;

    std::string noise_kind = "brownian";  // brownian | bridge | linear | zero
    double endpoint = 0.0;
    std::string scheme = "ito";  // ito | stratonovich

    std::string csv;
    int precision = 12;

    std::map<std::string, double> params;
};

namespace detail {

inline const std::map<std::string, std::set<std::string>>& config_schema() {
    static const std::map<std::string, std::set<std::string>> s = {
        {"problem", {"name", "backend", "tolerance"}},
        {"grid", {"T", "n_steps"}},
        {"spatial", {"x_steps", "dx_per_dt", "half_width_sd", "x0", "engine"}},
        {"mc", {"n_paths", "basis_degree", "w_outer"}},
        {"volgrid", {"a_low", "a_high", "n_points"}},
        {"seeds", {"w_seed", "b_seed"}},
        {"noise", {"kind", "endpoint", "scheme"}},
        {"outputs", {"csv", "precision"}},
        {"params", {}},
    };
    return s;
}

template <class T>
T get_value(const boost::property_tree::ptree& sec, const std::string& section, const std::string& key) {
    const std::string raw = sec.get<std::string>(key);
    std::istringstream is(raw);
    T v{};
    is >> v;
    if (!is || !(is >> std::ws).eof())
        fail(ErrorKind::config, "field " + section + "." + key + ": cannot parse '" + raw + "'");
    return v;
}

inline void check_range(bool ok, const std::string& field, const std::string& what) {
    if (!ok) fail(ErrorKind::config, "field " + field + ": " + what);
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        fail(ErrorKind::config, "line " + std::to_string(e.line()) + ": " + e.message());
    }
    const auto& schema = detail::config_schema();
    for (const auto& [name, sec] : tree) {
        if (sec.empty() && !sec.data().empty()) fail(ErrorKind::config, "key '" + name + "' outside any section");
        const auto it = schema.find(name);
        if (it == schema.end()) fail(ErrorKind::config, "unknown section [" + name + "]");
        if (name == "params") continue;
        for (const auto& [key, _] : sec)
            if (!it->second.count(key)) fail(ErrorKind::config, "unknown key " + name + "." + key);
    }
    if (!tree.get_child_optional("problem")) fail(ErrorKind::config, "missing section [problem]");
    if (!tree.get_child_optional("grid")) fail(ErrorKind::config, "missing section [grid]");

    ExperimentConfig c;
    auto get = [&](const char* section, const char* key, auto& out) {
        const auto sec = tree.get_child_optional(section);
        if (!sec || !sec->get_child_optional(key)) return false;
        out = detail::get_value<std::decay_t<decltype(out)>>(*sec, section, key);
        return true;
    };
    if (!get("problem", "name", c.problem)) fail(ErrorKind::config, "missing field problem.name");
    get("problem", "backend", c.backend);
    get("problem", "tolerance", c.tolerance);
    if (!get("grid", "T", c.T)) fail(ErrorKind::config, "missing field grid.T");
    if (!get("grid", "n_steps", c.n_steps)) fail(ErrorKind::config, "missing field grid.n_steps");
    get("spatial", "x_steps", c.x_steps);
    get("spatial", "dx_per_dt", c.dx_per_dt);
    get("spatial", "half_width_sd", c.half_width_sd);
    c.x0_set = get("spatial", "x0", c.x0);
    get("spatial", "engine", c.engine);
    get("mc", "n_paths", c.n_paths);
    get("mc", "basis_degree", c.basis_degree);
    get("mc", "w_outer", c.w_outer);
    bool lo = get("volgrid", "a_low", c.a_low);
    bool hi = get("volgrid", "a_high", c.a_high);
    bool np = get("volgrid", "n_points", c.n_points);
    c.volgrid_set = lo || hi || np;
    get("seeds", "w_seed", c.w_seed);
    get("seeds", "b_seed", c.b_seed);
    get("noise", "kind", c.noise_kind);
    get("noise", "endpoint", c.endpoint);
    get("noise", "scheme", c.scheme);
    get("outputs", "csv", c.csv);
    get("outputs", "precision", c.precision);
    if (const auto p = tree.get_child_optional("params"))
        for (const auto& [key, _] : *p) c.params[key] = detail::get_value<double>(*p, "params", key);

    detail::check_range(c.T > 0.0, "grid.T", "must be positive");
    detail::check_range(c.n_steps >= 1 && c.n_steps <= 1 << 16, "grid.n_steps", "must be in [1, 65536]");
    detail::check_range(c.x_steps >= 0, "spatial.x_steps", "must be nonnegative");
    detail::check_range(c.dx_per_dt > 0.0, "spatial.dx_per_dt", "must be positive");
    detail::check_range(c.half_width_sd > 0.0, "spatial.half_width_sd", "must be positive");
    detail::check_range(c.engine == "lattice" || c.engine == "tree", "spatial.engine", "expected lattice or tree");
    detail::check_range(c.n_paths >= 1, "mc.n_paths", "must be positive");
    detail::check_range(c.basis_degree >= 0 && c.basis_degree <= 8, "mc.basis_degree", "must be in [0, 8]");
    detail::check_range(c.w_outer >= 1, "mc.w_outer", "must be positive");
    detail::check_range(c.a_low > 0.0 && c.a_high >= c.a_low, "volgrid", "need 0 < a_low <= a_high");
    detail::check_range(c.n_points >= 1 && c.n_points <= 64, "volgrid.n_points", "must be in [1, 64]");
    detail::check_range(c.n_points > 1 || c.a_low == c.a_high, "volgrid.n_points",
                        "a single point needs a_low = a_high");
    detail::check_range(c.noise_kind == "brownian" || c.noise_kind == "bridge" || c.noise_kind == "linear" ||
                            c.noise_kind == "zero",
                        "noise.kind", "expected brownian, bridge, linear or zero");
    detail::check_range(c.scheme == "ito" || c.scheme == "stratonovich", "noise.scheme", "expected ito or stratonovich");
    detail::check_range(c.precision >= 1 && c.precision <= 17, "outputs.precision", "must be in [1, 17]");
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::config, "cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Canonical text: every field, fixed order. Parsing it back gives the same config.
inline std::string serialize_config(const ExperimentConfig& c) {
    std::ostringstream os;
    auto d = format_double;
    os << "[problem]\nname = " << c.problem << "\n";
    if (!c.backend.empty()) os << "backend = " << c.backend << "\n";
    if (c.tolerance >= 0.0) os << "tolerance = " << d(c.tolerance) << "\n";
    os << "\n[grid]\nT = " << d(c.T) << "\nn_steps = " << c.n_steps << "\n";
    os << "\n[spatial]\nx_steps = " << c.x_steps << "\ndx_per_dt = " << d(c.dx_per_dt)
       << "\nhalf_width_sd = " << d(c.half_width_sd) << "\n";
    if (c.x0_set) os << "x0 = " << d(c.x0) << "\n";
    os << "engine = " << c.engine << "\n";
    os << "\n[mc]\nn_paths = " << c.n_paths << "\nbasis_degree = " << c.basis_degree << "\nw_outer = " << c.w_outer
       << "\n";
    if (c.volgrid_set)
        os << "\n[volgrid]\na_low = " << d(c.a_low) << "\na_high = " << d(c.a_high) << "\nn_points = " << c.n_points
           << "\n";
    os << "\n[seeds]\nw_seed = " << c.w_seed << "\nb_seed = " << c.b_seed << "\n";
    os << "\n[noise]\nkind = " << c.noise_kind << "\nendpoint = " << d(c.endpoint) << "\nscheme = " << c.scheme << "\n";
    os << "\n[outputs]\n";
    if (!c.csv.empty()) os << "csv = " << c.csv << "\n";
    os << "precision = " << c.precision << "\n";
    if (!c.params.empty()) {
        os << "\n[params]\n";
        for (const auto& [k, v] : c.params) os << k << " = " << d(v) << "\n";
    }
    return os.str();
}

// FNV-1a over the canonical text, output path excluded.
inline std::uint64_t config_hash(ExperimentConfig c) {
    c.csv.clear();
    const std::string s = serialize_config(c);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace bdsde::harness
