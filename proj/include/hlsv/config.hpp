#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hlsv/cir.hpp"
#include "hlsv/dupire.hpp"
#include "hlsv/errors.hpp"
#include "hlsv/experiments.hpp"
#include "hlsv/leverage.hpp"
#include "hlsv/particles.hpp"

namespace hlsv {

/// Strike/maturity lattice for the synthetic market.
struct GridSpec {
    double t_min = 0.1;
    double t_max = 1.0;
    double t_step = 0.05;
    double k_min = 50.0;
    double k_max = 200.0;
    double k_step = 1.0;

    std::vector<double> maturities() const { return linspace_step(t_min, t_max, t_step); }
    std::vector<double> strikes() const { return linspace_step(k_min, k_max, k_step); }
};

inline HestonParams market_preset()
{
    HestonParams p;
    p.k = 1.4124;
    p.theta = 0.0137;
    p.xi = 0.2988;
    p.rho = -0.1194;
    p.v0 = 0.0094;
    p.s0 = 100.0;
    return p;
}

struct RunConfig {
    HestonParams market = market_preset();
    HestonParams params; // calibrated model parameters
    GridSpec grid;
    SurfaceOptions surface;
    SimConfig sim;
    std::uint64_t seed = 1;
    bool save_path = false;
    std::vector<double> price_strikes{100.0};
    double lambda = 0.0; // 0: heuristic 2 * sigma_max^2
    TimeStudySpec time_study;
    ChaosStudySpec chaos;
    CirStudySpec cir;
    bool svg = false;
    std::string output_dir; // empty: environment default

    /// Simulation config with the calibrated parameters filled in and the
    /// bandwidth rule resolved for sim.N.
    SimConfig resolved_sim() const
    {
        SimConfig s = sim;
        s.params = params;
        s.kernel = resolve_bandwidth(s.kernel, params.s0, s.n_particles, s.reg.space);
        return s;
    }

    /// Upper bound of the leverage, sigma_hi * sqrt(r_max).
    double sigma_max() const
    {
        const double a2 = sim.kernel.sup_bound();
        const double n = sim.reg.normalisation == Normalisation::mean ? 1.0 : static_cast<double>(sim.n_particles);
        return surface.sigma_hi * std::sqrt((n * a2 + sim.reg.delta) / sim.reg.delta);
    }

    double resolved_lambda() const
    {
        if (lambda > 0.0) return lambda;
        const double s = sigma_max();
        return 2.0 * s * s;
    }
};

namespace detail {

inline std::string fmt17(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string_view trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, std::string_view v)
{
    double out = 0.0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    require(ec == std::errc{} && p == end, key + ": not a number: '" + std::string(v) + "'");
    return out;
}

inline std::uint64_t parse_u64(const std::string& key, std::string_view v)
{
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    require(ec == std::errc{} && p == end, key + ": not a non-negative integer: '" + std::string(v) + "'");
    return out;
}

inline bool parse_bool(const std::string& key, std::string_view v)
{
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key + ": expected true or false, got '" + std::string(v) + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, std::string_view v, T (*item)(const std::string&, std::string_view))
{
    std::vector<T> out;
    while (true) {
        const auto comma = v.find(',');
        out.push_back(item(key, trim(v.substr(0, comma))));
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    return out;
}

template <class T>
std::string join(const std::vector<T>& xs)
{
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        if constexpr (std::is_floating_point_v<T>) out += fmt17(xs[i]);
        else out += std::to_string(xs[i]);
    }
    return out;
}

template <class E>
struct EnumName {
    E value;
    const char* name;
};

template <class E, std::size_t K>
E parse_enum(const std::string& key, std::string_view v, const EnumName<E> (&names)[K])
{
    std::string allowed;
    for (const auto& n : names) {
        if (v == n.name) return n.value;
        allowed += allowed.empty() ? n.name : std::string("|") + n.name;
    }
    throw ConfigError(key + ": expected one of " + allowed + ", got '" + std::string(v) + "'");
}

template <class E, std::size_t K>
std::string enum_name(E e, const EnumName<E> (&names)[K])
{
    for (const auto& n : names)
        if (n.value == e) return n.name;
    return "?";
}

inline constexpr EnumName<KernelFamily> kFamilies[] = {
    {KernelFamily::quartic, "quartic"}, {KernelFamily::epanechnikov, "epanechnikov"}, {KernelFamily::gaussian, "gaussian"}};
inline constexpr EnumName<BandwidthRule> kRules[] = {{BandwidthRule::silverman_like, "silverman_like"},
                                                     {BandwidthRule::fixed, "fixed"}};
inline constexpr EnumName<KernelSpace> kSpaces[] = {{KernelSpace::spot, "spot"}, {KernelSpace::log_spot, "log_spot"}};
inline constexpr EnumName<Normalisation> kNorms[] = {{Normalisation::mean, "mean"},
                                                     {Normalisation::raw_sums, "raw_sums"}};
inline constexpr EnumName<LeverageMode> kLeverage[] = {{LeverageMode::calibrated, "calibrated"},
                                                       {LeverageMode::identity, "identity"}};
inline constexpr EnumName<LeveragePath> kPaths[] = {{LeveragePath::reference, "reference"},
                                                    {LeveragePath::windowed, "windowed"}};
inline constexpr EnumName<InitialMode> kInitial[] = {{InitialMode::dirac, "dirac"}, {InitialMode::sampled, "sampled"}};
inline constexpr EnumName<ErrorMetric> kMetrics[] = {{ErrorMetric::sup_grid, "sup_grid"},
                                                     {ErrorMetric::terminal, "terminal"}};

struct KeyHandler {
    std::function<void(RunConfig&, const std::string&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
    bool hashed = true;
};

inline void add_params(std::map<std::string, KeyHandler>& t, const std::string& section,
                       HestonParams RunConfig::*member)
{
    auto field = [&](const char* name, double HestonParams::*f) {
        t[section + "." + name] = {
            [member, f](RunConfig& c, const std::string& k, std::string_view v) { c.*member.*f = parse_double(k, v); },
            [member, f](const RunConfig& c) { return fmt17(c.*member.*f); }};
    };
    field("kappa", &HestonParams::k);
    field("theta", &HestonParams::theta);
    field("xi", &HestonParams::xi);
    field("rho", &HestonParams::rho);
    field("v0", &HestonParams::v0);
    field("s0", &HestonParams::s0);
}

#define HLSV_DOUBLE(key, expr)                                                                                    \
    t[key] = {[](RunConfig& c, const std::string& k, std::string_view v) { c.expr = parse_double(k, v); },        \
              [](const RunConfig& c) { return fmt17(c.expr); }}
#define HLSV_COUNT(key, expr)                                                                                     \
    t[key] = {[](RunConfig& c, const std::string& k, std::string_view v) { c.expr = parse_u64(k, v); },           \
              [](const RunConfig& c) { return std::to_string(c.expr); }}
#define HLSV_BOOL(key, expr)                                                                                      \
    t[key] = {[](RunConfig& c, const std::string& k, std::string_view v) { c.expr = parse_bool(k, v); },          \
              [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); }}
#define HLSV_ENUM(key, expr, names)                                                                               \
    t[key] = {[](RunConfig& c, const std::string& k, std::string_view v) { c.expr = parse_enum(k, v, names); },   \
              [](const RunConfig& c) { return enum_name(c.expr, names); }}
#define HLSV_LIST(key, expr, parser)                                                                              \
    t[key] = {[](RunConfig& c, const std::string& k, std::string_view v) {                                       \
                  c.expr.clear();                                                                                 \
                  for (auto x : parse_list(k, v, parser)) c.expr.push_back(x);                                    \
              },                                                                                                  \
              [](const RunConfig& c) { return join(c.expr); }}

inline const std::map<std::string, KeyHandler>& key_table()
{
    static const auto table = [] {
        std::map<std::string, KeyHandler> t;
        add_params(t, "market", &RunConfig::market);
        add_params(t, "params", &RunConfig::params);
        HLSV_DOUBLE("grid.t_min", grid.t_min);
        HLSV_DOUBLE("grid.t_max", grid.t_max);
        HLSV_DOUBLE("grid.t_step", grid.t_step);
        HLSV_DOUBLE("grid.k_min", grid.k_min);
        HLSV_DOUBLE("grid.k_max", grid.k_max);
        HLSV_DOUBLE("grid.k_step", grid.k_step);
        HLSV_DOUBLE("surface.sigma_lo", surface.sigma_lo);
        HLSV_DOUBLE("surface.sigma_hi", surface.sigma_hi);
        HLSV_DOUBLE("surface.lipschitz_cap", surface.lipschitz_cap);
        HLSV_DOUBLE("surface.tol_butterfly", surface.tol_butterfly);
        HLSV_DOUBLE("surface.calendar_tol", surface.calendar_tol);
        HLSV_DOUBLE("sim.T", sim.horizon);
        HLSV_COUNT("sim.M", sim.steps);
        HLSV_COUNT("sim.N", sim.n_particles);
        HLSV_ENUM("sim.leverage", sim.leverage, kLeverage);
        HLSV_ENUM("sim.path", sim.path, kPaths);
        HLSV_ENUM("sim.initial", sim.initial, kInitial);
        HLSV_DOUBLE("sim.initial_log_sd", sim.initial_log_sd);
        HLSV_BOOL("sim.save_path", save_path);
        HLSV_ENUM("kernel.family", sim.kernel.family, kFamilies);
        HLSV_ENUM("kernel.rule", sim.kernel.rule, kRules);
        HLSV_DOUBLE("kernel.bandwidth", sim.kernel.bandwidth);
        HLSV_DOUBLE("reg.delta", sim.reg.delta);
        HLSV_ENUM("reg.space", sim.reg.space, kSpaces);
        HLSV_ENUM("reg.normalisation", sim.reg.normalisation, kNorms);
        HLSV_COUNT("seed", seed);
        HLSV_LIST("price.strikes", price_strikes, parse_double);
        HLSV_DOUBLE("diagnose.lambda", lambda);
        HLSV_LIST("study.M_list", time_study.m_list, parse_u64);
        HLSV_COUNT("study.M_ref", time_study.m_ref);
        HLSV_ENUM("study.metric", time_study.metric, kMetrics);
        HLSV_LIST("study.seeds", time_study.seeds, parse_u64);
        HLSV_LIST("study.N_list", chaos.n_list, parse_u64);
        HLSV_LIST("cir.M_list", cir.m_list, parse_u64);
        HLSV_COUNT("cir.M_ref", cir.m_ref);
        HLSV_COUNT("cir.paths", cir.n_paths);
        HLSV_BOOL("output.svg", svg);
        t["output.dir"] = {[](RunConfig& c, const std::string&, std::string_view v) { c.output_dir = std::string(v); },
                           [](const RunConfig& c) { return c.output_dir; }, false};
        return t;
    }();
    return table;
}

#undef HLSV_DOUBLE
#undef HLSV_COUNT
#undef HLSV_BOOL
#undef HLSV_ENUM
#undef HLSV_LIST

inline void check_list_ascending(const std::vector<std::size_t>& xs, const std::string& key)
{
    require(!xs.empty(), key + " must not be empty");
    for (std::size_t j = 0; j < xs.size(); ++j) {
        require(xs[j] >= 1, key + " entries must be >= 1");
        require(j == 0 || xs[j] > xs[j - 1], key + " must be strictly ascending");
    }
}

} // namespace detail

/// Checks every field against its module's invariants; messages name the key.
inline void validate(const RunConfig& c)
{
    using detail::require;
    c.market.validate("market.");
    c.params.validate("params.");
    const auto& g = c.grid;
    require(g.t_min > 0.0 && g.t_max >= g.t_min, "grid.t_min must be > 0 and <= grid.t_max");
    require(g.t_step > 0.0, "grid.t_step must be > 0");
    require(g.k_min > 0.0 && g.k_max > g.k_min, "grid.k_min must be > 0 and < grid.k_max");
    require(g.k_step > 0.0, "grid.k_step must be > 0");
    require((g.k_max - g.k_min) / g.k_step >= 2.0, "grid needs at least 3 strikes");
    require(c.surface.sigma_lo > 0.0 && c.surface.sigma_hi >= c.surface.sigma_lo,
            "surface.sigma_lo must be > 0 and <= surface.sigma_hi");
    require(c.surface.lipschitz_cap > 0.0, "surface.lipschitz_cap must be > 0");
    require(c.sim.horizon > 0.0 && std::isfinite(c.sim.horizon), "sim.T must be > 0");
    require(c.sim.steps >= 1, "sim.M must be >= 1");
    require(c.sim.n_particles >= 2, "sim.N must be >= 2");
    require(c.sim.initial_log_sd >= 0.0, "sim.initial_log_sd must be >= 0");
    require(c.sim.kernel.bandwidth > 0.0, "kernel.bandwidth must be > 0");
    require(c.sim.reg.delta > 0.0 && std::isfinite(c.sim.reg.delta), "reg.delta must be > 0");
    require(!c.price_strikes.empty(), "price.strikes must not be empty");
    for (double k : c.price_strikes) require(k > 0.0, "price.strikes entries must be > 0");
    require(c.lambda >= 0.0, "diagnose.lambda must be >= 0 (0 selects the heuristic)");
    require(!c.time_study.seeds.empty(), "study.seeds must not be empty");
    detail::check_list_ascending(c.time_study.m_list, "study.M_list");
    for (auto m : c.time_study.m_list) require(c.time_study.m_ref % m == 0, "study.M_list entries must divide study.M_ref");
    require(c.time_study.m_ref >= 4 * c.time_study.m_list.back(), "study.M_ref must be >= 4 * max(study.M_list)");
    detail::check_list_ascending(c.chaos.n_list, "study.N_list");
    require(c.chaos.n_list.front() >= 2, "study.N_list entries must be >= 2");
    detail::check_list_ascending(c.cir.m_list, "cir.M_list");
    for (auto m : c.cir.m_list) require(c.cir.m_ref % m == 0, "cir.M_list entries must divide cir.M_ref");
    require(c.cir.n_paths >= 1, "cir.paths must be >= 1");
}

namespace detail {

inline void apply_lines(RunConfig& c, std::string_view text, const std::string& origin)
{
    const auto& table = key_table();
    std::map<std::string, int> seen;
    int line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = origin + " line " + std::to_string(line_no);
        const auto eq = line.find('=');
        require(eq != std::string_view::npos, where + ": expected 'key = value'");
        const std::string key(trim(line.substr(0, eq)));
        const std::string_view value = trim(line.substr(eq + 1));
        const auto it = table.find(key);
        require(it != table.end(), where + ": unknown key '" + key + "'");
        require(!seen.contains(key), where + ": duplicate key '" + key + "'");
        require(!value.empty(), key + ": missing value");
        seen[key] = line_no;
        it->second.set(c, key, value);
    }
}

} // namespace detail

/// Parses `key = value` lines ('#' comments). Unknown or repeated keys are
/// errors; absent keys keep their defaults. `overrides` (one `key=value`
/// each) are applied after the document. The result is validated.
inline RunConfig parse_config_text(std::string_view text, const std::vector<std::string>& overrides = {})
{
    RunConfig c;
    detail::apply_lines(c, text, "config");
    std::string extra;
    for (const auto& o : overrides) extra += o + "\n";
    detail::apply_lines(c, extra, "override");
    c.sim.params = c.params;
    c.cir.horizon = c.sim.horizon;
    c.cir.seeds = c.time_study.seeds;
    c.chaos.seeds = c.time_study.seeds;
    validate(c);
    return c;
}

inline RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides = {})
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), overrides);
}

/// Every key with its effective value, sorted, one `key = value` per line.
/// Empty values are left out.
inline std::string canonical_text(const RunConfig& c, bool hashed_only = false)
{
    std::string out;
    for (const auto& [key, h] : detail::key_table()) {
        if (hashed_only && !h.hashed) continue;
        const std::string value = h.get(c);
        if (value.empty()) continue;
        out += key + " = " + value + "\n";
    }
    return out;
}

/// 64-bit FNV-1a of the canonical text (output location excluded), as hex.
inline std::string config_hash(const RunConfig& c)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical_text(c, true)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace hlsv
