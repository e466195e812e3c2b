#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <omp.h>

#include "hlsv/cir.hpp"
#include "hlsv/config.hpp"
#include "hlsv/dupire.hpp"
#include "hlsv/errors.hpp"
#include "hlsv/experiments.hpp"
#include "hlsv/heston_pricer.hpp"
#include "hlsv/io.hpp"
#include "hlsv/noise.hpp"
#include "hlsv/particles.hpp"

namespace hlsv {

enum ExitCode : int {
    exit_ok = 0,
    exit_other = 1,
    exit_config = 2,
    exit_numerical = 3,
    exit_io = 4,
};

inline const std::vector<std::string>& subcommands()
{
    static const std::vector<std::string> names{"diagnose", "dupire-build", "simulate", "price",
                                                "strong-convergence", "chaos", "cir-order"};
    return names;
}

struct CliOptions {
    std::string subcommand;
    std::string config_path; // empty: defaults only
    std::vector<std::string> overrides;
    std::string output_dir; // overrides output.dir
    int threads = 0;        // 0: OpenMP default
};

/// Synthetic market grid priced with the market parameters, turned into the
/// Dupire surface.
inline LocalVolSurface build_market_surface(const RunConfig& c)
{
    const auto grid = build_call_grid(c.market, c.grid.maturities(), c.grid.strikes(), c.surface.tol_butterfly);
    return dupire_local_vol(grid, c.surface);
}

namespace detail {

struct RunContext {
    const RunConfig& cfg;
    std::filesystem::path dir;
    std::ostream& out;
    nlohmann::ordered_json manifest;
    std::vector<std::string> outputs;

    void emit(const std::string& name, const std::string& content)
    {
        write_file(dir / name, content);
        outputs.push_back(name);
    }
};

inline nlohmann::ordered_json feller_json(const HestonParams& p, double lambda)
{
    const auto f = feller_ratio(p);
    return {{"nu", f.nu},
            {"nu_star", f.nu_star},
            {"feller_holds", f.feller_holds},
            {"above_three", f.above_three},
            {"above_nu_star", f.above_nu_star},
            {"lambda", lambda},
            {"t_star", critical_time(p, lambda).to_string()}};
}

inline void run_diagnose(RunContext& ctx)
{
    const auto& c = ctx.cfg;
    const double lambda = c.resolved_lambda();
    CsvWriter csv({"set", "nu", "nu_star", "feller_holds", "above_three", "above_nu_star", "lambda", "t_star"});
    for (const auto& [name, p] : {std::pair<std::string, HestonParams>{"market", c.market}, {"params", c.params}}) {
        const auto f = feller_ratio(p);
        const auto ts = critical_time(p, lambda).to_string();
        auto yn = [](bool b) { return b ? "yes" : "no"; };
        ctx.out << name << ": nu=" << fmt17(f.nu) << " nu_star=" << fmt17(f.nu_star) << " feller=" << yn(f.feller_holds)
                << " nu>3=" << yn(f.above_three) << " nu>nu_star=" << yn(f.above_nu_star) << " lambda=" << fmt17(lambda)
                << (c.lambda > 0.0 ? "" : " (heuristic 2*sigma_max^2)") << " T*=" << ts << "\n";
        csv.row(name, f.nu, f.nu_star, int(f.feller_holds), int(f.above_three), int(f.above_nu_star), lambda, ts);
    }
    ctx.emit("diagnose.csv", csv.text());
}

inline void run_dupire_build(RunContext& ctx)
{
    const auto& c = ctx.cfg;
    const auto grid = build_call_grid(c.market, c.grid.maturities(), c.grid.strikes(), c.surface.tol_butterfly);
    const auto surf = dupire_local_vol(grid, c.surface);
    CsvWriter csv({"t", "K", "sigma"});
    for (std::size_t i = 0; i < surf.maturities().size(); ++i)
        for (std::size_t j = 0; j < surf.strikes().size(); ++j)
            csv.row(surf.maturities()[i], surf.strikes()[j], surf.node(i, j));
    ctx.emit("surface.csv", csv.text());

    const auto& d = surf.diagnostics();
    nlohmann::ordered_json meta;
    meta["sigma_lo"] = surf.sigma_lo();
    meta["sigma_hi"] = surf.sigma_hi();
    meta["lipschitz_cap"] = surf.lipschitz_cap();
    meta["nodes"] = surf.maturities().size() * surf.strikes().size();
    meta["clamped_low"] = d.clamped_low;
    meta["clamped_high"] = d.clamped_high;
    meta["floored_denominators"] = d.floored_denominators;
    meta["calendar_violations"] = d.calendar_violations;
    meta["filled_nodes"] = d.filled_nodes;
    meta["repaired_price_nodes"] = grid.repaired_nodes;
    meta["interpolation"] = "monotone cubic in K, linear in t, flat extrapolation";
    ctx.emit("surface_meta.json", meta.dump(2) + "\n");
    ctx.out << "surface: " << meta["nodes"] << " nodes, clamped low " << d.clamped_low << ", clamped high "
            << d.clamped_high << ", floored " << d.floored_denominators << "\n";
}

inline LocalVolSurface surface_for(const RunConfig& c)
{
    if (c.sim.leverage == LeverageMode::identity) return LocalVolSurface::flat(1.0);
    return build_market_surface(c);
}

inline SimulationResult run_particles(RunContext& ctx, const SimConfig& sim)
{
    const auto surf = surface_for(ctx.cfg);
    StreamingNoise noise(NoisePlan{ctx.cfg.seed, sim.n_particles, sim.params.rho, sim.steps, sim.horizon, {}});
    auto res = simulate(sim, surf, noise);
    const auto& st = res.stats;
    if (st.surface_evaluations > 0 && st.floor_hits * 100 > st.surface_evaluations) {
        std::cerr << "warning: local volatility at its floor in " << st.floor_hits << " of "
                  << st.surface_evaluations << " evaluations\n";
    }
    ctx.manifest["surface_evaluations"] = st.surface_evaluations;
    ctx.manifest["floor_hits"] = st.floor_hits;
    ctx.manifest["bandwidth"] = sim.kernel.bandwidth;
    return res;
}

inline void run_simulate(RunContext& ctx)
{
    auto sim = ctx.cfg.resolved_sim();
    if (ctx.cfg.save_path) sim.record = RecordMode::full_path;
    const auto res = run_particles(ctx, sim);
    const auto& e = res.terminal;
    CsvWriter csv({"i", "X", "S", "V_raw", "V_plus"});
    for (std::size_t i = 0; i < e.size(); ++i) csv.row(i, e.x[i], std::exp(e.x[i]), e.v_raw[i], e.v_plus[i]);
    ctx.emit("terminal.csv", csv.text());
    if (ctx.cfg.save_path) {
        CsvWriter path({"step", "t", "i", "X", "V_raw"});
        const std::size_t n = sim.n_particles;
        for (std::size_t m = 0; m <= sim.steps; ++m) {
            const double t = sim.horizon * static_cast<double>(m) / static_cast<double>(sim.steps);
            for (std::size_t i = 0; i < n; ++i) path.row(m, t, i, res.path_x[m * n + i], res.path_v_raw[m * n + i]);
        }
        ctx.emit("path.csv", path.text());
    }
    ctx.out << "simulated " << e.size() << " particles over " << sim.steps << " steps\n";
}

inline void run_price(RunContext& ctx)
{
    const auto& c = ctx.cfg;
    const auto sim = c.resolved_sim();
    const auto res = run_particles(ctx, sim);
    CsvWriter csv({"T", "K", "market_price", "mc_price", "mc_std_error", "z"});
    for (double k : c.price_strikes) {
        const double market = heston_call(c.market, sim.horizon, k);
        const auto est = price_vanilla(res.terminal, Payoff::call, k);
        const double z = est.std_error > 0.0 ? (est.price - market) / est.std_error : 0.0;
        csv.row(sim.horizon, k, market, est.price, est.std_error, z);
        ctx.out << "call T=" << fmt17(sim.horizon) << " K=" << fmt17(k) << ": market " << fmt17(market) << ", particles "
                << fmt17(est.price) << " +- " << fmt17(est.std_error) << " (z=" << fmt17(z) << ")\n";
    }
    ctx.emit("price.csv", csv.text());
}

inline void emit_report(RunContext& ctx, const ConvergenceReport& rep, const std::string& stem,
                        const std::string& xlabel)
{
    ctx.emit(stem + ".csv", report_csv(rep));
    if (ctx.cfg.svg) ctx.emit(stem + ".svg", loglog_svg(rep, xlabel));
    ctx.manifest["report"] = report_json(rep);
    for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
    ctx.out << summary_line(rep) << "\n";
}

inline void run_strong(RunContext& ctx)
{
    const auto sim = ctx.cfg.resolved_sim();
    const auto surf = surface_for(ctx.cfg);
    emit_report(ctx, strong_convergence_study(sim, surf, ctx.cfg.time_study), "strong_convergence", "M");
}

inline void run_chaos(RunContext& ctx)
{
    SimConfig sim = ctx.cfg.sim;
    sim.params = ctx.cfg.params;
    const auto surf = surface_for(ctx.cfg);
    emit_report(ctx, chaos_study(sim, surf, ctx.cfg.chaos), "chaos", "N");
}

inline void run_cir(RunContext& ctx)
{
    emit_report(ctx, cir_order_study(ctx.cfg.params, ctx.cfg.cir), "cir_order", "M");
}

} // namespace detail

/// Runs one subcommand on a validated config. Exceptions propagate.
inline void run(const std::string& subcommand, const RunConfig& cfg, const std::filesystem::path& dir,
                std::ostream& out)
{
    const auto t0 = std::chrono::steady_clock::now();
    detail::RunContext ctx{cfg, dir, out, {}, {}};
    ctx.manifest["subcommand"] = subcommand;
    ctx.manifest["config_hash"] = config_hash(cfg);
    ctx.manifest["seed"] = cfg.seed;
    ctx.manifest["study_seeds"] = cfg.time_study.seeds;
    ctx.manifest["versions"] = versions_json();
    ctx.manifest["threads"] = omp_get_max_threads();
    ctx.manifest["diagnostics"] = detail::feller_json(cfg.params, cfg.resolved_lambda());

    prepare_output_dir(dir);
    if (subcommand == "diagnose") detail::run_diagnose(ctx);
    else if (subcommand == "dupire-build") detail::run_dupire_build(ctx);
    else if (subcommand == "simulate") detail::run_simulate(ctx);
    else if (subcommand == "price") detail::run_price(ctx);
    else if (subcommand == "strong-convergence") detail::run_strong(ctx);
    else if (subcommand == "chaos") detail::run_chaos(ctx);
    else if (subcommand == "cir-order") detail::run_cir(ctx);
    else throw ConfigError("unknown subcommand '" + subcommand + "'");

    ctx.manifest["outputs"] = ctx.outputs;
    ctx.manifest["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::ordered_json conf;
    for (const auto& [key, h] : detail::key_table()) conf[key] = h.get(cfg);
    ctx.manifest["config"] = conf;
    write_file(dir / (subcommand + ".manifest.json"), ctx.manifest.dump(2) + "\n");
}

/// Parses, validates and runs; maps failures to exit codes
/// (config 2, numerical 3, io 4).
inline int run_cli(const CliOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    try {
        const RunConfig cfg = opt.config_path.empty() ? parse_config_text("", opt.overrides)
                                                      : parse_config(opt.config_path, opt.overrides);
        if (opt.threads > 0) omp_set_num_threads(opt.threads);
        const auto dir = resolve_output_dir(opt.output_dir.empty() ? cfg.output_dir : opt.output_dir);
        run(opt.subcommand, cfg, dir, out);
        return exit_ok;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return exit_numerical;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return exit_io;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_other;
    }
}

} // namespace hlsv
