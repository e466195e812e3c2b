#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hlsv/cir.hpp"
#include "hlsv/errors.hpp"
#include "hlsv/leverage.hpp"
#include "hlsv/noise.hpp"

namespace hlsv {

enum class LeverageMode {
    calibrated, // sigma_Dup times the regularised NW ratio
    identity,   // leverage == 1: plain Heston log-Euler
};

enum class RecordMode { terminal, full_path };

enum class InitialMode {
    dirac,   // every particle starts at (ln s0, v0)
    sampled, // X_0^i = ln s0 + initial_log_sd * Z_i, i.i.d.
};

struct SimConfig {
    HestonParams params;
    double horizon = 1.0;
    std::size_t steps = 100;
    std::size_t n_particles = 1000;
    KernelSpec kernel;
    Regularisation reg;
    LeverageMode leverage = LeverageMode::calibrated;
    RecordMode record = RecordMode::terminal;
    LeveragePath path = LeveragePath::reference;
    std::size_t n_interacting = 0; // 0 = all particles enter the NW sums
    InitialMode initial = InitialMode::dirac;
    double initial_log_sd = 0.0;
    std::uint64_t initial_seed = 0;

    double dt() const { return horizon / static_cast<double>(steps); }

    void validate() const
    {
        params.validate("params.");
        reg.validate();
        detail::require(horizon > 0.0 && std::isfinite(horizon), "sim.T must be > 0");
        detail::require(steps >= 1, "sim.M must be >= 1");
        detail::require(n_particles >= 1, "sim.N must be >= 1");
        detail::require(kernel.bandwidth > 0.0, "kernel.bandwidth must be > 0");
        detail::require(n_interacting <= n_particles, "interacting particle count exceeds N");
        detail::require(initial != InitialMode::sampled || initial_log_sd >= 0.0,
                        "sim.initial_log_sd must be >= 0");
    }
};

/// Joint particle state at one grid node. v_plus mirrors max(v_raw, 0).
struct ParticleEnsemble {
    std::vector<double> x;
    std::vector<double> v_raw;
    std::vector<double> v_plus;
    double t = 0.0;
    std::size_t step = 0;

    std::size_t size() const { return x.size(); }
    bool operator==(const ParticleEnsemble&) const = default;
};

inline ParticleEnsemble init_ensemble(const SimConfig& cfg)
{
    cfg.validate();
    const std::size_t n = cfg.n_particles;
    ParticleEnsemble e;
    e.x.assign(n, cfg.params.x0());
    e.v_raw.assign(n, cfg.params.v0);
    e.v_plus.assign(n, positive_part(cfg.params.v0));
    if (cfg.initial == InitialMode::sampled) {
        // Stream id 2^63 + i keeps initial draws disjoint from the increment streams.
        constexpr std::uint64_t initial_stream = std::uint64_t{1} << 63;
        for (std::size_t i = 0; i < n; ++i)
            e.x[i] += cfg.initial_log_sd * normal_pair(cfg.initial_seed, initial_stream + i, 0).first;
    }
    return e;
}

/// Per-step diagnostics accumulated over a run.
struct StepStats {
    std::size_t surface_evaluations = 0;
    std::size_t floor_hits = 0;
};

/// One Euler-Maruyama / FTE step. All coefficients are computed from the
/// incoming (frozen) ensemble before any particle moves.
template <SurfaceLike Surface>
ParticleEnsemble em_step(const ParticleEnsemble& e, const SimConfig& cfg, const Surface& surface,
                         std::span<const double> dwx, std::span<const double> dwv,
                         StepStats* stats = nullptr)
{
    const std::size_t n = e.size();
    detail::require(dwx.size() == n && dwv.size() == n, "em_step: increment columns must have length N");
    const double dt = cfg.dt();

    ParticleEnsemble next;
    next.x.resize(n);
    next.v_raw.resize(n);
    next.v_plus.resize(n);
    next.step = e.step + 1;
    next.t = cfg.horizon * static_cast<double>(next.step) / static_cast<double>(cfg.steps);

    if (cfg.leverage == LeverageMode::identity) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = leverage_from_ratio(e.v_plus[i], 1.0, 1.0);
            next.x[i] = e.x[i] + c.beta * dt + c.sigma * dwx[i];
        }
    } else {
        const auto f = leverage_all(e.t, e.x, e.v_plus, surface, cfg.kernel, cfg.reg, cfg.n_interacting, cfg.path);
        for (std::size_t i = 0; i < n; ++i) next.x[i] = e.x[i] + f.beta[i] * dt + f.sigma[i] * dwx[i];
        if (stats) {
            stats->surface_evaluations += n;
            stats->floor_hits += f.floor_hits;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        next.v_raw[i] = fte_step(e.v_raw[i], dt, cfg.params, dwv[i]);
        next.v_plus[i] = positive_part(next.v_raw[i]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(next.x[i])) {
            throw NumericalError("non-finite log-spot at particle " + std::to_string(i) + ", step " +
                                 std::to_string(e.step));
        }
    }
    return next;
}

struct SimulationResult {
    ParticleEnsemble terminal;
    // full_path mode only: (steps + 1) x N, node-major.
    std::vector<double> path_x;
    std::vector<double> path_v_raw;
    StepStats stats;
};

/// Runs `cfg.steps` EM steps driven by `noise`. `observer` sees the initial
/// ensemble and the ensemble after every step.
template <SurfaceLike Surface, IncrementSource Source, class Observer>
SimulationResult simulate(const SimConfig& cfg, const Surface& surface, const Source& noise,
                          Observer&& observer)
{
    cfg.validate();
    detail::require(noise.particles() == cfg.n_particles, "simulate: noise rows must equal sim.N");
    detail::require(noise.steps() == cfg.steps, "simulate: noise steps must equal sim.M");

    SimulationResult out;
    ParticleEnsemble e = init_ensemble(cfg);
    const std::size_t n = cfg.n_particles;
    auto record = [&](const ParticleEnsemble& s) {
        if (cfg.record != RecordMode::full_path) return;
        out.path_x.insert(out.path_x.end(), s.x.begin(), s.x.end());
        out.path_v_raw.insert(out.path_v_raw.end(), s.v_raw.begin(), s.v_raw.end());
    };
    if (cfg.record == RecordMode::full_path) {
        out.path_x.reserve((cfg.steps + 1) * n);
        out.path_v_raw.reserve((cfg.steps + 1) * n);
    }
    record(e);
    observer(e);
    std::vector<double> dwx(n), dwv(n);
    for (std::size_t m = 0; m < cfg.steps; ++m) {
        noise.fill_step(m, dwx, dwv);
        e = em_step(e, cfg, surface, dwx, dwv, &out.stats);
        record(e);
        observer(e);
    }
    out.terminal = std::move(e);
    return out;
}

template <SurfaceLike Surface, IncrementSource Source>
SimulationResult simulate(const SimConfig& cfg, const Surface& surface, const Source& noise)
{
    return simulate(cfg, surface, noise, [](const ParticleEnsemble&) {});
}

enum class Payoff { call, put };

struct PriceEstimate {
    double price = 0.0;
    double std_error = 0.0;
};

/// Monte Carlo vanilla price from the terminal spots e^X with its standard error.
inline PriceEstimate price_vanilla(const ParticleEnsemble& e, Payoff payoff, double strike)
{
    const std::size_t n = e.size();
    detail::require(n >= 2, "price_vanilla: need at least 2 particles");
    std::vector<double> pay(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = std::exp(e.x[i]);
        pay[i] = payoff == Payoff::call ? std::max(s - strike, 0.0) : std::max(strike - s, 0.0);
    }
    double sum = 0.0;
    for (double p : pay) sum += p;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double p : pay) ss += (p - mean) * (p - mean);
    const double var = ss / static_cast<double>(n - 1);
    return {mean, std::sqrt(var / static_cast<double>(n))};
}

} // namespace hlsv
