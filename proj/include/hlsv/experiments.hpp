#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "hlsv/cir.hpp"
#include "hlsv/errors.hpp"
#include "hlsv/noise.hpp"
#include "hlsv/particles.hpp"

namespace hlsv {

struct LogLogFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    double ci95_low = 0.0;
    double ci95_high = 0.0;
    std::size_t n = 0;
};

/// OLS of log(y) on log(x); 95% CI for the slope from Student's t with n-2
/// degrees of freedom.
inline LogLogFit fit_loglog(std::span<const std::pair<double, double>> points)
{
    const std::size_t n = points.size();
    detail::require(n >= 3, "fit_loglog: need at least 3 points");
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        detail::require(points[i].first > 0.0 && points[i].second > 0.0,
                        "fit_loglog: points must be strictly positive");
        lx[i] = std::log(points[i].first);
        ly[i] = std::log(points[i].second);
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    detail::require(sxx > 0.0, "fit_loglog: x values are all equal");

    LogLogFit fit;
    fit.n = n;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
        sse += r * r;
    }
    const auto dof = static_cast<double>(n - 2);
    fit.slope_stderr = std::sqrt(sse / dof / sxx);
    const double t = boost::math::quantile(boost::math::students_t(dof), 0.975);
    fit.ci95_low = fit.slope - t * fit.slope_stderr;
    fit.ci95_high = fit.slope + t * fit.slope_stderr;
    return fit;
}

struct ConvergenceRow {
    std::size_t resolution = 0;
    double rmse = 0.0;
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;
    std::size_t memory_bytes = 0;
};

/// Study output. `points` hold the seed-pooled RMSE per resolution,
/// sqrt(mean over seeds of rmse^2); the fit runs on those. `rate` is the
/// convergence rate -slope, with its CI mirrored accordingly.
struct ConvergenceReport {
    std::string study;
    std::vector<ConvergenceRow> rows;
    std::vector<std::pair<double, double>> points;
    LogLogFit fit;
    double rate = 0.0;
    double rate_ci_low = 0.0;
    double rate_ci_high = 0.0;
    std::vector<std::uint64_t> seeds;
    std::string config_hash;
    double wall_seconds = 0.0;
    std::vector<std::string> warnings;

    /// Median over seeds of the per-seed RMSE at each resolution.
    std::vector<double> median_rmse() const;
};

inline std::vector<double> ConvergenceReport::median_rmse() const
{
    std::vector<double> out;
    for (const auto& [res, pooled] : points) {
        std::vector<double> v;
        for (const auto& r : rows)
            if (static_cast<double>(r.resolution) == res) v.push_back(r.rmse);
        std::sort(v.begin(), v.end());
        const std::size_t k = v.size();
        out.push_back(k % 2 == 1 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]));
    }
    return out;
}

namespace detail {

inline void pool_and_fit(ConvergenceReport& rep, std::span<const std::size_t> resolutions, bool fit)
{
    rep.points.clear();
    for (std::size_t res : resolutions) {
        double ss = 0.0;
        std::size_t count = 0;
        for (const auto& r : rep.rows) {
            if (r.resolution != res) continue;
            ss += r.rmse * r.rmse;
            ++count;
        }
        rep.points.emplace_back(static_cast<double>(res), std::sqrt(ss / static_cast<double>(count)));
    }
    if (!fit) return;
    rep.fit = fit_loglog(rep.points);
    rep.rate = -rep.fit.slope;
    rep.rate_ci_low = -rep.fit.ci95_high;
    rep.rate_ci_high = -rep.fit.ci95_low;
}

inline bool all_positive(const ConvergenceReport& rep)
{
    return std::all_of(rep.points.begin(), rep.points.end(), [](const auto& p) { return p.second > 0.0; });
}

inline double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace detail

enum class ErrorMetric {
    sup_grid, // max over shared grid nodes
    terminal, // at T only
};

struct TimeStudySpec {
    std::vector<std::size_t> m_list{16, 32, 64, 128, 256, 512, 1024};
    std::size_t m_ref = 16384;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    ErrorMetric metric = ErrorMetric::sup_grid;
};

namespace detail {

inline void validate_time_study(const TimeStudySpec& spec)
{
    require(!spec.m_list.empty(), "study.M_list must not be empty");
    require(!spec.seeds.empty(), "study.seeds must not be empty");
    for (std::size_t j = 0; j < spec.m_list.size(); ++j) {
        require(spec.m_list[j] >= 1, "study.M_list entries must be >= 1");
        require(j == 0 || spec.m_list[j] > spec.m_list[j - 1], "study.M_list must be strictly ascending");
        require(spec.m_ref % spec.m_list[j] == 0, "study.M_list entries must divide study.M_ref");
    }
}

// One coarse level riding on the fine noise stream: increments are summed
// left to right until a coarse step completes.
struct CoupledLevel {
    std::size_t factor;
    SimConfig cfg;
    ParticleEnsemble ens;
    std::vector<double> acc_x, acc_v;
    std::vector<double> err;
    double seconds = 0.0;
};

} // namespace detail

/// Strong EM error in time for the particle system. All resolutions share one
/// fine Brownian path per seed (M_ref steps); each coarse run sums the fine
/// increments, and errors are taken against the M_ref run at the coarse nodes.
template <SurfaceLike Surface>
ConvergenceReport strong_convergence_study(const SimConfig& base, const Surface& surface,
                                           const TimeStudySpec& spec)
{
    base.validate();
    detail::validate_time_study(spec);
    detail::require(spec.m_ref >= 4 * spec.m_list.back(), "study.M_ref must be >= 4 * max(M_list)");

    const auto t_start = std::chrono::steady_clock::now();
    ConvergenceReport rep;
    rep.study = "strong-convergence";
    rep.seeds = spec.seeds;
    const std::size_t n = base.n_particles;

    for (std::uint64_t seed : spec.seeds) {
        NoisePlan plan{seed, n, base.params.rho, spec.m_ref, base.horizon, {}};
        StreamingNoise fine(plan, 1);

        SimConfig ref_cfg = base;
        ref_cfg.steps = spec.m_ref;
        ParticleEnsemble ref = init_ensemble(ref_cfg);

        std::vector<detail::CoupledLevel> levels;
        for (std::size_t m : spec.m_list) {
            SimConfig c = base;
            c.steps = m;
            levels.push_back({spec.m_ref / m, c, init_ensemble(c), std::vector<double>(n, 0.0),
                              std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0.0});
        }

        std::vector<double> dwx(n), dwv(n);
        for (std::size_t mf = 0; mf < spec.m_ref; ++mf) {
            fine.fill_step(mf, dwx, dwv);
            ref = em_step(ref, ref_cfg, surface, dwx, dwv);
            for (auto& lv : levels) {
                for (std::size_t i = 0; i < n; ++i) {
                    lv.acc_x[i] += dwx[i];
                    lv.acc_v[i] += dwv[i];
                }
                if ((mf + 1) % lv.factor != 0) continue;
                const auto t0 = std::chrono::steady_clock::now();
                lv.ens = em_step(lv.ens, lv.cfg, surface, lv.acc_x, lv.acc_v);
                std::fill(lv.acc_x.begin(), lv.acc_x.end(), 0.0);
                std::fill(lv.acc_v.begin(), lv.acc_v.end(), 0.0);
                const bool compare = spec.metric == ErrorMetric::sup_grid || mf + 1 == spec.m_ref;
                if (compare) {
                    for (std::size_t i = 0; i < n; ++i)
                        lv.err[i] = std::max(lv.err[i], std::abs(lv.ens.x[i] - ref.x[i]));
                }
                lv.seconds += detail::seconds_since(t0);
            }
        }
        for (const auto& lv : levels) {
            double ss = 0.0;
            for (double e : lv.err) ss += e * e;
            rep.rows.push_back({lv.cfg.steps, std::sqrt(ss / static_cast<double>(n)), seed, lv.seconds,
                                n * 5 * sizeof(double)});
        }
    }
    detail::pool_and_fit(rep, spec.m_list, true);
    rep.wall_seconds = detail::seconds_since(t_start);
    return rep;
}

struct ChaosStudySpec {
    std::vector<std::size_t> n_list{128, 256, 512, 1024, 2048, 4096};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

/// Pathwise propagation of chaos: 2N particles driven by one Brownian path,
/// once with the NW sums over all 2N particles and once over the first N
/// only. Error is the RMS difference of terminal spots. The bandwidth rule is
/// resolved with the study's N and shared by both runs.
template <SurfaceLike Surface>
ConvergenceReport chaos_study(const SimConfig& base, const Surface& surface, const ChaosStudySpec& spec)
{
    base.validate();
    detail::require(!spec.n_list.empty() && !spec.seeds.empty(), "chaos study: N_list and seeds must be non-empty");
    for (std::size_t j = 0; j < spec.n_list.size(); ++j) {
        detail::require(spec.n_list[j] >= 2, "study.N_list entries must be >= 2");
        detail::require(j == 0 || spec.n_list[j] > spec.n_list[j - 1], "study.N_list must be strictly ascending");
    }

    const auto t_start = std::chrono::steady_clock::now();
    ConvergenceReport rep;
    rep.study = "chaos";
    rep.seeds = spec.seeds;
    for (std::size_t big_n : spec.n_list) {
        for (std::uint64_t seed : spec.seeds) {
            const auto t0 = std::chrono::steady_clock::now();
            const std::size_t total = 2 * big_n;
            SimConfig full = base;
            full.n_particles = total;
            full.n_interacting = 0;
            full.kernel = resolve_bandwidth(base.kernel, base.params.s0, big_n, base.reg.space);
            SimConfig half = full;
            half.n_interacting = big_n;

            StreamingNoise noise(NoisePlan{seed, total, base.params.rho, base.steps, base.horizon, {}});
            ParticleEnsemble a = init_ensemble(full);
            ParticleEnsemble b = init_ensemble(half);
            std::vector<double> dwx(total), dwv(total);
            for (std::size_t m = 0; m < base.steps; ++m) {
                noise.fill_step(m, dwx, dwv);
                a = em_step(a, full, surface, dwx, dwv);
                b = em_step(b, half, surface, dwx, dwv);
            }
            double ss = 0.0;
            for (std::size_t i = 0; i < total; ++i) {
                const double d = std::exp(a.x[i]) - std::exp(b.x[i]);
                ss += d * d;
            }
            rep.rows.push_back({big_n, std::sqrt(ss / static_cast<double>(total)), seed,
                                detail::seconds_since(t0), total * 8 * sizeof(double)});
        }
    }
    const bool fit = spec.n_list.size() >= 3;
    detail::pool_and_fit(rep, spec.n_list, false);
    if (fit && detail::all_positive(rep)) {
        detail::pool_and_fit(rep, spec.n_list, true);
    } else if (fit) {
        rep.warnings.push_back("zero error at some N; no rate fitted");
    }
    rep.wall_seconds = detail::seconds_since(t_start);
    return rep;
}

struct CirStudySpec {
    std::vector<std::size_t> m_list{512, 1024, 2048, 4096, 8192};
    std::size_t m_ref = 131072;
    std::size_t n_paths = 2000;
    double horizon = 1.0;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

/// Strong L2 error of the FTE scheme at T, coarse vs M_ref, coupled through
/// one fine Brownian path per seed.
inline ConvergenceReport cir_order_study(const HestonParams& params, const CirStudySpec& spec)
{
    params.validate("params.");
    detail::require(spec.n_paths >= 1, "cir study: n_paths must be >= 1");
    detail::require(spec.horizon > 0.0, "cir study: horizon must be > 0");
    TimeStudySpec shape{spec.m_list, spec.m_ref, spec.seeds, ErrorMetric::terminal};
    detail::validate_time_study(shape);

    const auto t_start = std::chrono::steady_clock::now();
    ConvergenceReport rep;
    rep.study = "cir-order";
    rep.seeds = spec.seeds;
    if (const auto fi = feller_ratio(params); !fi.above_three) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "Feller ratio nu = %.4g <= 3: FTE order-1/2 hypothesis not met", fi.nu);
        rep.warnings.emplace_back(buf);
        std::fprintf(stderr, "warning: %s\n", buf);
    }

    const std::size_t n = spec.n_paths;
    const double dt_ref = spec.horizon / static_cast<double>(spec.m_ref);
    for (std::uint64_t seed : spec.seeds) {
        StreamingNoise fine(NoisePlan{seed, n, params.rho, spec.m_ref, spec.horizon, {}});
        std::vector<double> ref(n, params.v0);
        struct Level {
            std::size_t factor;
            double dt;
            std::vector<double> v, acc;
        };
        std::vector<Level> levels;
        for (std::size_t m : spec.m_list)
            levels.push_back({spec.m_ref / m, spec.horizon / static_cast<double>(m),
                              std::vector<double>(n, params.v0), std::vector<double>(n, 0.0)});
        std::vector<double> dwx(n), dwv(n);
        for (std::size_t mf = 0; mf < spec.m_ref; ++mf) {
            fine.fill_step(mf, dwx, dwv);
            for (std::size_t i = 0; i < n; ++i) ref[i] = fte_step(ref[i], dt_ref, params, dwv[i]);
            for (auto& lv : levels) {
                for (std::size_t i = 0; i < n; ++i) lv.acc[i] += dwv[i];
                if ((mf + 1) % lv.factor != 0) continue;
                for (std::size_t i = 0; i < n; ++i) {
                    lv.v[i] = fte_step(lv.v[i], lv.dt, params, lv.acc[i]);
                    lv.acc[i] = 0.0;
                }
            }
        }
        for (std::size_t l = 0; l < levels.size(); ++l) {
            double ss = 0.0;
            for (std::size_t i = 0; i < n; ++i) ss += (levels[l].v[i] - ref[i]) * (levels[l].v[i] - ref[i]);
            rep.rows.push_back({spec.m_list[l], std::sqrt(ss / static_cast<double>(n)), seed, 0.0, n * 2 * sizeof(double)});
        }
    }
    detail::pool_and_fit(rep, spec.m_list, false);
    if (spec.m_list.size() >= 3 && detail::all_positive(rep)) detail::pool_and_fit(rep, spec.m_list, true);
    rep.wall_seconds = detail::seconds_since(t_start);
    return rep;
}

} // namespace hlsv
