#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <gtest/gtest.h>
#include <omp.h>

#include "hlsv/dupire.hpp"
#include "hlsv/noise.hpp"
#include "hlsv/particles.hpp"

using namespace hlsv;

namespace {

SimConfig base_config(std::size_t n, std::size_t m)
{
    SimConfig c;
    c.n_particles = n;
    c.steps = m;
    c.kernel = resolve_bandwidth(c.kernel, c.params.s0, n);
    return c;
}

NoisePlan plan_for(const SimConfig& c, std::uint64_t seed)
{
    return NoisePlan{seed, c.n_particles, c.params.rho, c.steps, c.horizon, {}};
}

LocalVolSurface smile()
{
    return LocalVolSurface({0.25, 1.0}, {70, 100, 130}, {0.16, 0.1, 0.12, 0.14, 0.11, 0.13}, 0.01, 5.0, 10.0);
}

struct NanSurface {
    double eval(double, double) const { return std::numeric_limits<double>::quiet_NaN(); }
    bool at_floor(double) const { return false; }
};

} // namespace

TEST(InitEnsemble, DiracInitials)
{
    const auto e = init_ensemble(base_config(5, 10));
    ASSERT_EQ(e.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_NEAR(e.x[i], 4.60517, 1e-5);
        EXPECT_EQ(e.v_plus[i], 0.0094);
        EXPECT_EQ(e.v_raw[i], 0.0094);
    }
    EXPECT_EQ(e.step, 0u);
    EXPECT_EQ(e.t, 0.0);
}

TEST(InitEnsemble, RejectsInvalid)
{
    EXPECT_THROW(init_ensemble(base_config(0, 10)), ConfigError);
    EXPECT_THROW(init_ensemble(base_config(5, 0)), ConfigError);
    auto c = base_config(5, 10);
    c.horizon = 0.0;
    EXPECT_THROW(init_ensemble(c), ConfigError);
}

TEST(InitEnsemble, SampledInitialsSpread)
{
    auto c = base_config(20000, 1);
    c.initial = InitialMode::sampled;
    c.initial_log_sd = 0.1;
    c.initial_seed = 3;
    const auto e = init_ensemble(c);
    double s = 0, ss = 0;
    for (double x : e.x) {
        s += x - c.params.x0();
        ss += (x - c.params.x0()) * (x - c.params.x0());
    }
    EXPECT_NEAR(s / 20000, 0.0, 4 * 0.1 / std::sqrt(20000.0));
    EXPECT_NEAR(std::sqrt(ss / 20000), 0.1, 0.003);
}

TEST(EmStep, IdentityModeIsLogEuler)
{
    auto c = base_config(4, 10);
    c.params.xi = 1e-12;
    c.params.v0 = c.params.theta = 0.04;
    c.leverage = LeverageMode::identity;
    const auto e = init_ensemble(c);
    const std::vector<double> dwx{0.1, -0.2, 0.0, 0.3}, dwv{0.5, 0.5, 0.5, 0.5};
    const auto next = em_step(e, c, LocalVolSurface::flat(0.2), dwx, dwv);
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_DOUBLE_EQ(next.x[i], e.x[i] - 0.04 / 2 * 0.1 + 0.2 * dwx[i]);
    EXPECT_EQ(next.step, 1u);
    EXPECT_DOUBLE_EQ(next.t, 0.1);
}

TEST(EmStep, ZeroVarianceLeavesSpot)
{
    auto c = base_config(3, 10);
    auto e = init_ensemble(c);
    std::fill(e.v_plus.begin(), e.v_plus.end(), 0.0);
    std::fill(e.v_raw.begin(), e.v_raw.end(), -0.01);
    const std::vector<double> dwx{0.3, -0.1, 0.2}, dwv{0.1, 0.1, 0.1};
    const auto next = em_step(e, c, smile(), dwx, dwv);
    EXPECT_EQ(next.x, e.x);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(next.v_raw[i], -0.01 + c.params.k * c.params.theta * 0.1);
        EXPECT_EQ(next.v_plus[i], std::max(next.v_raw[i], 0.0));
    }
}

TEST(EmStep, HandComputedTwoParticleStep)
{
    auto c = base_config(2, 4);
    c.kernel.rule = BandwidthRule::fixed;
    c.kernel.bandwidth = 10.0;
    ParticleEnsemble e;
    e.x = {std::log(100.0), std::log(105.0)};
    e.v_raw = e.v_plus = {0.01, 0.04};
    const std::vector<double> dwx{0.05, -0.03}, dwv{0.0, 0.0};
    const auto next = em_step(e, c, LocalVolSurface::flat(0.2), dwx, dwv);

    const double u = (105.0 - 100.0) / 10.0;
    const double w0 = 15.0 / 16.0, w1 = 15.0 / 16.0 * (1 - u * u) * (1 - u * u);
    // Each particle carries the self weight w0 on its own variance.
    const double r[2] = {(w0 + w1 + 0.01) / (0.01 * w0 + 0.04 * w1 + 0.01),
                         (w0 + w1 + 0.01) / (0.04 * w0 + 0.01 * w1 + 0.01)};
    for (std::size_t i = 0; i < 2; ++i) {
        const double sigma = std::sqrt(e.v_plus[i]) * 0.2 * std::sqrt(r[i]);
        EXPECT_NEAR(next.x[i], e.x[i] - 0.5 * sigma * sigma * 0.25 + sigma * dwx[i], 1e-14);
    }
}

TEST(EmStep, NonFiniteAborts)
{
    const auto c = base_config(3, 2);
    const auto e = init_ensemble(c);
    const std::vector<double> z(3, 0.1);
    try {
        em_step(e, c, NanSurface{}, z, z);
        FAIL();
    } catch (const NumericalError& err) {
        EXPECT_NE(std::string(err.what()).find("particle 0"), std::string::npos);
    }
    EXPECT_THROW(em_step(e, c, smile(), std::vector<double>(2), z), ConfigError);
}

TEST(Simulate, StepCountAndValidation)
{
    auto c = base_config(16, 1);
    const auto r = simulate(c, smile(), generate(plan_for(c, 1)));
    EXPECT_EQ(r.terminal.step, 1u);
    EXPECT_DOUBLE_EQ(r.terminal.t, 1.0);
    auto wrong = plan_for(c, 1);
    wrong.steps = 2;
    EXPECT_THROW(simulate(c, smile(), generate(wrong)), ConfigError);
}

TEST(Simulate, SameSeedBitIdentical)
{
    const auto c = base_config(200, 20);
    const auto a = simulate(c, smile(), StreamingNoise(plan_for(c, 9)));
    const auto b = simulate(c, smile(), StreamingNoise(plan_for(c, 9)));
    EXPECT_TRUE(a.terminal == b.terminal);
    const auto d = simulate(c, smile(), StreamingNoise(plan_for(c, 10)));
    EXPECT_FALSE(a.terminal == d.terminal);
}

TEST(Simulate, ThreadCountDeterminism)
{
    for (auto path : {LeveragePath::reference, LeveragePath::windowed}) {
        auto c = base_config(300, 16);
        c.path = path;
        omp_set_num_threads(1);
        const auto a = simulate(c, smile(), StreamingNoise(plan_for(c, 4)));
        omp_set_num_threads(8);
        const auto b = simulate(c, smile(), StreamingNoise(plan_for(c, 4)));
        EXPECT_TRUE(a.terminal == b.terminal);
    }
}

TEST(Simulate, WindowedPathMatchesReference)
{
    auto c = base_config(400, 12);
    const auto a = simulate(c, smile(), StreamingNoise(plan_for(c, 5)));
    c.path = LeveragePath::windowed;
    const auto b = simulate(c, smile(), StreamingNoise(plan_for(c, 5)));
    EXPECT_TRUE(a.terminal == b.terminal);
}

TEST(Simulate, ExchangeableUnderPermutation)
{
    const auto c = base_config(128, 16);
    auto p = plan_for(c, 21);
    const auto a = simulate(c, smile(), StreamingNoise(p));
    std::vector<std::uint64_t> perm(128);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(8));
    p.stream_ids = perm;
    const auto b = simulate(c, smile(), StreamingNoise(p));
    for (std::size_t r = 0; r < 128; ++r) {
        ASSERT_EQ(b.terminal.x[r], a.terminal.x[perm[r]]) << r;
        ASSERT_EQ(b.terminal.v_raw[r], a.terminal.v_raw[perm[r]]) << r;
    }
}

TEST(Simulate, VarianceChannelIndependentOfInteraction)
{
    auto c = base_config(50, 20);
    const auto a = simulate(c, smile(), StreamingNoise(plan_for(c, 2)));
    auto big = base_config(120, 20);
    const auto b = simulate(big, smile(), StreamingNoise(plan_for(big, 2)));
    c.leverage = LeverageMode::identity;
    const auto d = simulate(c, smile(), StreamingNoise(plan_for(c, 2)));
    for (std::size_t i = 0; i < 50; ++i) {
        EXPECT_EQ(a.terminal.v_raw[i], b.terminal.v_raw[i]);
        EXPECT_EQ(a.terminal.v_raw[i], d.terminal.v_raw[i]);
    }
}

TEST(Simulate, FullPathRecord)
{
    auto c = base_config(10, 5);
    c.record = RecordMode::full_path;
    std::size_t seen = 0;
    const auto r = simulate(c, smile(), generate(plan_for(c, 3)), [&](const ParticleEnsemble& e) {
        EXPECT_EQ(e.step, seen);
        ++seen;
    });
    EXPECT_EQ(seen, 6u);
    ASSERT_EQ(r.path_x.size(), 60u);
    EXPECT_EQ(r.path_x[0], c.params.x0());
    EXPECT_TRUE(std::equal(r.terminal.x.begin(), r.terminal.x.end(), r.path_x.begin() + 50));
    EXPECT_EQ(r.stats.surface_evaluations, 50u);
}

TEST(Simulate, SpotMartingaleAtDeskScale)
{
    const auto c = base_config(4000, 50);
    const auto r = simulate(c, smile(), StreamingNoise(plan_for(c, 6)));
    const auto fwd = price_vanilla(r.terminal, Payoff::call, 0.0);
    EXPECT_LT(std::abs(fwd.price - c.params.s0), 3.0 * fwd.std_error);
}

TEST(PriceVanilla, ZeroStrikeAndParity)
{
    const auto c = base_config(500, 10);
    const auto r = simulate(c, smile(), StreamingNoise(plan_for(c, 7)));
    double mean_s = 0;
    for (double x : r.terminal.x) mean_s += std::exp(x);
    mean_s /= 500;
    EXPECT_NEAR(price_vanilla(r.terminal, Payoff::call, 0.0).price, mean_s, 1e-12 * mean_s);
    for (double k : {80.0, 100.0, 120.0}) {
        const double cp = price_vanilla(r.terminal, Payoff::call, k).price - price_vanilla(r.terminal, Payoff::put, k).price;
        EXPECT_NEAR(cp, mean_s - k, 1e-10 * mean_s);
    }
    ParticleEnsemble one;
    one.x = {4.6};
    one.v_raw = one.v_plus = {0.01};
    EXPECT_THROW(price_vanilla(one, Payoff::call, 100.0), ConfigError);
}

TEST(PriceVanilla, StandardErrorOracle)
{
    ParticleEnsemble e;
    e.x = {std::log(90.0), std::log(100.0), std::log(110.0), std::log(130.0)};
    e.v_raw = e.v_plus = std::vector<double>(4, 0.01);
    const auto p = price_vanilla(e, Payoff::call, 100.0);
    EXPECT_NEAR(p.price, 10.0, 1e-12);
    // Payoffs {0, 0, 10, 30}: sample sd = sqrt(((10)^2 + (10)^2 + 0 + (20)^2) / 3).
    EXPECT_NEAR(p.std_error, std::sqrt(600.0 / 3.0) / 2.0, 1e-10);
}
