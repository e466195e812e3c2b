#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "hlsv/dupire.hpp"
#include "hlsv/experiments.hpp"

using namespace hlsv;

namespace {

using Points = std::vector<std::pair<double, double>>;

LocalVolSurface smile()
{
    return LocalVolSurface({0.25, 1.0}, {70, 100, 130}, {0.16, 0.1, 0.12, 0.14, 0.11, 0.13}, 0.01, 5.0, 10.0);
}

SimConfig small_config(std::size_t n, std::size_t m)
{
    SimConfig c;
    c.n_particles = n;
    c.steps = m;
    c.kernel = resolve_bandwidth(c.kernel, c.params.s0, n);
    return c;
}

} // namespace

TEST(FitLogLog, ExactPowerLaw)
{
    Points p;
    for (double x : {16.0, 32.0, 64.0, 128.0, 256.0}) p.emplace_back(x, 3.0 * std::pow(x, -0.5));
    const auto f = fit_loglog(p);
    EXPECT_NEAR(f.slope, -0.5, 1e-12);
    EXPECT_NEAR(f.intercept, std::log(3.0), 1e-12);
    EXPECT_LT(f.ci95_high - f.ci95_low, 1e-10);
    EXPECT_EQ(f.n, 5u);
}

TEST(FitLogLog, ThreeCollinearPoints)
{
    const Points p{{1.0, std::exp(2.0)}, {std::exp(1.0), std::exp(0.5)}, {std::exp(2.0), std::exp(-1.0)}};
    const auto f = fit_loglog(p);
    EXPECT_NEAR(f.slope, -1.5, 1e-14);
    EXPECT_NEAR(f.slope_stderr, 0.0, 1e-12);
}

TEST(FitLogLog, CiCoverage)
{
    std::mt19937_64 gen(2024);
    std::normal_distribution<double> z(0.0, 0.1);
    int covered = 0;
    for (int rep = 0; rep < 100; ++rep) {
        Points p;
        for (int k = 4; k <= 10; ++k) {
            const double x = std::ldexp(1.0, k);
            p.emplace_back(x, 0.7 * std::pow(x, -0.5) * std::exp(z(gen)));
        }
        const auto f = fit_loglog(p);
        covered += f.ci95_low <= -0.5 && -0.5 <= f.ci95_high;
    }
    EXPECT_GE(covered, 90);
}

TEST(FitLogLog, StudentTQuantileOracle)
{
    // Residuals +-e around a known line: slope stderr sqrt(sse / (n-2) / sxx), t_{0.975,2} = 4.302652729749464.
    const double e = 0.01;
    const Points p{{1.0, std::exp(e)}, {std::exp(1.0), std::exp(-1.0 - 2 * e)}, {std::exp(2.0), std::exp(-2.0 + e)},
                   {std::exp(3.0), std::exp(-3.0)}};
    const auto f = fit_loglog(p);
    const double half = (f.ci95_high - f.ci95_low) / 2;
    EXPECT_NEAR(half / f.slope_stderr, 4.302652729749464, 1e-9);
}

TEST(FitLogLog, RejectsDegenerate)
{
    EXPECT_THROW(fit_loglog(Points{{2.0, 1.0}, {2.0, 0.5}, {2.0, 0.3}}), ConfigError);
    EXPECT_THROW(fit_loglog(Points{{1.0, 1.0}, {2.0, 0.5}}), ConfigError);
    EXPECT_THROW(fit_loglog(Points{{1.0, 1.0}, {2.0, 0.0}, {3.0, 0.1}}), ConfigError);
}

TEST(ChaosStudy, IdentityLeverageIsExactlyZero)
{
    auto c = small_config(16, 10);
    c.leverage = LeverageMode::identity;
    const auto rep = chaos_study(c, smile(), ChaosStudySpec{{8, 16, 32}, {1, 2}});
    ASSERT_EQ(rep.rows.size(), 6u);
    for (const auto& r : rep.rows) EXPECT_EQ(r.rmse, 0.0);
    EXPECT_FALSE(rep.warnings.empty());
}

TEST(ChaosStudy, LargeDeltaSuppressesInteraction)
{
    std::vector<double> err;
    for (double delta : {0.01, 1.0, 100.0}) {
        auto c = small_config(64, 20);
        c.reg.delta = delta;
        const auto rep = chaos_study(c, smile(), ChaosStudySpec{{64}, {1, 2, 3}});
        err.push_back(rep.points[0].second);
    }
    EXPECT_GT(err[0], err[1]);
    EXPECT_GT(err[1], err[2]);
    EXPECT_GT(err[2], 0.0);
}

TEST(ChaosStudy, RejectsBadLists)
{
    const auto c = small_config(16, 4);
    EXPECT_THROW(chaos_study(c, smile(), ChaosStudySpec{{1, 4}, {1}}), ConfigError);
    EXPECT_THROW(chaos_study(c, smile(), ChaosStudySpec{{8, 4}, {1}}), ConfigError);
    EXPECT_THROW(chaos_study(c, smile(), ChaosStudySpec{{}, {1}}), ConfigError);
}

TEST(StrongStudy, SmallRunIsPositiveDecreasingAndDeterministic)
{
    const auto c = small_config(64, 4);
    const TimeStudySpec spec{{8, 16, 32, 64}, 1024, {1, 2, 3}, ErrorMetric::sup_grid};
    const auto a = strong_convergence_study(c, smile(), spec);
    ASSERT_EQ(a.rows.size(), 12u);
    const auto med = a.median_rmse();
    ASSERT_EQ(med.size(), 4u);
    for (std::size_t i = 0; i + 1 < med.size(); ++i) EXPECT_GT(med[i], med[i + 1]);
    EXPECT_GT(med.back(), 0.0);
    EXPECT_GT(a.rate, 0.2);
    const auto b = strong_convergence_study(c, smile(), spec);
    for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].rmse, b.rows[i].rmse);
    EXPECT_EQ(a.fit.slope, b.fit.slope);
    EXPECT_EQ(a.fit.ci95_low, b.fit.ci95_low);
}

TEST(StrongStudy, TerminalMetricBelowSupMetric)
{
    const auto c = small_config(32, 4);
    const auto sup = strong_convergence_study(c, smile(), TimeStudySpec{{4, 8, 16}, 64, {1}, ErrorMetric::sup_grid});
    const auto term = strong_convergence_study(c, smile(), TimeStudySpec{{4, 8, 16}, 64, {1}, ErrorMetric::terminal});
    for (std::size_t i = 0; i < sup.rows.size(); ++i) EXPECT_LE(term.rows[i].rmse, sup.rows[i].rmse);
}

TEST(StrongStudy, RejectsBadGrids)
{
    const auto c = small_config(8, 4);
    EXPECT_THROW(strong_convergence_study(c, smile(), TimeStudySpec{{4, 6}, 64, {1}, ErrorMetric::sup_grid}), ConfigError);
    EXPECT_THROW(strong_convergence_study(c, smile(), TimeStudySpec{{4, 32}, 64, {1}, ErrorMetric::sup_grid}), ConfigError);
    EXPECT_THROW(strong_convergence_study(c, smile(), TimeStudySpec{{8, 4}, 64, {1}, ErrorMetric::sup_grid}), ConfigError);
}

TEST(CirStudy, ReferenceResolutionHasZeroError)
{
    HestonParams p;
    p.k = 18;
    const auto rep = cir_order_study(p, CirStudySpec{{64, 256, 1024}, 1024, 200, 1.0, {1}});
    ASSERT_EQ(rep.rows.size(), 3u);
    EXPECT_EQ(rep.rows[2].rmse, 0.0);
    EXPECT_GT(rep.rows[0].rmse, rep.rows[1].rmse);
}

TEST(CirStudy, DeterministicLimitIsFirstOrder)
{
    HestonParams p;
    p.xi = 1e-8;
    p.v0 = 0.04;
    p.theta = 0.01;
    p.k = 3.0;
    const auto rep = cir_order_study(p, CirStudySpec{{16, 32, 64, 128, 256}, 4096, 50, 1.0, {1}});
    EXPECT_GE(rep.rate, 0.9);
    EXPECT_LE(rep.rate, 1.1);
}

TEST(CirStudy, WarnsBelowFellerThree)
{
    HestonParams p; // nu = 0.33
    const auto rep = cir_order_study(p, CirStudySpec{{16, 32, 64}, 256, 50, 1.0, {1}});
    ASSERT_FALSE(rep.warnings.empty());
    EXPECT_NE(rep.warnings[0].find("Feller"), std::string::npos);
}
