#include <cmath>
#include <limits>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <gtest/gtest.h>

#include "hlsv/cir.hpp"
#include "hlsv/noise.hpp"

using namespace hlsv;

namespace {

HestonParams preset(double k, double xi)
{
    HestonParams p;
    p.k = k;
    p.xi = xi;
    return p;
}

// Blow-up time of psi' = lambda - k psi + xi^2 psi^2 / 2, psi(0) = 0, as the
// integral of dpsi over the quadratic on [0, inf).
double riccati_blowup(double k, double xi, double lambda)
{
    boost::math::quadrature::exp_sinh<double> integrator;
    auto f = [&](double psi) { return 1.0 / (lambda - k * psi + 0.5 * xi * xi * psi * psi); };
    return integrator.integrate(f, 0.0, std::numeric_limits<double>::infinity());
}

} // namespace

TEST(HestonParams, ValidationNamesField)
{
    HestonParams p;
    EXPECT_NO_THROW(p.validate());
    p.rho = 1.0;
    try {
        p.validate("params.");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("params.rho"), std::string::npos);
    }
    for (double HestonParams::*field : {&HestonParams::k, &HestonParams::theta, &HestonParams::xi,
                                        &HestonParams::v0, &HestonParams::s0}) {
        HestonParams q;
        q.*field = 0.0;
        EXPECT_THROW(q.validate(), ConfigError);
    }
}

TEST(Feller, PublishedRatios)
{
    EXPECT_NEAR(feller_ratio(preset(1.5, 0.3)).nu, 0.33, 0.005);
    EXPECT_NEAR(feller_ratio(preset(18, 0.3)).nu, 4.00, 0.005);
    const auto lo = feller_ratio(preset(1.5, 0.3));
    EXPECT_FALSE(lo.feller_holds);
    const auto hi = feller_ratio(preset(18, 0.3));
    EXPECT_TRUE(hi.feller_holds);
    EXPECT_TRUE(hi.above_three);
    EXPECT_TRUE(hi.above_nu_star);
    EXPECT_DOUBLE_EQ(hi.nu_star, 2.0 + std::sqrt(3.0));
}

TEST(Feller, BoundaryIsOne)
{
    HestonParams p = preset(2.0, 0.2);
    p.theta = p.xi * p.xi / (2.0 * p.k);
    const auto f = feller_ratio(p);
    EXPECT_DOUBLE_EQ(f.nu, 1.0);
    EXPECT_TRUE(f.feller_holds);
    EXPECT_FALSE(f.above_three);
}

TEST(CriticalTime, InfiniteBranch)
{
    const auto t = critical_time(preset(1.5, 0.3), 10.0);
    EXPECT_FALSE(t.is_finite());
    EXPECT_EQ(t.to_string(), "inf");
    EXPECT_TRUE(t.exceeds(1e300));
    EXPECT_THROW(t.value(), std::logic_error);
    EXPECT_FALSE(critical_time(preset(1.5, 0.3), 1e-9).is_finite());
    EXPECT_THROW(critical_time(preset(1.5, 0.3), 0.0), ConfigError);
}

TEST(CriticalTime, MatchesRiccatiQuadrature)
{
    const auto t = critical_time(preset(1.5, 0.3), 50.0);
    ASSERT_TRUE(t.is_finite());
    EXPECT_NEAR(t.value(), 1.61, 0.005);
    EXPECT_NEAR(t.value(), riccati_blowup(1.5, 0.3, 50.0), 1e-9);
    for (double lambda : {12.6, 20.0, 200.0}) {
        for (double k : {1.5, 6.0}) {
            const auto tk = critical_time(preset(k, 0.3), lambda);
            if (!tk.is_finite()) continue;
            EXPECT_NEAR(tk.value(), riccati_blowup(k, 0.3, lambda), 1e-8 * tk.value()) << k << " " << lambda;
        }
    }
}

TEST(FteStep, Examples)
{
    const HestonParams p = preset(1.5, 0.3);
    EXPECT_EQ(fte_step(p.theta, 0.01, p, 0.0), p.theta);
    EXPECT_DOUBLE_EQ(fte_step(-0.05, 0.01, p, 0.7), -0.05 + p.k * p.theta * 0.01);
    EXPECT_DOUBLE_EQ(fte_step(0.0094, 0.01, p, 0.02), 0.0094 + 1.5 * 0.0006 * 0.01 + 0.3 * std::sqrt(0.0094) * 0.02);
}

TEST(CirMean, Oracle)
{
    const HestonParams p = preset(1.5, 0.3);
    EXPECT_EQ(cir_mean_oracle(p, 0.0), p.v0);
    EXPECT_NEAR(cir_mean_oracle(p, 1e3), p.theta, 1e-15);
    EXPECT_DOUBLE_EQ(cir_mean_oracle(p, 1.0), 0.01 - 0.0006 * std::exp(-1.5));
    EXPECT_THROW(cir_mean_oracle(p, -1.0), ConfigError);
}

TEST(SimulateFte, FinitePathsForAllPresets)
{
    for (auto [k, xi] : {std::pair{1.5, 0.3}, {6.0, 0.3}, {18.0, 0.3}, {1.5, 0.1}, {1.5, 0.5}, {1.5, 0.8}}) {
        const HestonParams p = preset(k, xi);
        const StreamingNoise noise(NoisePlan{3, 2000, p.rho, 200, 1.0, {}});
        bool finite = true;
        simulate_fte(p, noise, [&](std::size_t, std::span<const double> v) {
            for (double x : v) finite = finite && std::isfinite(x);
        });
        EXPECT_TRUE(finite) << "k=" << k << " xi=" << xi;
    }
}

TEST(SimulateFte, MeanWithinThreeStandardErrors)
{
    const HestonParams p = preset(1.5, 0.3);
    const std::size_t n = 40000;
    const StreamingNoise noise(NoisePlan{17, n, p.rho, 100, 1.0, {}});
    const auto v = simulate_fte(p, noise);
    double s = 0, ss = 0;
    for (double x : v) {
        s += x;
        ss += x * x;
    }
    const double mean = s / n;
    const double se = std::sqrt((ss / n - mean * mean) / (n - 1));
    EXPECT_LT(std::abs(mean - cir_mean_oracle(p, 1.0)), 3.0 * se);
}

TEST(SimulateFte, MatchesHandRolledSteps)
{
    const HestonParams p = preset(18, 0.3);
    const NoisePlan plan{5, 4, p.rho, 10, 1.0, {}};
    const auto block = generate(plan);
    const auto v = simulate_fte(p, block);
    for (std::size_t i = 0; i < 4; ++i) {
        double x = p.v0;
        for (std::size_t m = 0; m < 10; ++m) x = x + p.k * (p.theta - std::max(x, 0.0)) * 0.1 + p.xi * std::sqrt(std::max(x, 0.0)) * block.dwv(i, m);
        EXPECT_EQ(v[i], x);
    }
}
