#include <cmath>
#include <complex>
#include <numbers>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <gtest/gtest.h>

#include "hlsv/config.hpp"
#include "hlsv/heston_pricer.hpp"

using namespace hlsv;
using cplx = std::complex<double>;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double bs_call(double s, double k, double sigma, double t)
{
    const double sd = sigma * std::sqrt(t);
    const double d1 = (std::log(s / k) + 0.5 * sd * sd) / sd;
    return s * normal_cdf(d1) - k * normal_cdf(d1 - sd);
}

// Log-return characteristic function from RK4 on the affine Riccati system
// B' = xi^2 B^2 / 2 + (i rho xi u - k) B - (u^2 + i u) / 2, A' = k theta B.
// The step count grows with |u| to keep h * |dB'/dB| small.
cplx riccati_cf(const HestonParams& p, double t, cplx u)
{
    const cplx i{0.0, 1.0};
    auto rhs = [&](cplx b) { return 0.5 * p.xi * p.xi * b * b + (i * p.rho * p.xi * u - p.k) * b - 0.5 * (u * u + i * u); };
    const int steps = 400 + static_cast<int>(40.0 * t * (p.k + (1.0 + p.xi) * std::abs(u)));
    const double h = t / steps;
    cplx a = 0.0, b = 0.0;
    for (int s = 0; s < steps; ++s) {
        const cplx k1 = rhs(b);
        const cplx k2 = rhs(b + 0.5 * h * k1);
        const cplx k3 = rhs(b + 0.5 * h * k2);
        const cplx k4 = rhs(b + h * k3);
        a += p.k * p.theta * h * (b + 2.0 * (b + 0.5 * h * k1) + 2.0 * (b + 0.5 * h * k2) + (b + h * k3)) / 6.0;
        b += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
    }
    return std::exp(a + b * p.v0);
}

// Single-integral call price along Im u = -1/2 on [0, inf) by exp-sinh.
double lewis_call(const HestonParams& p, double t, double strike)
{
    const double x = std::log(p.s0 / strike);
    auto f = [&](double u) {
        if (u > 2e4) return 0.0;
        const cplx z{u, -0.5};
        return std::real(std::exp(cplx{0.0, u * x}) * riccati_cf(p, t, z)) / (u * u + 0.25);
    };
    boost::math::quadrature::exp_sinh<double> integrator;
    const double s = integrator.integrate(f, 1e-12);
    return p.s0 - std::sqrt(p.s0 * strike) / std::numbers::pi * s;
}

HestonParams market()
{
    HestonParams p = market_preset();
    return p;
}

} // namespace

TEST(HestonCall, DegenerateMatchesBlackScholes)
{
    HestonParams p;
    p.v0 = p.theta = 0.04;
    p.xi = 1e-9;
    p.k = 1.0;
    for (double k : {80.0, 100.0, 120.0})
        EXPECT_NEAR(heston_call(p, 1.0, k), bs_call(100.0, k, 0.2, 1.0), 1e-6) << k;
    EXPECT_NEAR(heston_call(p, 0.25, 90.0), bs_call(100.0, 90.0, 0.2, 0.25), 1e-6);
}

TEST(HestonCall, PutCallParity)
{
    const HestonParams p = market();
    for (double t : {0.1, 0.5, 1.0}) {
        for (double k = 50.0; k <= 200.0; k += 10.0)
            EXPECT_NEAR(heston_call(p, t, k) - heston_put(p, t, k), p.s0 - k, 1e-8) << t << " " << k;
    }
}

TEST(HestonCall, DeepInTheMoneyLimit)
{
    const HestonParams p = market();
    EXPECT_NEAR(heston_call(p, 1.0, 1e-6), p.s0, 1e-5);
}

TEST(HestonCall, MatchesRiccatiLewisOracle)
{
    for (auto [k, xi] : {std::pair{1.4124, 0.2988}, {1.5, 0.8}, {18.0, 0.3}}) {
        HestonParams p = market();
        p.k = k;
        p.xi = xi;
        for (double t : {0.2, 1.0}) {
            for (double strike : {70.0, 100.0, 140.0})
                EXPECT_NEAR(heston_call(p, t, strike), lewis_call(p, t, strike), 2e-7)
                    << "k=" << k << " xi=" << xi << " T=" << t << " K=" << strike;
        }
    }
}

TEST(HestonCall, CharacteristicFunctionNormalisation)
{
    const HestonParams p = market();
    EXPECT_NEAR(std::abs(heston_log_cf(p, 1.0, cplx{0.0, 0.0}) - 1.0), 0.0, 1e-14);
    // E[S_T] = s0 under zero rates.
    EXPECT_NEAR(std::real(heston_log_cf(p, 1.0, cplx{0.0, -1.0})), p.s0, 1e-10);
}

TEST(HestonCall, RejectsBadInputs)
{
    const HestonParams p = market();
    EXPECT_THROW(heston_call(p, 0.0, 100.0), ConfigError);
    EXPECT_THROW(heston_call(p, 1.0, 0.0), ConfigError);
}
