#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "hlsv/cir.hpp"
#include "hlsv/errors.hpp"

namespace hlsv {

namespace detail {

using cplx = std::complex<double>;

// log(1 + w) / w without cancellation for small |w|.
inline cplx log1p_over(cplx w)
{
    if (std::abs(w) < 1e-3) return 1.0 - w * (0.5 - w * (1.0 / 3.0 - w * (0.25 - w * 0.2)));
    return std::log(1.0 + w) / w;
}

} // namespace detail

/// E[exp(i u ln S_T)] under zero-rate Heston dynamics, for complex u.
///
/// Uses the branch-stable "little trap" form with g = (b - d)/(b + d) and
/// exp(-dT), rewritten so nothing is divided by xi^2: (b - d)/xi^2 equals
/// -(iu + u^2)/(b + d). The xi -> 0 limit is therefore the deterministic
/// variance lognormal, without cancellation.
inline std::complex<double> heston_log_cf(const HestonParams& p, double T, std::complex<double> u)
{
    using detail::cplx;
    const cplx i{0.0, 1.0};
    const double xi2 = p.xi * p.xi;
    const cplx a = i * u + u * u;
    const cplx b = p.k - i * (p.rho * p.xi) * u;
    const cplx d = std::sqrt(b * b + xi2 * a);
    const cplx bpd = b + d;
    const cplx bmd_xi2 = -a / bpd;
    const cplx g = xi2 * bmd_xi2 / bpd;
    const cplx e = std::exp(-d * T);
    const cplx var_coef = bmd_xi2 * (1.0 - e) / (1.0 - g * e);
    const cplx w_xi2 = bmd_xi2 / bpd * (1.0 - e) / (1.0 - g);
    const cplx log_term = w_xi2 * detail::log1p_over(xi2 * w_xi2);
    const cplx mean_rev = p.k * p.theta * (bmd_xi2 * T - 2.0 * log_term);
    return std::exp(i * u * p.x0() + mean_rev + p.v0 * var_coef);
}

/// The two exercise probabilities of the standard Fourier representation,
/// C = s0 * P1 - K * P2, with the absolute quadrature error estimates.
struct HestonProbabilities {
    double p1 = 0.0;
    double p2 = 0.0;
    double err1 = 0.0;
    double err2 = 0.0;
};

inline HestonProbabilities heston_probabilities(const HestonParams& p, double T, double K)
{
    using detail::cplx;
    detail::require(T > 0.0, "heston: maturity must be > 0");
    detail::require(K > 0.0, "heston: strike must be > 0");
    p.validate();

    const double log_k = std::log(K);
    const cplx i{0.0, 1.0};
    // Integrands are finite at u = 0; keep the evaluation point off the pole.
    constexpr double u_min = 1e-12;

    auto integrand_p2 = [&](double u) {
        u = std::max(u, u_min);
        return std::real(std::exp(-i * u * log_k) * heston_log_cf(p, T, cplx{u, 0.0}) / (i * u));
    };
    auto integrand_p1 = [&](double u) {
        u = std::max(u, u_min);
        return std::real(std::exp(-i * u * log_k) * heston_log_cf(p, T, cplx{u, -1.0}) /
                         (i * u * p.s0));
    };

    using Quad = boost::math::quadrature::gauss_kronrod<double, 61>;
    constexpr double inf = std::numeric_limits<double>::infinity();
    HestonProbabilities out;
    const double i1 = Quad::integrate(integrand_p1, 0.0, inf, 15, 1e-11, &out.err1);
    const double i2 = Quad::integrate(integrand_p2, 0.0, inf, 15, 1e-11, &out.err2);
    out.p1 = 0.5 + i1 / std::numbers::pi;
    out.p2 = 0.5 + i2 / std::numbers::pi;
    out.err1 /= std::numbers::pi;
    out.err2 /= std::numbers::pi;
    return out;
}

inline constexpr double kPricerTolerance = 1e-8;

namespace detail {

inline void check_quadrature(const HestonParams& p, double K, const HestonProbabilities& pr)
{
    const double achieved = p.s0 * pr.err1 + K * pr.err2;
    if (!(achieved <= kPricerTolerance) || !std::isfinite(pr.p1) || !std::isfinite(pr.p2)) {
        throw NumericalError("heston: quadrature did not converge, achieved error estimate " +
                             std::to_string(achieved));
    }
}

} // namespace detail

/// Undiscounted (zero-rate) Heston call price.
inline double heston_call(const HestonParams& p, double T, double K)
{
    const auto pr = heston_probabilities(p, T, K);
    detail::check_quadrature(p, K, pr);
    return p.s0 * pr.p1 - K * pr.p2;
}

/// Put from the same two probabilities.
inline double heston_put(const HestonParams& p, double T, double K)
{
    const auto pr = heston_probabilities(p, T, K);
    detail::check_quadrature(p, K, pr);
    return K * (1.0 - pr.p2) - p.s0 * (1.0 - pr.p1);
}

} // namespace hlsv
