#pragma once

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hlsv/errors.hpp"
#include "hlsv/noise.hpp"

namespace hlsv {

/// Heston-type model parameters: CIR variance dV = k(theta - V)dt + xi sqrt(V) dW^v,
/// spot correlation rho, initial state (s0, v0).
struct HestonParams {
    double k = 1.5;
    double theta = 0.01;
    double xi = 0.3;
    double rho = -0.1;
    double v0 = 0.0094;
    double s0 = 100.0;

    double x0() const { return std::log(s0); }

    /// Throws ConfigError naming the offending field; `prefix` is prepended
    /// (e.g. "params.") so config errors point at the key.
    void validate(const std::string& prefix = "") const
    {
        auto positive = [&](double value, const char* name) {
            detail::require(std::isfinite(value) && value > 0.0,
                            prefix + name + " must be finite and > 0");
        };
        positive(k, "kappa");
        positive(theta, "theta");
        positive(xi, "xi");
        positive(v0, "v0");
        positive(s0, "s0");
        detail::require(std::isfinite(rho) && std::abs(rho) < 1.0,
                        prefix + "rho must lie strictly inside (-1, 1)");
    }
};

inline constexpr double kNuStar = 2.0 + std::numbers::sqrt3;

struct FellerInfo {
    double nu = 0.0;
    double nu_star = kNuStar;
    bool feller_holds = false;    // nu >= 1: paths stay strictly positive
    bool above_three = false;     // nu > 3: FTE strong order 1/2
    bool above_nu_star = false;   // nu > 2 + sqrt(3)
};

inline FellerInfo feller_ratio(const HestonParams& p)
{
    FellerInfo info;
    info.nu = 2.0 * p.k * p.theta / (p.xi * p.xi);
    info.feller_holds = info.nu >= 1.0;
    info.above_three = info.nu > 3.0;
    info.above_nu_star = info.nu > kNuStar;
    return info;
}

/// A time that may be +infinity, carried as an explicit tag.
class ExtendedTime {
public:
    static ExtendedTime infinite() { return ExtendedTime{}; }
    static ExtendedTime finite(double t) { return ExtendedTime{t}; }

    bool is_finite() const { return finite_; }
    double value() const
    {
        if (!finite_) throw std::logic_error("ExtendedTime: value() of infinite time");
        return value_;
    }
    bool exceeds(double t) const { return !finite_ || value_ > t; }

    std::string to_string() const;

private:
    ExtendedTime() = default;
    explicit ExtendedTime(double t) : finite_(true), value_(t) {}

    bool finite_ = false;
    double value_ = 0.0;
};

inline std::string ExtendedTime::to_string() const
{
    if (!finite_) return "inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", value_);
    return buf;
}

/// Horizon below which E[exp(lambda * int_0^T V dt)] is finite.
inline ExtendedTime critical_time(const HestonParams& p, double lambda)
{
    detail::require(lambda > 0.0, "critical_time: lambda must be > 0");
    const double disc = 2.0 * lambda * p.xi * p.xi - p.k * p.k;
    if (disc <= 0.0) return ExtendedTime::infinite();
    const double root = std::sqrt(disc);
    return ExtendedTime::finite(2.0 / root * (std::numbers::pi / 2.0 + std::atan(p.k / root)));
}

inline double positive_part(double v) noexcept { return v > 0.0 ? v : 0.0; }

/// One full-truncation Euler step. Returns the raw (possibly negative) state;
/// drift and diffusion only ever see max(v, 0).
inline double fte_step(double v, double dt, const HestonParams& p, double dwv) noexcept
{
    const double vp = positive_part(v);
    return v + p.k * (p.theta - vp) * dt + p.xi * std::sqrt(vp) * dwv;
}

/// E[V_t] for the exact CIR process.
inline double cir_mean_oracle(const HestonParams& p, double t)
{
    detail::require(t >= 0.0, "cir_mean_oracle: t must be >= 0");
    return p.theta + (p.v0 - p.theta) * std::exp(-p.k * t);
}

/// FTE variance paths for every row of an increment source (only dWv is used).
/// Returns raw terminal states. `on_step(m, raw)` is invoked after each step
/// when provided.
template <IncrementSource Source, class OnStep>
std::vector<double> simulate_fte(const HestonParams& p, const Source& noise, OnStep&& on_step)
{
    const std::size_t n = noise.particles();
    std::vector<double> v(n, p.v0);
    std::vector<double> dwx(n), dwv(n);
    const double dt = noise.dt();
    for (std::size_t m = 0; m < noise.steps(); ++m) {
        noise.fill_step(m, dwx, dwv);
        for (std::size_t i = 0; i < n; ++i) v[i] = fte_step(v[i], dt, p, dwv[i]);
        on_step(m + 1, std::span<const double>(v));
    }
    return v;
}

template <IncrementSource Source>
std::vector<double> simulate_fte(const HestonParams& p, const Source& noise)
{
    return simulate_fte(p, noise, [](std::size_t, std::span<const double>) {});
}

} // namespace hlsv
