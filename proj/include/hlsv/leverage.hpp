#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hlsv/errors.hpp"

namespace hlsv {

enum class KernelFamily { quartic, epanechnikov, gaussian };

enum class BandwidthRule {
    silverman_like, // s0 * N^(-1/5) in spot space, N^(-1/5) in log-spot space
    fixed,
};

enum class KernelSpace { spot, log_spot };

/// Kernel family plus bandwidth. `bandwidth` is the resolved epsilon; the rule
/// records how it was obtained so studies can re-resolve it per N.
struct KernelSpec {
    KernelFamily family = KernelFamily::quartic;
    BandwidthRule rule = BandwidthRule::silverman_like;
    double bandwidth = 1.0;

    bool compact() const { return family != KernelFamily::gaussian; }

    /// sup |K|.
    double sup_bound() const
    {
        switch (family) {
        case KernelFamily::quartic: return 15.0 / 16.0;
        case KernelFamily::epanechnikov: return 0.75;
        case KernelFamily::gaussian: return 1.0 / std::sqrt(2.0 * std::numbers::pi);
        }
        return 0.0;
    }

    /// sup |K'|.
    double lipschitz() const
    {
        switch (family) {
        case KernelFamily::quartic: return 2.5 / std::numbers::sqrt3; // at u^2 = 1/3
        case KernelFamily::epanechnikov: return 1.5;
        case KernelFamily::gaussian: return std::exp(-0.5) / std::sqrt(2.0 * std::numbers::pi);
        }
        return 0.0;
    }
};

/// The rule's scale is s0 in spot space and 1 in log-spot space.
inline KernelSpec resolve_bandwidth(KernelSpec spec, double s0, std::size_t n_particles,
                                    KernelSpace space = KernelSpace::spot)
{
    if (spec.rule == BandwidthRule::silverman_like) {
        const double scale = space == KernelSpace::spot ? s0 : 1.0;
        spec.bandwidth = scale * std::pow(static_cast<double>(n_particles), -0.2);
    }
    detail::require(spec.bandwidth > 0.0 && std::isfinite(spec.bandwidth),
                    "kernel.bandwidth must be finite and > 0");
    return spec;
}

enum class Normalisation { mean, raw_sums };

struct Regularisation {
    double delta = 0.01;
    KernelSpace space = KernelSpace::spot;
    Normalisation normalisation = Normalisation::raw_sums;

    void validate() const
    {
        detail::require(delta > 0.0 && std::isfinite(delta), "regularisation.delta must be > 0");
    }
};

template <KernelFamily F>
inline double kernel_value(double u) noexcept
{
    // max(1 - u^2, 0) is exactly the indicator form: |u| <= 1 iff u*u <= 1
    // under round-to-nearest. Branch-free so the query blocks vectorise.
    if constexpr (F == KernelFamily::quartic) {
        const double w = 1.0 - u * u;
        const double wp = w > 0.0 ? w : 0.0;
        return (15.0 / 16.0) * wp * wp;
    } else if constexpr (F == KernelFamily::epanechnikov) {
        const double w = 1.0 - u * u;
        return 0.75 * (w > 0.0 ? w : 0.0);
    } else {
        return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
    }
}

inline double kernel_eval(KernelFamily family, double u) noexcept
{
    switch (family) {
    case KernelFamily::quartic: return kernel_value<KernelFamily::quartic>(u);
    case KernelFamily::epanechnikov: return kernel_value<KernelFamily::epanechnikov>(u);
    case KernelFamily::gaussian: return kernel_value<KernelFamily::gaussian>(u);
    }
    return 0.0;
}

inline double kernel_eval(const KernelSpec& spec, double u) noexcept { return kernel_eval(spec.family, u); }

/// Coordinate in which kernel differences are taken.
inline double kernel_coordinate(double log_spot, KernelSpace space)
{
    return space == KernelSpace::spot ? std::exp(log_spot) : log_spot;
}

namespace detail {

// Every code path computes a particle's kernel weight with exactly this
// expression, so the summed terms are bit-identical between paths.
template <KernelFamily F>
inline double weight(double y_j, double y_query, double inv_bandwidth) noexcept
{
    return kernel_value<F>((y_j - y_query) * inv_bandwidth);
}

} // namespace detail

/// Unnormalised sums over the interacting particles.
struct KernelSums {
    double k = 0.0;  // sum_j K((y_j - y)/eps)
    double vk = 0.0; // sum_j V_j K((y_j - y)/eps)
};

/// `n_system` is the size of the particle system the ratio is used in. Under
/// raw sums a subsample of n_interacting < n_system particles stands in for
/// the system's empirical measure, so its sums are scaled by
/// n_system / n_interacting; with the full system the scale is exactly 1.
inline double ratio_from_sums(const KernelSums& s, std::size_t n_interacting, const Regularisation& reg,
                              std::size_t n_system = 0)
{
    if (reg.normalisation == Normalisation::mean) {
        const auto n = static_cast<double>(n_interacting);
        return (s.k / n + reg.delta) / (s.vk / n + reg.delta);
    }
    if (n_system > n_interacting) {
        const double scale = static_cast<double>(n_system) / static_cast<double>(n_interacting);
        return (scale * s.k + reg.delta) / (scale * s.vk + reg.delta);
    }
    return (s.k + reg.delta) / (s.vk + reg.delta);
}

namespace detail {

template <KernelFamily F>
KernelSums kernel_sums(double y, std::span<const double> ys, std::span<const double> vs, double inv_eps)
{
    KernelSums s;
    for (std::size_t j = 0; j < ys.size(); ++j) {
        const double w = weight<F>(ys[j], y, inv_eps);
        s.k += w;
        s.vk += vs[j] * w;
    }
    return s;
}

inline KernelSums kernel_sums(KernelFamily family, double y, std::span<const double> ys,
                              std::span<const double> vs, double inv_eps)
{
    switch (family) {
    case KernelFamily::quartic: return kernel_sums<KernelFamily::quartic>(y, ys, vs, inv_eps);
    case KernelFamily::epanechnikov: return kernel_sums<KernelFamily::epanechnikov>(y, ys, vs, inv_eps);
    case KernelFamily::gaussian: return kernel_sums<KernelFamily::gaussian>(y, ys, vs, inv_eps);
    }
    return {};
}

// The first n particles sorted by (y, V). Particles with equal (y, V)
// contribute equal terms, so sums taken in this order do not depend on how
// the particles are labelled.
struct Canonical {
    std::vector<double> y;
    std::vector<double> v;
};

inline Canonical canonical_order(std::span<const double> ys, std::span<const double> vs, std::size_t n)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ys[a] < ys[b] || (ys[a] == ys[b] && vs[a] < vs[b]);
    });
    Canonical c;
    c.y.resize(n);
    c.v.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        c.y[r] = ys[order[r]];
        c.v[r] = vs[order[r]];
    }
    return c;
}

} // namespace detail

/// Regularised Nadaraya-Watson ratio r = (m_K + delta) / (m_VK + delta) at
/// kernel coordinate y, over particles with kernel coordinates ys and
/// non-negative variances vs. Summation runs in canonical (y, V) order.
inline double nw_ratio(double y, std::span<const double> ys, std::span<const double> vs,
                       const KernelSpec& spec, const Regularisation& reg)
{
    detail::require(!ys.empty() && ys.size() == vs.size(), "nw_ratio: need N >= 1 matching X and V");
    const auto c = detail::canonical_order(ys, vs, ys.size());
    const auto sums = detail::kernel_sums(spec.family, y, c.y, c.v, 1.0 / spec.bandwidth);
    return ratio_from_sums(sums, ys.size(), reg);
}

struct LeverageCoeffs {
    double sigma = 0.0;
    double beta = 0.0;
};

/// sigma = sqrt(v) * sigma_Dup * sqrt(r), beta = -sigma^2 / 2.
inline LeverageCoeffs leverage_from_ratio(double v, double sigma_dup, double ratio) noexcept
{
    LeverageCoeffs c;
    c.sigma = std::sqrt(v) * sigma_dup * std::sqrt(ratio);
    c.beta = -0.5 * (c.sigma * c.sigma);
    return c;
}

/// Anything that evaluates sigma_Dup(t, e^x) from log-spot x.
template <class S>
concept SurfaceLike = requires(const S& s, double t, double x) {
    { s.eval(t, x) } -> std::convertible_to<double>;
    { s.at_floor(t) } -> std::convertible_to<bool>;
};

/// Coefficients for one particle state (x, v) against an ensemble given as
/// log-spots xs and truncated variances vs.
template <SurfaceLike Surface>
LeverageCoeffs leverage_coeffs(double t, double x, double v, std::span<const double> xs,
                               std::span<const double> vs, const Surface& surface,
                               const KernelSpec& spec, const Regularisation& reg)
{
    detail::require(v >= 0.0, "leverage_coeffs: v must be >= 0");
    std::vector<double> ys(xs.size());
    std::transform(xs.begin(), xs.end(), ys.begin(), [&](double xj) { return kernel_coordinate(xj, reg.space); });
    const double r = nw_ratio(kernel_coordinate(x, reg.space), ys, vs, spec, reg);
    return leverage_from_ratio(v, surface.eval(t, x), r);
}

enum class LeveragePath {
    reference, // O(N^2), all pairs
    windowed,  // sort-and-window, compact kernels only
};

struct LeverageField {
    std::vector<double> sigma;
    std::vector<double> beta;
    std::vector<double> ratio;
    std::size_t floor_hits = 0; // particles whose sigma_Dup sat on the clamp floor
};

namespace detail {

// Blocked over queries so the inner loop vectorises across queries while each
// query still accumulates its terms in the order given.
template <KernelFamily F>
void ratios_reference(std::span<const double> yq, std::span<const double> ys, std::span<const double> vs,
                      double inv_eps, std::size_t n_int, const Regularisation& reg, std::span<double> out)
{
    constexpr std::size_t B = 8;
    const std::size_t n = yq.size();
    const auto blocks = static_cast<std::int64_t>((n + B - 1) / B);
#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < blocks; ++b) {
        const std::size_t first = static_cast<std::size_t>(b) * B;
        const std::size_t count = std::min(B, n - first);
        if constexpr (F == KernelFamily::gaussian) {
            std::array<double, B> sk{};
            std::array<double, B> svk{};
            for (std::size_t j = 0; j < n_int; ++j) {
                for (std::size_t l = 0; l < count; ++l) {
                    const double w = weight<F>(ys[j], yq[first + l], inv_eps);
                    sk[l] += w;
                    svk[l] += vs[j] * w;
                }
            }
            for (std::size_t l = 0; l < count; ++l) out[first + l] = ratio_from_sums({sk[l], svk[l]}, n_int, reg, n);
        } else {
            // Lane-wise vector arithmetic: each lane performs exactly the
            // scalar weight() operations in the same order.
            using lanes = double __attribute__((vector_size(B * sizeof(double))));
            lanes q{};
            for (std::size_t l = 0; l < count; ++l) q[l] = yq[first + l];
            const lanes zero{};
            lanes sk{};
            lanes svk{};
            for (std::size_t j = 0; j < n_int; ++j) {
                const double vj = vs[j];
                const lanes u = (ys[j] - q) * inv_eps;
                const lanes w = 1.0 - u * u;
                const lanes wp = w > zero ? w : zero;
                lanes k;
                if constexpr (F == KernelFamily::quartic) k = (15.0 / 16.0) * wp * wp;
                else k = 0.75 * wp;
                sk += k;
                svk += vj * k;
            }
            for (std::size_t l = 0; l < count; ++l) out[first + l] = ratio_from_sums({sk[l], svk[l]}, n_int, reg, n);
        }
    }
}

// ys/vs must be in canonical order; the window is a contiguous slice of it.
template <KernelFamily F>
void ratios_windowed(std::span<const double> yq, std::span<const double> ys, std::span<const double> vs,
                     double bandwidth, double inv_eps, std::size_t n_int, const Regularisation& reg,
                     std::span<double> out)
{
    // Generous window: anything outside has |u| > 1 regardless of rounding.
    const double reach = bandwidth * (1.0 + 1e-9);
    const auto n = static_cast<std::int64_t>(yq.size());
    const auto first = ys.begin();
    const auto last = ys.begin() + static_cast<std::ptrdiff_t>(n_int);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const double y = yq[static_cast<std::size_t>(i)];
        const auto lo = static_cast<std::size_t>(std::lower_bound(first, last, y - reach) - first);
        const auto hi = static_cast<std::size_t>(std::upper_bound(first, last, y + reach) - first);
        KernelSums s;
        for (std::size_t j = lo; j < hi; ++j) {
            const double w = weight<F>(ys[j], y, inv_eps);
            s.k += w;
            s.vk += vs[j] * w;
        }
        out[static_cast<std::size_t>(i)] = ratio_from_sums(s, n_int, reg, yq.size());
    }
}

} // namespace detail

/// NW ratios for every particle. Only the first `n_interacting` particles
/// (0 = all) enter the sums; every particle is a query. Sums run in the
/// canonical (y, V) order, and both paths give bit-identical results.
inline std::vector<double> nw_ratios_all(std::span<const double> ys, std::span<const double> vs,
                                         const KernelSpec& spec, const Regularisation& reg,
                                         std::size_t n_interacting = 0,
                                         LeveragePath path = LeveragePath::reference)
{
    const std::size_t n = ys.size();
    detail::require(n >= 1 && vs.size() == n, "leverage: need N >= 1 matching X and V");
    const std::size_t n_int = n_interacting == 0 ? n : n_interacting;
    detail::require(n_int <= n, "leverage: interacting count exceeds ensemble size");
    std::vector<double> out(n);
    const double inv_eps = 1.0 / spec.bandwidth;
    const auto c = detail::canonical_order(ys, vs, n_int);
    if (path == LeveragePath::windowed) {
        detail::require(spec.compact(), "leverage: windowed path needs a compact-support kernel");
        if (spec.family == KernelFamily::quartic)
            detail::ratios_windowed<KernelFamily::quartic>(ys, c.y, c.v, spec.bandwidth, inv_eps, n_int, reg, out);
        else
            detail::ratios_windowed<KernelFamily::epanechnikov>(ys, c.y, c.v, spec.bandwidth, inv_eps, n_int, reg, out);
        return out;
    }
    switch (spec.family) {
    case KernelFamily::quartic:
        detail::ratios_reference<KernelFamily::quartic>(ys, c.y, c.v, inv_eps, n_int, reg, out);
        break;
    case KernelFamily::epanechnikov:
        detail::ratios_reference<KernelFamily::epanechnikov>(ys, c.y, c.v, inv_eps, n_int, reg, out);
        break;
    case KernelFamily::gaussian:
        detail::ratios_reference<KernelFamily::gaussian>(ys, c.y, c.v, inv_eps, n_int, reg, out);
        break;
    }
    return out;
}

/// leverage_coeffs at every particle against the (frozen) ensemble.
template <SurfaceLike Surface>
LeverageField leverage_all(double t, std::span<const double> xs, std::span<const double> vs,
                           const Surface& surface, const KernelSpec& spec, const Regularisation& reg,
                           std::size_t n_interacting = 0, LeveragePath path = LeveragePath::reference)
{
    const std::size_t n = xs.size();
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = kernel_coordinate(xs[i], reg.space);

    LeverageField f;
    f.ratio = nw_ratios_all(ys, vs, spec, reg, n_interacting, path);
    f.sigma.resize(n);
    f.beta.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double sd = surface.eval(t, xs[i]);
        if (surface.at_floor(sd)) ++f.floor_hits;
        const auto c = leverage_from_ratio(vs[i], sd, f.ratio[i]);
        f.sigma[i] = c.sigma;
        f.beta[i] = c.beta;
    }
    return f;
}

} // namespace hlsv
