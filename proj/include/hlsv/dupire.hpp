#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "hlsv/errors.hpp"
#include "hlsv/heston_pricer.hpp"

namespace hlsv {

/// Zero-rate call prices on a (maturity, strike) grid, stored row-major by
/// maturity.
struct CallGrid {
    std::vector<double> maturities;
    std::vector<double> strikes;
    std::vector<double> prices;
    double s0 = 0.0;
    std::size_t repaired_nodes = 0; // nodes moved by the convexity projection

    double price(std::size_t i_t, std::size_t j_k) const { return prices[i_t * strikes.size() + j_k]; }
    double& price(std::size_t i_t, std::size_t j_k) { return prices[i_t * strikes.size() + j_k]; }
};

/// Evenly spaced inclusive range, `lo + j * step` while <= hi (with a little
/// slack so the upper end survives rounding).
inline std::vector<double> linspace_step(double lo, double hi, double step)
{
    detail::require(step > 0.0 && hi >= lo, "grid range: need step > 0 and hi >= lo");
    std::vector<double> out;
    const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    out.reserve(count);
    for (std::size_t j = 0; j < count; ++j) out.push_back(lo + static_cast<double>(j) * step);
    return out;
}

namespace detail {

inline void require_ascending(std::span<const double> xs, const std::string& name)
{
    require(!xs.empty(), name + " must not be empty");
    for (std::size_t j = 1; j < xs.size(); ++j)
        require(xs[j] > xs[j - 1], name + " must be strictly ascending");
}

inline double second_difference(std::span<const double> k, std::span<const double> c, std::size_t j)
{
    const double hm = k[j] - k[j - 1];
    const double hp = k[j + 1] - k[j];
    return 2.0 * ((c[j + 1] - c[j]) / hp - (c[j] - c[j - 1]) / hm) / (hp + hm);
}

// Butterfly value scaled to price units: the weighted second difference.
inline double butterfly(std::span<const double> k, std::span<const double> c, std::size_t j)
{
    const double hm = k[j] - k[j - 1];
    const double hp = k[j + 1] - k[j];
    return second_difference(k, c, j) * hm * hp / 2.0;
}

} // namespace detail

/// Checks bounds, monotonicity and convexity of each maturity slice within
/// `tol`. Returns a description of the first violation or an empty string.
inline std::string check_call_grid(const CallGrid& g, double tol)
{
    const std::size_t nk = g.strikes.size();
    char buf[160];
    for (std::size_t i = 0; i < g.maturities.size(); ++i) {
        std::span<const double> row(g.prices.data() + i * nk, nk);
        for (std::size_t j = 0; j < nk; ++j) {
            const double lower = std::max(g.s0 - g.strikes[j], 0.0);
            if (row[j] < lower - tol || row[j] > g.s0 + tol) {
                std::snprintf(buf, sizeof(buf), "price bound violated at T=%g K=%g", g.maturities[i],
                              g.strikes[j]);
                return buf;
            }
            if (j > 0 && row[j] > row[j - 1] + tol) {
                std::snprintf(buf, sizeof(buf), "price increasing in strike at T=%g K=%g",
                              g.maturities[i], g.strikes[j]);
                return buf;
            }
            if (j > 0 && j + 1 < nk && detail::butterfly(g.strikes, row, j) < -tol) {
                std::snprintf(buf, sizeof(buf), "butterfly arbitrage at T=%g K=%g", g.maturities[i],
                              g.strikes[j]);
                return buf;
            }
        }
    }
    return {};
}

/// Default butterfly tolerance / Dupire denominator floor.
inline double default_tol_butterfly(double s0) { return 1e-8 * s0 * s0; }

/// Prices the grid with the Heston Fourier pricer. Convexity violations
/// beyond `tol` get one projection pass (the offending node is replaced by
/// the chord of its neighbours); anything still violated afterwards throws.
inline CallGrid build_call_grid(const HestonParams& params, std::vector<double> maturities,
                                std::vector<double> strikes, double tol = -1.0)
{
    params.validate();
    detail::require_ascending(maturities, "maturities");
    detail::require_ascending(strikes, "strikes");
    detail::require(maturities.front() > 0.0, "maturities must be > 0");
    detail::require(strikes.front() > 0.0, "strikes must be > 0");
    if (tol < 0.0) tol = default_tol_butterfly(params.s0);

    CallGrid g;
    g.maturities = std::move(maturities);
    g.strikes = std::move(strikes);
    g.s0 = params.s0;
    const std::size_t nt = g.maturities.size();
    const std::size_t nk = g.strikes.size();
    g.prices.resize(nt * nk);
    for (std::size_t i = 0; i < nt; ++i)
        for (std::size_t j = 0; j < nk; ++j)
            g.price(i, j) = heston_call(params, g.maturities[i], g.strikes[j]);

    for (std::size_t i = 0; i < nt; ++i) {
        std::span<double> row(g.prices.data() + i * nk, nk);
        for (std::size_t j = 1; j + 1 < nk; ++j) {
            if (detail::butterfly(g.strikes, row, j) >= -tol) continue;
            const double w = (g.strikes[j] - g.strikes[j - 1]) / (g.strikes[j + 1] - g.strikes[j - 1]);
            row[j] = (1.0 - w) * row[j - 1] + w * row[j + 1];
            ++g.repaired_nodes;
        }
    }
    if (g.repaired_nodes > 0) {
        std::fprintf(stderr, "build_call_grid: convexity projection moved %zu node(s)\n",
                     g.repaired_nodes);
    }
    if (auto why = check_call_grid(g, tol); !why.empty())
        throw NumericalError("irreparable call grid arbitrage: " + why);
    return g;
}

struct SurfaceOptions {
    double sigma_lo = 0.01;
    double sigma_hi = 5.0;
    double tol_butterfly = -1.0; // < 0: 1e-8 * s0^2
    double calendar_tol = -1.0;  // < 0: 1e-8 * s0, price per unit time
    double lipschitz_cap = 10.0; // |d sigma / d log K| at spline nodes
    // Nodes with a floored denominator or a value below sigma_lo take the
    // value of the nearest reliable node of the same maturity.
    bool fill_unreliable = true;
};

struct SurfaceDiagnostics {
    std::size_t calendar_violations = 0;
    std::size_t floored_denominators = 0;
    std::size_t clamped_low = 0;
    std::size_t clamped_high = 0;
    std::size_t filled_nodes = 0;
};

/// Gridded Dupire local volatility sigma(t, K), monotone cubic Hermite in K,
/// linear in t, clamped. Flat beyond the strike range and after the last
/// maturity; before the first maturity the first two rows are extended
/// linearly.
class LocalVolSurface {
public:
    using Diagnostics = SurfaceDiagnostics;

    LocalVolSurface(std::vector<double> maturities, std::vector<double> strikes,
                    std::vector<double> sigma, double sigma_lo, double sigma_hi,
                    double lipschitz_cap, Diagnostics diagnostics = {})
        : maturities_(std::move(maturities)), strikes_(std::move(strikes)), sigma_(std::move(sigma)),
          sigma_lo_(sigma_lo), sigma_hi_(sigma_hi), lipschitz_cap_(lipschitz_cap),
          diagnostics_(diagnostics)
    {
        detail::require_ascending(maturities_, "surface maturities");
        detail::require_ascending(strikes_, "surface strikes");
        detail::require(strikes_.front() > 0.0, "surface strikes must be > 0");
        detail::require(sigma_.size() == maturities_.size() * strikes_.size(),
                        "surface: sigma size must equal maturities x strikes");
        detail::require(sigma_lo_ > 0.0 && sigma_hi_ >= sigma_lo_,
                        "surface: need 0 < sigma_lo <= sigma_hi");
        detail::require(lipschitz_cap_ > 0.0, "surface: lipschitz cap must be > 0");
        for (double& s : sigma_) s = std::clamp(s, sigma_lo_, sigma_hi_);
        build_slopes();
    }

    /// Constant surface, handy for tests and for flat-vol controls.
    static LocalVolSurface flat(double sigma, double lipschitz_cap = 10.0)
    {
        return LocalVolSurface({1.0}, {1.0}, {sigma}, sigma, sigma, lipschitz_cap);
    }

    /// sigma_Dup(t, e^x).
    double eval(double t, double x) const { return eval_strike(t, std::exp(x)); }

    double eval_strike(double t, double strike) const
    {
        const std::size_t nt = maturities_.size();
        if (nt == 1) return clamp(row_value(0, strike));
        if (t <= maturities_.front()) {
            const double w = (t - maturities_[0]) / (maturities_[1] - maturities_[0]);
            return clamp((1.0 - w) * row_value(0, strike) + w * row_value(1, strike));
        }
        if (t >= maturities_.back()) return clamp(row_value(nt - 1, strike));
        const auto it = std::upper_bound(maturities_.begin(), maturities_.end(), t);
        const auto b = static_cast<std::size_t>(it - maturities_.begin());
        const std::size_t a = b - 1;
        const double w = (t - maturities_[a]) / (maturities_[b] - maturities_[a]);
        return clamp((1.0 - w) * row_value(a, strike) + w * row_value(b, strike));
    }

    bool at_floor(double value) const { return value <= sigma_lo_; }

    double node(std::size_t i_t, std::size_t j_k) const { return sigma_[i_t * strikes_.size() + j_k]; }
    const std::vector<double>& maturities() const { return maturities_; }
    const std::vector<double>& strikes() const { return strikes_; }
    double sigma_lo() const { return sigma_lo_; }
    double sigma_hi() const { return sigma_hi_; }
    double lipschitz_cap() const { return lipschitz_cap_; }
    const Diagnostics& diagnostics() const { return diagnostics_; }

private:
    double clamp(double s) const { return std::clamp(s, sigma_lo_, sigma_hi_); }

    // Fritsch-Carlson/Butland slopes, then capped so |d sigma/d log K| <= cap.
    void build_slopes()
    {
        const std::size_t nk = strikes_.size();
        slopes_.assign(sigma_.size(), 0.0);
        if (nk < 2) return;
        std::vector<double> h(nk - 1), delta(nk - 1);
        for (std::size_t i = 0; i < maturities_.size(); ++i) {
            const double* s = sigma_.data() + i * nk;
            double* d = slopes_.data() + i * nk;
            for (std::size_t j = 0; j + 1 < nk; ++j) {
                h[j] = strikes_[j + 1] - strikes_[j];
                delta[j] = (s[j + 1] - s[j]) / h[j];
            }
            if (nk == 2) {
                d[0] = d[1] = delta[0];
            } else {
                for (std::size_t j = 1; j + 1 < nk; ++j) {
                    if (delta[j - 1] * delta[j] <= 0.0) {
                        d[j] = 0.0;
                        continue;
                    }
                    const double w1 = 2.0 * h[j] + h[j - 1];
                    const double w2 = h[j] + 2.0 * h[j - 1];
                    d[j] = (w1 + w2) / (w1 / delta[j - 1] + w2 / delta[j]);
                }
                d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
                d[nk - 1] = end_slope(h[nk - 2], h[nk - 3], delta[nk - 2], delta[nk - 3]);
            }
            for (std::size_t j = 0; j < nk; ++j) {
                const double cap = lipschitz_cap_ / strikes_[j];
                d[j] = std::clamp(d[j], -cap, cap);
            }
        }
    }

    static double end_slope(double h0, double h1, double d0, double d1)
    {
        double d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if (d * d0 <= 0.0) return 0.0;
        if (d0 * d1 <= 0.0 && std::abs(d) > 3.0 * std::abs(d0)) return 3.0 * d0;
        return d;
    }

    double row_value(std::size_t i_t, double strike) const
    {
        const std::size_t nk = strikes_.size();
        const double* s = sigma_.data() + i_t * nk;
        if (strike <= strikes_.front()) return s[0];
        if (strike >= strikes_.back()) return s[nk - 1];
        const auto it = std::upper_bound(strikes_.begin(), strikes_.end(), strike);
        const auto j = static_cast<std::size_t>(it - strikes_.begin()) - 1;
        const double* d = slopes_.data() + i_t * nk;
        const double h = strikes_[j + 1] - strikes_[j];
        const double u = (strike - strikes_[j]) / h;
        const double one_minus = 1.0 - u;
        const double h01 = u * u * (3.0 - 2.0 * u);
        const double h10 = u * one_minus * one_minus;
        const double h11 = u * u * (u - 1.0);
        return s[j] + (s[j + 1] - s[j]) * h01 + h * (h10 * d[j] + h11 * d[j + 1]);
    }

    std::vector<double> maturities_;
    std::vector<double> strikes_;
    std::vector<double> sigma_;
    std::vector<double> slopes_;
    double sigma_lo_;
    double sigma_hi_;
    double lipschitz_cap_;
    Diagnostics diagnostics_;
};

namespace detail {

// Replaces each unreliable entry by the nearest reliable one (left on ties).
// Returns the number replaced; a row without reliable entries is untouched.
inline std::size_t fill_from_nearest(const std::vector<char>& reliable, double* row)
{
    const std::size_t n = reliable.size();
    std::vector<std::size_t> good;
    for (std::size_t j = 0; j < n; ++j)
        if (reliable[j]) good.push_back(j);
    if (good.empty() || good.size() == n) return 0;
    std::size_t filled = 0;
    std::size_t g = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (reliable[j]) continue;
        while (g + 1 < good.size() && good[g + 1] < j) ++g;
        std::size_t src = good[g];
        if (src < j && g + 1 < good.size() && good[g + 1] - j < j - src) src = good[g + 1];
        row[j] = row[src];
        ++filled;
    }
    return filled;
}

// Weights w with sum_k w_k f(t_k) = f'(t_e) for f in {1, log t, 1/t}.
inline std::array<double, 3> time_slope_weights(const std::array<double, 3>& t, double t_e)
{
    // Columns of the 3x3 system: one row per basis function.
    const double a[3][3] = {{1.0, 1.0, 1.0},
                            {std::log(t[0]), std::log(t[1]), std::log(t[2])},
                            {1.0 / t[0], 1.0 / t[1], 1.0 / t[2]}};
    const double rhs[3] = {0.0, 1.0 / t_e, -1.0 / (t_e * t_e)};
    const auto det = [](const double m[3][3]) {
        return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    };
    const double d = det(a);
    std::array<double, 3> w{};
    for (std::size_t c = 0; c < 3; ++c) {
        double m[3][3];
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t k = 0; k < 3; ++k) m[r][k] = k == c ? rhs[r] : a[r][k];
        w[c] = det(m) / d;
    }
    return w;
}

// dC/dT at maturity index i from nodes i0, i1, i2. Short-dated wing time
// values behave like exp(-c/T) and at-the-money ones like sqrt(T), so the
// log time value is differentiated with a stencil exact on {1, log T, 1/T}.
// Falls back to the polynomial stencil on C when a time value is not positive.
inline double time_derivative(const CallGrid& g, std::size_t i, std::array<std::size_t, 3> nodes, std::size_t j)
{
    const auto& T = g.maturities;
    const double intrinsic = std::max(g.s0 - g.strikes[j], 0.0);
    std::array<double, 3> t{};
    std::array<double, 3> tv{};
    bool positive = true;
    for (std::size_t l = 0; l < 3; ++l) {
        t[l] = T[nodes[l]];
        tv[l] = g.price(nodes[l], j) - intrinsic;
        positive = positive && tv[l] > 0.0;
    }
    if (positive) {
        const auto w = time_slope_weights(t, T[i]);
        double dlog = 0.0;
        for (std::size_t l = 0; l < 3; ++l) dlog += w[l] * std::log(tv[l]);
        return (g.price(i, j) - intrinsic) * dlog;
    }
    // Lagrange derivative at T[i].
    double out = 0.0;
    for (std::size_t l = 0; l < 3; ++l) {
        double num = 0.0;
        double den = 1.0;
        for (std::size_t m = 0; m < 3; ++m) {
            if (m == l) continue;
            den *= t[l] - t[m];
            double prod = 1.0;
            for (std::size_t q = 0; q < 3; ++q)
                if (q != l && q != m) prod *= T[i] - t[q];
            num += prod;
        }
        out += g.price(nodes[l], j) * num / den;
    }
    return out;
}

// d^2C/dK^2 at strike index j from the stencil centred on jc. Away from the
// spot the intrinsic part is linear, so C'' = tv * (L'' + L'^2) with L the
// log time value, L' taken at K[j].
inline double strike_curvature(const CallGrid& g, std::span<const double> row, std::size_t jc, std::size_t j)
{
    const auto& K = g.strikes;
    if (K[jc - 1] < g.s0 && g.s0 < K[jc + 1]) {
        // Five-point stencil where the spacing is uniform.
        if (jc < 2 || jc + 2 >= K.size()) return second_difference(K, row, jc);
        const double h = K[jc + 1] - K[jc];
        for (std::size_t l = jc - 2; l < jc + 2; ++l)
            if (std::abs(K[l + 1] - K[l] - h) > 1e-9 * h) return second_difference(K, row, jc);
        return (-row[jc - 2] + 16.0 * row[jc - 1] - 30.0 * row[jc] + 16.0 * row[jc + 1] - row[jc + 2]) /
               (12.0 * h * h);
    }
    double l[3];
    for (std::size_t m = 0; m < 3; ++m) {
        const double tv = row[jc - 1 + m] - std::max(g.s0 - K[jc - 1 + m], 0.0);
        if (!(tv > 0.0)) return second_difference(K, row, jc);
        l[m] = std::log(tv);
    }
    const double k0 = K[jc - 1], k1 = K[jc], k2 = K[jc + 1];
    const double x = K[j];
    // Derivative of the interpolating quadratic at x.
    const double d1 = l[0] * (2 * x - k1 - k2) / ((k0 - k1) * (k0 - k2)) +
                      l[1] * (2 * x - k0 - k2) / ((k1 - k0) * (k1 - k2)) +
                      l[2] * (2 * x - k0 - k1) / ((k2 - k0) * (k2 - k1));
    const double d2 = 2.0 * ((l[2] - l[1]) / (k2 - k1) - (l[1] - l[0]) / (k1 - k0)) / (k2 - k0);
    const double tv_j = row[j] - std::max(g.s0 - x, 0.0);
    return tv_j * (d2 + d1 * d1);
}

} // namespace detail

/// Dupire extraction at zero rates:
/// sigma^2 = dC/dT / (K^2/2 * d^2C/dK^2), central differences inside the grid,
/// one-sided at the edges, denominator floored, result clamped.
inline LocalVolSurface dupire_local_vol(const CallGrid& g, const SurfaceOptions& opt = {})
{
    const std::size_t nt = g.maturities.size();
    const std::size_t nk = g.strikes.size();
    detail::require(nt >= 2, "dupire: need at least 2 maturities");
    detail::require(nk >= 3, "dupire: need at least 3 strikes");
    const double floor = opt.tol_butterfly < 0.0 ? default_tol_butterfly(g.s0) : opt.tol_butterfly;
    const double cal_tol = opt.calendar_tol < 0.0 ? 1e-8 * g.s0 : opt.calendar_tol;

    LocalVolSurface::Diagnostics diag;
    std::vector<double> sigma(nt * nk);
    const auto& T = g.maturities;
    const auto& K = g.strikes;
    std::vector<char> reliable(nk);
    for (std::size_t i = 0; i < nt; ++i) {
        std::span<const double> row(g.prices.data() + i * nk, nk);
        for (std::size_t j = 0; j < nk; ++j) {
            reliable[j] = 1;
            double dc_dt;
            if (nt == 2) dc_dt = (g.price(1, j) - g.price(0, j)) / (T[1] - T[0]);
            else if (i == 0) dc_dt = detail::time_derivative(g, i, {0, 1, 2}, j);
            else if (i + 1 == nt) dc_dt = detail::time_derivative(g, i, {nt - 3, nt - 2, nt - 1}, j);
            else dc_dt = detail::time_derivative(g, i, {i - 1, i, i + 1}, j);
            const std::size_t jc = std::clamp<std::size_t>(j, 1, nk - 2);
            const double d2c_dk2 = detail::strike_curvature(g, row, jc, j);

            if (dc_dt < -cal_tol) ++diag.calendar_violations;
            double den = 0.5 * K[j] * K[j] * d2c_dk2;
            if (den < floor) {
                den = floor;
                ++diag.floored_denominators;
                reliable[j] = 0;
            }
            const double s = std::sqrt(std::max(dc_dt, 0.0) / den);
            if (s < opt.sigma_lo) {
                ++diag.clamped_low;
                reliable[j] = 0;
            }
            if (s > opt.sigma_hi) ++diag.clamped_high;
            sigma[i * nk + j] = s;
        }
        if (opt.fill_unreliable) diag.filled_nodes += detail::fill_from_nearest(reliable, sigma.data() + i * nk);
    }
    return LocalVolSurface(g.maturities, g.strikes, std::move(sigma), opt.sigma_lo, opt.sigma_hi,
                           opt.lipschitz_cap, diag);
}

} // namespace hlsv
