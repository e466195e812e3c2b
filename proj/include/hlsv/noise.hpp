#pragma once

#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hlsv/errors.hpp"
#include "hlsv/philox.hpp"

namespace hlsv {

/// Everything needed to regenerate the correlated Brownian increments of a
/// run. Row r of the resulting block draws from Philox stream stream_id(r);
/// by default stream_id(r) = r.
struct NoisePlan {
    std::uint64_t seed = 0;
    std::size_t n_particles = 1;
    double rho = 0.0;
    std::size_t steps = 1;
    double horizon = 1.0;
    std::vector<std::uint64_t> stream_ids; // empty means identity

    std::uint64_t stream_id(std::size_t row) const
    {
        return stream_ids.empty() ? static_cast<std::uint64_t>(row) : stream_ids[row];
    }

    double dt() const { return horizon / static_cast<double>(steps); }

    void validate() const
    {
        detail::require(n_particles >= 1, "noise: n_particles must be >= 1");
        detail::require(steps >= 1, "noise: steps must be >= 1");
        detail::require(horizon > 0.0 && std::isfinite(horizon), "noise: horizon must be > 0");
        detail::require(std::abs(rho) < 1.0, "noise: rho must lie strictly inside (-1, 1)");
        detail::require(stream_ids.empty() || stream_ids.size() == n_particles,
                        "noise: stream_ids must be empty or have n_particles entries");
    }
};

/// One fine-grid increment pair for (row, step). Correlation is imposed here,
/// before any coarsening, so coarse sums inherit it exactly.
inline std::pair<double, double> correlated_increment(const NoisePlan& plan, double sqrt_dt,
                                                      double rho_perp, std::size_t row,
                                                      std::size_t step) noexcept
{
    const auto [z_x, z_perp] = normal_pair(plan.seed, plan.stream_id(row), step);
    const double dwx = sqrt_dt * z_x;
    const double dw_perp = sqrt_dt * z_perp;
    return {dwx, plan.rho * dwx + rho_perp * dw_perp};
}

/// Anything that can hand out one time step's increments for all particles.
template <class S>
concept IncrementSource = requires(const S& s, std::size_t m, std::span<double> a,
                                   std::span<double> b) {
    { s.particles() } -> std::convertible_to<std::size_t>;
    { s.steps() } -> std::convertible_to<std::size_t>;
    { s.dt() } -> std::convertible_to<double>;
    s.fill_step(m, a, b);
};

/// Materialised increments, stored step-major (entry m * N + i) so one
/// step's column is contiguous.
class IncrementBlock {
public:
    IncrementBlock() = default;
    IncrementBlock(std::size_t n_particles, std::size_t steps, double dt)
        : n_(n_particles), m_(steps), dt_(dt), dwx_(n_particles * steps),
          dwv_(n_particles * steps)
    {
    }

    std::size_t particles() const { return n_; }
    std::size_t steps() const { return m_; }
    double dt() const { return dt_; }

    double dwx(std::size_t i, std::size_t m) const { return dwx_[m * n_ + i]; }
    double dwv(std::size_t i, std::size_t m) const { return dwv_[m * n_ + i]; }
    double& dwx(std::size_t i, std::size_t m) { return dwx_[m * n_ + i]; }
    double& dwv(std::size_t i, std::size_t m) { return dwv_[m * n_ + i]; }

    std::span<const double> dwx_step(std::size_t m) const { return {dwx_.data() + m * n_, n_}; }
    std::span<const double> dwv_step(std::size_t m) const { return {dwv_.data() + m * n_, n_}; }

    void fill_step(std::size_t m, std::span<double> dwx, std::span<double> dwv) const
    {
        std::copy_n(dwx_.data() + m * n_, n_, dwx.begin());
        std::copy_n(dwv_.data() + m * n_, n_, dwv.begin());
    }

    bool operator==(const IncrementBlock&) const = default;

private:
    std::size_t n_ = 0;
    std::size_t m_ = 0;
    double dt_ = 0.0;
    std::vector<double> dwx_;
    std::vector<double> dwv_;
};

/// Materialise the whole increment block for a plan.
inline IncrementBlock generate(const NoisePlan& plan)
{
    plan.validate();
    IncrementBlock block(plan.n_particles, plan.steps, plan.dt());
    const double sqrt_dt = std::sqrt(plan.dt());
    const double rho_perp = std::sqrt(1.0 - plan.rho * plan.rho);
    const auto n = static_cast<std::int64_t>(plan.n_particles);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto row = static_cast<std::size_t>(i);
        for (std::size_t m = 0; m < plan.steps; ++m) {
            const auto [dx, dv] = correlated_increment(plan, sqrt_dt, rho_perp, row, m);
            block.dwx(row, m) = dx;
            block.dwv(row, m) = dv;
        }
    }
    return block;
}

namespace detail {

/// Sum of the pairs at(begin) .. at(begin + len - 1). Even runs split in
/// halves, odd runs add left to right, so nested power-of-two coarsening
/// reproduces the one-shot sum bit for bit.
template <class At>
std::pair<double, double> run_sum(const At& at, std::size_t begin, std::size_t len)
{
    if (len % 2 == 0) {
        const auto a = run_sum(at, begin, len / 2);
        const auto b = run_sum(at, begin + len / 2, len / 2);
        return {a.first + b.first, a.second + b.second};
    }
    double sx = 0.0;
    double sv = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
        const auto [dx, dv] = at(begin + k);
        sx += dx;
        sv += dv;
    }
    return {sx, sv};
}

} // namespace detail

/// Merge each run of `factor` consecutive steps into one. Even runs are
/// split in halves, odd runs are summed left to right.
inline IncrementBlock coarsen(const IncrementBlock& fine, std::size_t factor)
{
    detail::require(factor >= 1, "coarsen: factor must be >= 1");
    detail::require(fine.steps() % factor == 0, "coarsen: factor must divide the step count");
    const std::size_t coarse_steps = fine.steps() / factor;
    IncrementBlock coarse(fine.particles(), coarse_steps, fine.dt() * static_cast<double>(factor));
    for (std::size_t m = 0; m < coarse_steps; ++m) {
        for (std::size_t i = 0; i < fine.particles(); ++i) {
            const auto at = [&](std::size_t s) { return std::pair{fine.dwx(i, s), fine.dwv(i, s)}; };
            const auto [sx, sv] = detail::run_sum(at, m * factor, factor);
            coarse.dwx(i, m) = sx;
            coarse.dwv(i, m) = sv;
        }
    }
    return coarse;
}

/// On-the-fly view of generate(plan) coarsened by `factor`, without storing
/// the fine block. Bit-identical to coarsen(generate(plan), factor).
class StreamingNoise {
public:
    explicit StreamingNoise(NoisePlan plan, std::size_t factor = 1)
        : plan_(std::move(plan)), factor_(factor)
    {
        plan_.validate();
        detail::require(factor_ >= 1 && plan_.steps % factor_ == 0,
                        "streaming noise: factor must divide the fine step count");
        sqrt_dt_ = std::sqrt(plan_.dt());
        rho_perp_ = std::sqrt(1.0 - plan_.rho * plan_.rho);
    }

    std::size_t particles() const { return plan_.n_particles; }
    std::size_t steps() const { return plan_.steps / factor_; }
    double dt() const { return plan_.dt() * static_cast<double>(factor_); }
    const NoisePlan& plan() const { return plan_; }

    void fill_step(std::size_t m, std::span<double> dwx, std::span<double> dwv) const
    {
        const auto n = static_cast<std::int64_t>(plan_.n_particles);
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < n; ++i) {
            const auto row = static_cast<std::size_t>(i);
            const auto at = [&](std::size_t s) {
                return correlated_increment(plan_, sqrt_dt_, rho_perp_, row, s);
            };
            const auto [sx, sv] = detail::run_sum(at, m * factor_, factor_);
            dwx[row] = sx;
            dwv[row] = sv;
        }
    }

private:
    NoisePlan plan_;
    std::size_t factor_;
    double sqrt_dt_ = 0.0;
    double rho_perp_ = 0.0;
};

static_assert(IncrementSource<IncrementBlock>);
static_assert(IncrementSource<StreamingNoise>);

// Debug dump. Header: seed (u64), N (u64), M (u64), T (f64), rho (f64), all
// little-endian; then dWx as N x M row-major doubles, then dWv likewise.
namespace detail {

template <class T>
void write_le(std::ostream& os, T value)
{
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_le(std::istream& is)
{
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}

} // namespace detail

inline void dump_block(const std::string& path, const NoisePlan& plan, const IncrementBlock& block)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    detail::write_le<std::uint64_t>(os, plan.seed);
    detail::write_le<std::uint64_t>(os, block.particles());
    detail::write_le<std::uint64_t>(os, block.steps());
    detail::write_le<double>(os, plan.horizon);
    detail::write_le<double>(os, plan.rho);
    for (std::size_t i = 0; i < block.particles(); ++i)
        for (std::size_t m = 0; m < block.steps(); ++m) detail::write_le<double>(os, block.dwx(i, m));
    for (std::size_t i = 0; i < block.particles(); ++i)
        for (std::size_t m = 0; m < block.steps(); ++m) detail::write_le<double>(os, block.dwv(i, m));
    if (!os) throw IoError("write failed: " + path);
}

struct DumpedBlock {
    NoisePlan plan;
    IncrementBlock block;
};

inline DumpedBlock load_block(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    DumpedBlock out;
    out.plan.seed = detail::read_le<std::uint64_t>(is);
    out.plan.n_particles = detail::read_le<std::uint64_t>(is);
    out.plan.steps = detail::read_le<std::uint64_t>(is);
    out.plan.horizon = detail::read_le<double>(is);
    out.plan.rho = detail::read_le<double>(is);
    if (!is) throw IoError("truncated header: " + path);
    out.block = IncrementBlock(out.plan.n_particles, out.plan.steps, out.plan.dt());
    for (std::size_t i = 0; i < out.plan.n_particles; ++i)
        for (std::size_t m = 0; m < out.plan.steps; ++m) out.block.dwx(i, m) = detail::read_le<double>(is);
    for (std::size_t i = 0; i < out.plan.n_particles; ++i)
        for (std::size_t m = 0; m < out.plan.steps; ++m) out.block.dwv(i, m) = detail::read_le<double>(is);
    if (!is) throw IoError("truncated body: " + path);
    return out;
}

} // namespace hlsv
