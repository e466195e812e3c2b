#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace hlsv {

/// Philox4x32-10 counter-based bijection (Salmon, Moraes, Dror, Shaw 2011).
/// Output depends only on (counter, key), so any particle/step can be drawn
/// independently of evaluation order or thread assignment.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr Counter apply(Counter ctr, Key key) noexcept
    {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            ctr = single_round(ctr, key);
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    static constexpr std::pair<std::uint32_t, std::uint32_t>
    mulhilo(std::uint32_t a, std::uint32_t b) noexcept
    {
        const std::uint64_t p = std::uint64_t{a} * std::uint64_t{b};
        return {static_cast<std::uint32_t>(p >> 32), static_cast<std::uint32_t>(p)};
    }

    static constexpr Counter single_round(const Counter& c, const Key& k) noexcept
    {
        const auto [hi0, lo0] = mulhilo(kMul0, c[0]);
        const auto [hi1, lo1] = mulhilo(kMul1, c[2]);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

namespace detail {

// 53-bit uniform on the open interval (0, 1).
inline double open_unit(std::uint32_t hi, std::uint32_t lo) noexcept
{
    const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

} // namespace detail

/// Two independent standard normals addressed by (seed, stream, index).
/// Box-Muller on the two 53-bit uniforms of one Philox block.
inline std::pair<double, double> normal_pair(std::uint64_t seed, std::uint64_t stream,
                                             std::uint64_t index) noexcept
{
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(index),
                                  static_cast<std::uint32_t>(index >> 32),
                                  static_cast<std::uint32_t>(stream),
                                  static_cast<std::uint32_t>(stream >> 32)};
    const Philox4x32::Key key{static_cast<std::uint32_t>(seed),
                              static_cast<std::uint32_t>(seed >> 32)};
    const auto out = Philox4x32::apply(ctr, key);
    const double u1 = detail::open_unit(out[0], out[1]);
    const double u2 = detail::open_unit(out[2], out[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
}

} // namespace hlsv
