// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>

#include <boost/math/special_functions/erf.hpp>

namespace lball {

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).  Stateless: output is a
/// pure function of (counter, key), which is what makes every sample point
/// reproducible regardless of how work is partitioned.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter ctr, Key key)
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

    static Counter single_round(const Counter& c, const Key& k)
    {
        std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
        std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
        auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        auto lo0 = static_cast<std::uint32_t>(p0);
        auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

/// Uniform draws for one (seed, stream) pair.  The n-th sample's d-th
/// coordinate depends only on (seed, stream, n, d).
class Substream {
public:
    Substream(std::uint64_t seed, std::uint64_t stream)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_lo_(static_cast<std::uint32_t>(stream)),
          stream_hi_(static_cast<std::uint32_t>(stream >> 32))
    {
    }

    /// Fill `out[0..count)` with doubles in the open interval (0, 1).
    template <class Out>
    void uniforms(std::uint64_t sample, int count, Out& out) const
    {
        for (int block = 0; 2 * block < count; ++block) {
            Philox4x32::Counter ctr{static_cast<std::uint32_t>(block),
                                    static_cast<std::uint32_t>(sample),
                                    stream_lo_ ^ static_cast<std::uint32_t>(sample >> 32) * 0x9E3779B9u,
                                    stream_hi_};
            auto r = Philox4x32::generate(ctr, key_);
            out[2 * block] = to_unit(r[0], r[1]);
            if (2 * block + 1 < count) {
                out[2 * block + 1] = to_unit(r[2], r[3]);
            }
        }
    }

    double uniform(std::uint64_t sample) const
    {
        std::array<double, 1> u{};
        uniforms(sample, 1, u);
        return u[0];
    }

private:
    static double to_unit(std::uint32_t hi, std::uint32_t lo)
    {
        std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32 | lo) >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    Philox4x32::Key key_;
    std::uint32_t stream_lo_;
    std::uint32_t stream_hi_;
};

/// SplitMix64 finalizer, used to derive child seeds (batches, experiments).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Standard normal quantile for p in (0, 1).
inline double normal_quantile(double p)
{
    return -1.4142135623730951 * boost::math::erfc_inv(2.0 * p);
}

}  // namespace lball
