#ifndef TBSEG_RNG_HPP
#define TBSEG_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

namespace tbseg {

// SplitMix64 stream. Distributions are implemented here rather than through
// <random> so that sequences are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound); unbiased by rejection. bound must be > 0.
    std::uint64_t uniform_index(std::uint64_t bound) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t r = next_u64();
        while (r >= limit) r = next_u64();
        return r % bound;
    }

    /// Standard normal via Box-Muller; one draw consumes two uniforms.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::uint64_t state_;
};

/// Mixes a base seed with stream identifiers into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    Rng r(seed ^ (a * 0xD1B54A32D192ED03ULL) ^ (b * 0xABC98388FB8FAC03ULL));
    r.next_u64();
    return r.next_u64();
}

}  // namespace tbseg

#endif  // TBSEG_RNG_HPP
