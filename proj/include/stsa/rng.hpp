#pragma once

#include <cmath>
#include <cstdint>

namespace stsa {

/// SplitMix64: state advances by 0x9E3779B97F4A7C15, output mixed with the
/// constants 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB (shifts 30, 27, 31).
/// Fully specified so other implementations can reproduce the stream.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

    /// Standard normal via Box-Muller (one draw per call).
    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

/// Derives an independent stream seed from a base seed and a tag.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    SplitMix64 g(seed ^ (tag * 0xD1B54A32D192ED03ULL));
    g.next();
    return g.next();
}

}  // namespace stsa
