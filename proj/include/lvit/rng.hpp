#pragma once

#include <cmath>
#include <cstdint>

namespace lvit {

/// Deterministic pseudo-random generator with platform-independent streams.
///
/// The core generator is xoshiro256++ seeded through SplitMix64, so the raw
/// 64-bit stream depends only on the seed. Integer and uniform draws are
/// bitwise reproducible everywhere; draws that go through libm (normal,
/// exponential) are reproducible on a given platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Unbiased-enough integer in [0, n); n must be positive.
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    bool bernoulli(double p) { return uniform01() < p; }

    /// Standard normal via Box-Muller (one value per call).
    double normal() {
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    /// Normal truncated to two parent standard deviations, rescaled so the
    /// resulting distribution has standard deviation `stddev` (the 0.8796...
    /// factor is the stddev of a +/-2 sigma truncated unit normal).
    double truncated_normal(double stddev) {
        double z = normal();
        while (z < -2.0 || z > 2.0) z = normal();
        return z * (stddev / kTruncatedStd);
    }

    /// Unit-mean exponential draw (inverse CDF).
    double exponential() { return -std::log1p(-uniform01()); }

    /// Derives an independent stream seed from a base seed and a stream tag.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
        return splitmix64(x);
    }

    static constexpr double kTruncatedStd = 0.87962566103423978;

private:
    static constexpr double kPi = 3.141592653589793238462643383279502884;

    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
};

}  // namespace lvit
