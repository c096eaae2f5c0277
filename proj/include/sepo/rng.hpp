#pragma once

#include <cstdint>
#include <cmath>
#include <random>

namespace sepo {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Stream/seed derivation so that simulations, predictors, and samplers get
/// independent deterministic streams from one base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                 std::uint64_t index = 0) {
    std::uint64_t h = splitmix64(base);
    h = splitmix64(h ^ stream);
    h = splitmix64(h ^ index);
    return h;
}

/// Deterministic RNG. The raw mt19937_64 sequence is fully specified by the
/// standard; the float/normal mappings below are explicit (no
/// std::*_distribution) so draws are identical across platforms and builds.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1), 53-bit resolution.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform on [a, b).
    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    /// Standard normal via Box-Muller (no second-value cache, so the draw
    /// count per call is fixed).
    double normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    /// Unbiased integer on [0, n), n > 0.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace sepo
