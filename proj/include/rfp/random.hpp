#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rfp {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Independent stream for the k-th consumer of a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t k)
{
    return splitmix64(splitmix64(base) ^ (k * 0xD1B54A32D192ED03ULL + 1));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

// std::normal_distribution caches a second variate; these helpers keep draws
// independent of that state so callers can interleave streams freely.
inline double uniform01(Rng& rng) { return std::generate_canonical<double, 53>(rng); }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline double std_normal(Rng& rng)
{
    // Box-Muller, one variate per call.
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

} // namespace rfp
