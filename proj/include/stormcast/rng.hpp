#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace stormcast {

// std:: distributions are implementation-defined, so every draw we rely on
// for reproducibility goes through these helpers instead. mt19937_64 output
// itself is pinned by the standard.
using Rng = std::mt19937_64;

inline std::uint64_t rng_below(Rng& rng, std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r = rng();
    while (r >= limit) r = rng();
    return r % n;
}

// uniform in [0, 1)
inline double rng_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double rng_uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * rng_unit(rng);
}

// Box-Muller, one value per call (spare discarded to keep draws independent
// of call interleaving).
inline double rng_normal(Rng& rng, double mean = 0.0, double sigma = 1.0) {
    double u1 = 1.0 - rng_unit(rng);
    double u2 = rng_unit(rng);
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    return mean + sigma * z;
}

template <typename T>
void rng_shuffle(Rng& rng, std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng_below(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

// Sample m distinct values from {0, ..., n-1}, returned sorted ascending.
std::vector<std::size_t> inline rng_sample_indices(Rng& rng, std::size_t n, std::size_t m) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    if (m > n) m = n;
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng_below(rng, n - i));
        std::swap(all[i], all[j]);
    }
    all.resize(m);
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace stormcast
