#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "femur/error.hpp"

namespace femur {

// splitmix64; used to derive independent seeds from (seed, tag...) tuples so
// trial streams do not depend on scheduling order.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed) { return splitmix64(seed); }

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t first, Rest... rest) {
    return mix_seed(splitmix64(seed ^ splitmix64(first)), rest...);
}

// Deterministic RNG wrapper. std::uniform_int_distribution is
// implementation-defined, so bounded draws are done here by rejection.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform integer in [0, bound).
    std::size_t uniform_below(std::size_t bound) {
        if (bound == 0) throw ArgumentError("uniform_below: bound must be positive");
        const std::uint64_t span = static_cast<std::uint64_t>(bound);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return static_cast<std::size_t>(v % span);
    }

    // Uniform double in [0, 1).
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller (polar form discarded for determinism of
    // draw count: use the trig form, one draw pair per call, second discarded).
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // First n entries of a seeded Fisher-Yates shuffle of [0, total):
    // a uniform sample without replacement.
    std::vector<std::size_t> sample_without_replacement(std::size_t total, std::size_t n) {
        if (n > total) throw ArgumentError("sample_without_replacement: n exceeds population");
        std::vector<std::size_t> idx(total);
        for (std::size_t i = 0; i < total; ++i) idx[i] = i;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = i + uniform_below(total - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(n);
        return idx;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace femur
