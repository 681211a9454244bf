#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace clonelab {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Folds several values into one seed. Used to give every (task, group member,
// clone) its own independent stream so results do not depend on scheduling.
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t s = 0x243f6a8885a308d3ULL;
    for (std::uint64_t p : parts) {
        s ^= p + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
        std::uint64_t t = s;
        s = splitmix64(t);
    }
    return s;
}

inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic RNG helpers on top of mt19937_64. The standard distributions
// are implementation-defined, so sampling is done by hand here: identical
// seeds must give identical samples on any toolchain.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t u;
        do {
            u = engine_();
        } while (u >= limit);
        return u % n;
    }

    // Inclusive range.
    std::int64_t range(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Log-uniform integer in [1, max]: decimal digit count first, then uniform
    // within that band. Integer-only, no libm, so streams are portable.
    std::int64_t log_uniform(std::int64_t max) {
        if (max <= 1) return 1;
        int digits = 0;
        std::int64_t p = 1;
        while (p <= max / 10) {
            p *= 10;
            ++digits;
        }
        ++digits; // p = 10^(digits-1) <= max
        int k = static_cast<int>(below(static_cast<std::uint64_t>(digits))) + 1;
        std::int64_t lo = 1, hi = 9;
        for (int i = 1; i < k; ++i) {
            lo *= 10;
            hi = hi * 10 + 9;
        }
        if (hi > max) hi = max;
        if (lo > hi) lo = hi;
        return range(lo, hi);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double real01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

private:
    std::mt19937_64 engine_;
};

} // namespace clonelab
