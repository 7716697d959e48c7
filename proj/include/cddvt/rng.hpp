#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

#include "errors.hpp"

namespace cddvt {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Seed of substream `name` (and optional sub-index): splitmix64(seed ^ fnv1a64(name)) mixed with index.
/// Depends only on its arguments, so streams can be created in any order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) noexcept {
    return splitmix64(splitmix64(seed ^ fnv1a64(name)) + index);
}

/// mt19937_64 with portable real/integer draws (no std distributions, whose output is library-specific).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform on {0, ..., n-1}; n >= 1.
    std::size_t index(std::size_t n) {
        if (n == 0) throw ArgumentError("Rng::index: empty range");
        const std::uint64_t bound = n;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t r;
        do r = engine_();
        while (r >= limit);
        return static_cast<std::size_t>(r % bound);
    }

    template <class It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) std::iter_swap(first + (i - 1), first + index(i));
    }

private:
    std::mt19937_64 engine_;
};

/// The three named streams a run draws from.
struct RngStreams {
    Rng data;
    Rng init;
    Rng training;
};

inline RngStreams seed_everything(std::uint64_t seed) {
    return RngStreams{Rng(derive_seed(seed, "data")), Rng(derive_seed(seed, "init")),
                      Rng(derive_seed(seed, "training"))};
}

}  // namespace cddvt
