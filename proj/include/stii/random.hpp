#pragma once
// Portable seeded sampling helpers. std::mt19937_64 output is fully specified
// by the standard; the distributions below avoid the implementation-defined
// std:: distributions so seeded results match across toolchains.

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace stii {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Small counter-based generator for cheap per-task streams.
class SplitMix64 {
public:
    using result_type = std::uint64_t;
    explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}
    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }
    result_type operator()() noexcept {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

// Uniform integer in [0, bound). bound must be > 0.
template <typename Gen>
std::uint64_t uniform_below(Gen& rng, std::uint64_t bound) {
    // Lemire's multiply-shift with rejection.
    std::uint64_t x = rng();
    unsigned __int128 m = static_cast<unsigned __int128>(x) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
        const std::uint64_t threshold = (0 - bound) % bound;
        while (low < threshold) {
            x = rng();
            m = static_cast<unsigned __int128>(x) * bound;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

// Uniform double in [0, 1).
template <typename Gen>
double uniform01(Gen& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename T, typename Gen>
void shuffle(std::span<T> values, Gen& rng) {
    for (std::size_t i = values.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_below(rng, i));
        std::swap(values[i - 1], values[j]);
    }
}

}  // namespace stii
