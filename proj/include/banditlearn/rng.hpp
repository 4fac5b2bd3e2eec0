#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace banditlearn {

using Rng = std::mt19937_64;

namespace rng {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// FNV-1a, used to turn stream labels into keys at compile time.
inline constexpr std::uint64_t label(std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Key of the substream (seed, a, b). Substreams are a pure function of the
/// key tuple, so any work split keyed this way is independent of scheduling.
inline constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t k = splitmix64(seed ^ 0x5851f42d4c957f2dULL);
    k = splitmix64(k ^ a);
    return splitmix64(k ^ (b * 0x2545f4914f6cdd1dULL));
}

inline Rng substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(derive(seed, a, b)),
                      static_cast<std::uint32_t>(derive(seed, a, b) >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
    return Rng(seq);
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

}  // namespace rng
}  // namespace banditlearn
