#pragma once
#include <cstdint>
#include <random>
#include <span>

namespace ordred {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent child seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream)
{
    return mix_seed(master ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b)
{
    return derive_seed(derive_seed(master, a), b);
}

/// FNV-1a over a span of integers; keys cache entries and per-pattern streams.
inline std::uint64_t hash_codes(std::span<const int> codes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int c : codes) {
        h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(c));
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace ordred
