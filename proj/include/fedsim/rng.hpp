#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedsim {

// Seed fan-out. Every random stream in a run is derived from the master seed
// plus a purpose tag and optional round/client indices, so that adding or
// reordering streams never perturbs unrelated ones and parallel client
// execution stays reproducible.
//
// Mixing is splitmix64 over a FNV-1a hash of the tag; both are fixed-width
// integer arithmetic, identical on every platform.

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = detail::splitmix64(master ^ detail::fnv1a(purpose));
    h = detail::splitmix64(h ^ (a + 0x9e3779b97f4a7c15ULL));
    h = detail::splitmix64(h ^ (b + 0x7f4a7c159e3779b9ULL));
    return h;
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view purpose,
                                std::uint64_t a = 0, std::uint64_t b = 0) {
    return std::mt19937_64(derive_seed(master, purpose, a, b));
}

} // namespace fedsim
