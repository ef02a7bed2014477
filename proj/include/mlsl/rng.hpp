#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mlsl {

using rng_t = std::mt19937_64;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derive an independent substream seed from a master seed and a tuple of
/// integer coordinates (grid indices, realization index, purpose tag, ...).
/// The result depends only on the values, never on call order or thread.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> coords) noexcept {
    std::uint64_t h = mix64(master);
    for (std::uint64_t c : coords)
        h = mix64(h ^ mix64(c + 0x632be59bd9b4e019ULL));
    return h;
}

inline rng_t make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> coords) {
    return rng_t(derive_seed(master, coords));
}

/// Purpose tags for per-realization substreams.
enum class stream : std::uint64_t { graph = 1, observers = 2, source = 3, spread = 4 };

constexpr std::uint64_t tag(stream s) noexcept { return static_cast<std::uint64_t>(s); }

} // namespace mlsl
