#pragma once

// Stateless seed derivation: every random stream is keyed by the tuple that names it.

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace cfgan {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
    return h;
}

// FNV-1a
constexpr std::uint64_t hash_string(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Purpose tags for derive_seed.
enum class Stream : std::uint64_t { batch = 1, augment, latent, dropout, init, attack, embedder, eval };

constexpr std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace cfgan
