#pragma once

#include <boost/random/mersenne_twister.hpp>

#include <cstdint>
#include <initializer_list>

namespace cma::rng {

// All randomness flows from a root seed through named streams. A stream is
// identified by a path of integers (for example {tag, replication, subject,
// session}); its engine seed is the splitmix64 chain over the root seed and
// the path. Streams never share state, so results do not depend on how work
// is split across threads. Variates are drawn with Boost.Random
// distributions, whose algorithms are fixed in the library source.

using Engine = boost::random::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = splitmix64(seed);
    for (const std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
    return h;
}

inline Engine stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    return Engine(derive_seed(seed, path));
}

// Stream tags.
inline constexpr std::uint64_t kSingleSession = 0;
inline constexpr std::uint64_t kSubjectEffects = 1;
inline constexpr std::uint64_t kSessionDraws = 2;
inline constexpr std::uint64_t kReplication = 3;
inline constexpr std::uint64_t kBootstrap = 4;

}  // namespace cma::rng
