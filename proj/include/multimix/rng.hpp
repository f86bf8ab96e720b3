#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace multimix {

// Engines are keyed by tuples (seed, epoch, index, stream, ...) so that every
// random draw is a pure function of its key, independent of evaluation order.
inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> key) {
    std::vector<std::uint32_t> words;
    words.reserve(key.size() * 2);
    for (std::uint64_t k : key) {
        words.push_back(static_cast<std::uint32_t>(k));
        words.push_back(static_cast<std::uint32_t>(k >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

// Uniform in [0, 1) from the top 53 bits of one engine output.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Stream tags that keep unrelated random consumers apart.
enum class RngStream : std::uint64_t {
    init = 1,
    split = 2,
    compose = 3,
    weak = 4,
    strong = 5,
    dropout = 6,
    synth = 7,
};

}  // namespace multimix
