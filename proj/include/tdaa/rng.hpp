#pragma once

#include <cstdint>

namespace tdaa {

// splitmix64 is the single PRNG used everywhere in this project. It is
// trivially portable (pure 64-bit integer arithmetic), which is what makes
// datasets and initializations byte-identical across platforms.
struct SplitMix64 {
    uint64_t state = 0;
    uint64_t draws = 0;

    SplitMix64() = default;
    explicit SplitMix64(uint64_t seed) : state(seed) {}

    uint64_t next() {
        ++draws;
        state += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform integer in [lo, hi], inclusive. Modulo reduction; the tiny bias
    // is irrelevant here and keeps the mapping easy to reimplement elsewhere.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(next() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Uniform double in [0, 1), 53-bit mantissa mapping.
    double uniform01() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    double uniform_real(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }
};

// Deterministic seed derivation for sub-streams (per epoch, per sample, ...).
inline uint64_t seed_combine(uint64_t base, uint64_t stream) {
    SplitMix64 r(base ^ (stream * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL));
    return r.next();
}

}  // namespace tdaa
