#pragma once

#include <cstdint>
#include <vector>

namespace causalforge {

// Counter-based randomness. Every consumer derives an independent stream
// from (master_seed, index, stream_id), so record generation is
// order-independent and reproducible bit-for-bit across platforms.
//
// We deliberately avoid std::shuffle and std::*_distribution: their output
// is implementation-defined, which would break the byte-identical
// determinism contract.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// xoshiro256** seeded via splitmix64. Small, fast, stable output sequence.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        for (auto& w : state_) {
            s = splitmix64(s);
            w = s;
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Bounded integer in [0, n). Modulo bias is irrelevant here; what
    // matters is that the mapping is fixed.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t state_[4]{};
};

enum class Stream : std::uint64_t {
    kScorerNoise0 = 1,
    kScorerNoise1 = 2,
    kTreatment = 3,
    kOutcome0 = 4,
    kOutcome1 = 5,
};

inline std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t index, Stream stream) {
    std::uint64_t s = splitmix64(master_seed ^ 0xa5a5a5a5deadbeefULL);
    s = splitmix64(s ^ index * 0x9e3779b97f4a7c15ULL);
    s = splitmix64(s ^ static_cast<std::uint64_t>(stream) * 0xc2b2ae3d27d4eb4fULL);
    return s;
}

inline Rng record_rng(std::uint64_t master_seed, std::uint64_t index, Stream stream) {
    return Rng(stream_seed(master_seed, index, stream));
}

// Deterministic Fisher-Yates permutation of {0,...,n-1}.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

}  // namespace causalforge
