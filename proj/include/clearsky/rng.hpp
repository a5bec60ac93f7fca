#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace clearsky {

/// SplitMix64 based generator. Self-contained so that streams are
/// bit-identical across platforms and standard library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi_inclusive) {
        uint64_t span = static_cast<uint64_t>(hi_inclusive - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // Box-Muller; one value per call (the sibling draw is discarded so the
    // stream layout is position independent).
    double normal(double mean = 0.0, double std = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        return mean + std * z;
    }

    // Normal truncated to +-2 std, by rejection.
    double truncated_normal(double std) {
        for (;;) {
            double z = normal(0.0, 1.0);
            if (z >= -2.0 && z <= 2.0) return z * std;
        }
    }

private:
    uint64_t state_;
};

/// FNV-1a 64-bit over bytes; used for config hashes and stream derivation.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xCBF29CE484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xCBF29CE484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

/// Deterministic sub-stream: rng for item `name`/`index` under a master seed.
inline Rng stream_rng(uint64_t seed, const std::string& name) {
    uint64_t h = fnv1a64(&seed, sizeof(seed));
    h = fnv1a64(name, h);
    return Rng(h);
}

inline Rng stream_rng(uint64_t seed, uint64_t index) {
    uint64_t h = fnv1a64(&seed, sizeof(seed));
    h = fnv1a64(&index, sizeof(index), h);
    return Rng(h);
}

}  // namespace clearsky
