#pragma once

#include <cmath>
#include <cstdint>

#include "asdfd/common.hpp"

namespace asdfd {

// Deterministic RNG (splitmix64 core, Box-Muller normals). We avoid the std
// distributions on purpose: their output is implementation-defined, and seeded
// runs are required to reproduce bitwise on a given machine regardless of the
// standard library in use.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], inclusive. Rejection sampling keeps it unbiased.
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw precondition_error("uniform_int: empty range");
        uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return lo + static_cast<int>(r % span);
    }

    double normal(double mu, double sigma) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + sigma * spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mu + sigma * r * std::cos(theta);
    }

    // Derive an independent deterministic stream (used to give each batch,
    // sweep arm or worker its own sequence).
    Rng fork(uint64_t stream) {
        uint64_t mixed = next_u64();
        return Rng(mixed ^ (stream * 0xD6E8FEB86659FD93ull + 0x2545F4914F6CDD1Dull));
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace asdfd
