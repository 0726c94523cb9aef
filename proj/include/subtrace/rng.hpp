#pragma once

#include <cstdint>

namespace subtrace {

// Seedable, splittable deterministic PRNG (splitmix64). Every stochastic
// operation takes one of these explicitly so runs are reproducible.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53 mantissa bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Independent child stream; parent advances by one draw.
    RandomSource split() {
        return RandomSource(next_u64() ^ 0x5851f42d4c957f2dULL);
    }

private:
    std::uint64_t state_;
};

}  // namespace subtrace
