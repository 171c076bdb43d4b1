#pragma once

#include <cstdint>
#include <vector>

namespace crac {

// Deterministic PRNG (xoshiro256++ seeded through splitmix64). The standard
// <random> distributions are implementation-defined, so every draw used for
// data generation or initialization goes through this class to keep outputs
// bit-identical across runs and toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    // Independent stream derived from (seed, stream); streams with distinct
    // ids never share state.
    Rng(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64();

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform01();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Unbiased integer in [0, n); n must be > 0.
    std::uint64_t below(std::uint64_t n);
    // Standard normal via the polar method.
    double normal();
    double normal(double mean, double stddev);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::uint64_t state_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace crac
