#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace terse {

/// SplitMix64 counter-based generator.
///
/// The output for a given seed is fixed by the algorithm alone, so draws are
/// identical across compilers and platforms. All distribution transforms are
/// implemented here rather than through <random> distributions, whose
/// results are implementation-defined.
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), state_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection sampling removes modulo bias.
    std::uint64_t below(std::uint64_t n);

    // Standard normal via Box-Muller; the spare value is cached.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Independent child stream keyed by name; does not advance this stream.
    Rng fork(std::string_view stream) const;
    Rng fork(std::uint64_t stream) const;

    // Fisher-Yates permutation of [0, n).
    std::vector<std::size_t> permutation(std::size_t n);

    // k distinct indices from [0, n) in draw order (partial Fisher-Yates).
    std::vector<std::size_t> choose(std::size_t n, std::size_t k);

   private:
    std::uint64_t seed_;
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace terse
