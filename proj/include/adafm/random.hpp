#pragma once

#include <cstdint>
#include <optional>

#include "adafm/tensor.hpp"

namespace adafm {

/// Counter-based 64-bit generator.
///
/// The i-th raw output is splitmix64(seed + (i + 1) * 0x9E3779B97F4A7C15), i.e.
/// the SplitMix64 finalizer applied to a Weyl sequence keyed by the seed. The
/// stream depends only on (seed, counter), so it is identical on every
/// platform. Gaussian draws use the Box-Muller transform on pairs of uniforms
/// and cache the second value of each pair.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);
    double gaussian();

    /// Independent stream derived from this one's seed and a tag; does not
    /// advance this generator.
    [[nodiscard]] RandomSource fork(std::uint64_t tag) const;

    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    std::optional<double> spare_;
};

std::uint64_t splitmix64(std::uint64_t x);

/// I.i.d. Gaussian tensor. Throws std::invalid_argument for std < 0.
Tensor randn(RandomSource& src, Shape shape, float mean = 0.0f, float std = 1.0f);

}  // namespace adafm
