#include "adafm/random.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace adafm {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t RandomSource::next_u64() {
    ++counter_;
    return splitmix64(seed_ + counter_ * kGolden);
}

double RandomSource::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t RandomSource::below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("RandomSource::below(0)");
    // Rejection keeps the draw unbiased.
    const std::uint64_t limit = ~0ULL - (~0ULL % bound);
    std::uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % bound;
}

double RandomSource::gaussian() {
    if (spare_) {
        const double v = *spare_;
        spare_.reset();
        return v;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    return radius * std::cos(angle);
}

RandomSource RandomSource::fork(std::uint64_t tag) const {
    return RandomSource(splitmix64(seed_ ^ splitmix64(tag + kGolden)));
}

Tensor randn(RandomSource& src, Shape shape, float mean, float std) {
    if (!(std >= 0.0f)) throw std::invalid_argument("randn: negative standard deviation");
    Tensor out(shape, mean);
    if (std == 0.0f) return out;
    for (float& v : out.data()) v = mean + std * static_cast<float>(src.gaussian());
    return out;
}

}  // namespace adafm
