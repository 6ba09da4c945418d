/// @file rng.hpp
/// @brief Seeded counter-based random streams.
///
/// A stream is a (key, counter) pair; the n-th draw is a pure function of both,
/// so any stochastic operation is reproducible from its seed and stream id.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace gsopt {

namespace detail {

constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Named stream ids for the stochastic operations of a training run.
enum class Stream : std::uint64_t {
    Scene = 1,
    ViewOrder,
    StateSampling,
    ImplicitUpdate,
    Noise,
    Densify,
    Relocate,
    SceneInit,
    Test = 99,
};

class Rng {
public:
    using result_type = std::uint64_t;

    constexpr explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(detail::mix64(seed * 0x9e3779b97f4a7c15ULL + detail::mix64(stream + 0x632be59bd9b4e019ULL))) {}
    constexpr Rng(std::uint64_t seed, Stream stream) : Rng(seed, static_cast<std::uint64_t>(stream)) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() { return detail::mix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n > 0.
    std::uint64_t below(std::uint64_t n) {
        // Lemire's rejection keeps the result exactly uniform.
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = (*this)();
            if (r >= threshold) return r % n;
        }
    }

    /// Standard normal via Box-Muller; pure arithmetic, so identical on every platform.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace gsopt
