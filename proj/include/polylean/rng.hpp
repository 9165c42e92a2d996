#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

namespace polylean {

/// Seedable, splittable pseudo-random generator: xoshiro256** seeded through
/// SplitMix64. All distributions are implemented here rather than taken from
/// <random> so that a seed produces the same stream on every platform.
class Rng {
public:
    static constexpr std::string_view kAlgorithm = "xoshiro256**+splitmix64/v1";

    explicit Rng(std::uint64_t seed);

    /// Independent substream for (seed, stream). Used for per-replicate and
    /// per-agent streams so that results do not depend on scheduling.
    static Rng derive(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next();

    /// Uniform on [0, 1) with 53 bits of precision.
    double uniform();
    double uniform(double lo, double hi);

    /// Uniform integer on [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    /// Uniform integer on [lo, hi] inclusive.
    std::int64_t integer(std::int64_t lo, std::int64_t hi);

    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    double lognormal(double log_mean, double log_std);
    double exponential(double rate);
    std::uint64_t poisson(double mean);

    /// Index drawn with probability proportional to `cumulative` increments.
    /// `cumulative` must be nondecreasing with a positive last element.
    std::size_t weighted_index(std::span<const double> cumulative);

private:
    std::array<std::uint64_t, 4> s_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

} // namespace polylean
