#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "fdbd/types.hpp"

namespace fdbd {

/// Derives a child seed from (seed, name). Every consumer of randomness
/// draws from its own named substream so adding a call site never shifts
/// the values seen by another.
std::uint64_t substream(std::uint64_t seed, std::string_view name);

/// Deterministic random source. Gaussian variates come from Box-Muller on
/// top of mt19937_64 so that streams are reproducible across standard
/// library implementations (std::normal_distribution is not pinned).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform double in [0, 1).
    double uniform();

    /// Uniform integer in [0, n), n >= 1.
    int uniform_int(int n);

    /// Standard normal variate.
    double normal();

    /// Vector of n standard normal variates.
    Vector normal_vector(Index n);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fdbd
