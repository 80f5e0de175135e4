#include "fdbd/rng.hpp"

#include <cmath>
#include <numbers>

namespace fdbd {

std::uint64_t substream(std::uint64_t seed, std::string_view name) {
    // FNV-1a over the name, then splitmix64-style mixing with the seed.
    std::uint64_t h = 14695981039346656037ull;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    std::uint64_t x = seed + 0x9e3779b97f4a7c15ull + h;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

int Rng::uniform_int(int n) {
    const std::uint64_t bucket = UINT64_MAX / static_cast<std::uint64_t>(n);
    std::uint64_t r;
    do {
        r = engine_() / bucket;
    } while (r >= static_cast<std::uint64_t>(n));
    return static_cast<int>(r);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

Vector Rng::normal_vector(Index n) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) {
        v[i] = normal();
    }
    return v;
}

}  // namespace fdbd
