#pragma once

// Shared numeric helpers and the deterministic RNG used throughout.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace hydrotrack {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

// Wraps an angle to (-pi, pi].
inline double wrap_angle(double theta) {
    double w = std::remainder(theta, kTwoPi);
    if (w <= -kPi) w += kTwoPi;
    return w;
}

// splitmix64 finalizer; used to derive independent per-trial seeds so that
// changing the batch size never reshuffles earlier trials.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return mix_seed(master ^ mix_seed(index + 1));
}

// Deterministic RNG. Gaussian draws use Box-Muller on raw uniform bits so the
// stream does not depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

private:
    std::mt19937_64 engine_;
};

}  // namespace hydrotrack
