#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace alip {

// splitmix64 finalizer. Used to derive independent seeds from a base seed
// plus a stream tag so that e.g. corpus generation and parameter init do not
// share a random stream.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    return mix64(mix64(base) ^ mix64(stream + 0x517cc1b727220a95ull));
}

// Deterministic random source. std::mt19937_64 is bit-exact across
// implementations; the distribution helpers below are hand-rolled because the
// standard library distribution objects are not guaranteed to produce the
// same sequences everywhere, and corpus files must regenerate byte-identically.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Modulo bias is below 2^-50 for any n that
    // fits this codebase; determinism matters more here.
    std::uint64_t uniform_int(std::uint64_t n) { return engine_() % n; }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Standard normal via Box-Muller; caches the second variate.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::mt19937_64 engine_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace alip
