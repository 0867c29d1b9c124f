#pragma once
// Deterministic random numbers. std::mt19937_64 provides the raw stream, but
// all derived draws (uniform, normal, integer ranges, shuffles) are
// implemented here because the std distribution objects are allowed to differ
// between standard library implementations. Same seed, same sequence,
// everywhere.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "emgdis/errors.hpp"

namespace emgdis {

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller, cached spare.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Unbiased integer in [0, n) by rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) throw ValidationError("Rng::below requires n >= 1");
        const uint64_t rem = (UINT64_MAX % n + 1) % n;  // 2^64 mod n
        if (rem == 0) return eng_() % n;
        const uint64_t limit = UINT64_MAX - rem + 1;  // largest multiple of n
        uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return x % n;
    }

    // Fisher-Yates shuffle.
    template <typename V>
    void shuffle(V& v) {
        if (v.size() < 2) return;
        for (size_t i = v.size() - 1; i > 0; --i) {
            const size_t j = static_cast<size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // Independent stream derived from a base seed, splitmix64 style.
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace emgdis
