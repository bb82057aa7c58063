#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace lsr {

/// Deterministic random source. All draws are derived from the raw 64-bit
/// output of a seeded mt19937_64 so that byte-identical streams come out of
/// equal seeds on every platform (the std:: distributions make no such
/// guarantee across standard library implementations).
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    /// Zero-mean Laplace with scale b (variance 2b^2), via inverse CDF.
    double laplace(double b) {
        const double u = uniform() - 0.5;
        const double sign = u < 0.0 ? -1.0 : 1.0;
        return -b * sign * std::log(1.0 - 2.0 * std::abs(u));
    }

    /// Integer in [0, n).
    uint64_t below(uint64_t n) {
        // Rejection sampling keeps the draw unbiased.
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return v % n;
    }

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<size_t> permutation(size_t n) {
        std::vector<size_t> p(n);
        for (size_t i = 0; i < n; ++i) p[i] = i;
        for (size_t i = n; i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Derives an independent stream seed from (root seed, stream tag).
/// splitmix64 finalizer; good avalanche, stable across builds.
inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace lsr
