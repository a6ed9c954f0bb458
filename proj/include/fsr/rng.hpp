#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace fsr {

// Seeded generator with explicitly pinned distributions.  std::mt19937_64 has
// a standard-mandated sequence, but the std distributions do not, so normal
// and Poisson draws are implemented here to keep artifacts bit-reproducible.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; consumes exactly two uniforms per sample.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = 1.0 - uniform01();  // (0, 1]
        double u2 = uniform01();
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        return mean + stddev * z;
    }

    // Poisson draw.  Knuth's product-of-uniforms for modest means; larger
    // means are split additively (Poisson(a+b) = Poisson(a) + Poisson(b))
    // so the product never underflows.
    long poisson(double mean) {
        if (mean <= 0.0) return 0;
        long total = 0;
        while (mean > 500.0) {
            total += poisson_knuth(500.0);
            mean -= 500.0;
        }
        return total + poisson_knuth(mean);
    }

    // Fisher-Yates over [0, n); used for per-epoch sample ordering.
    template <typename Int>
    void shuffle_indices(std::vector<Int>& idx) {
        for (size_t i = idx.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(engine_() % i);
            std::swap(idx[i - 1], idx[j]);
        }
    }

    // A freshly shuffled permutation of [0, n).
    std::vector<size_t> shuffle_indices(size_t n) {
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        shuffle_indices(idx);
        return idx;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    long poisson_knuth(double mean) {
        double limit = std::exp(-mean);
        long k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform01();
        } while (p > limit);
        return k - 1;
    }

    std::mt19937_64 engine_;
};

}  // namespace fsr
