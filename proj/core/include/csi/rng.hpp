#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace csi {

// Deterministic RNG used everywhere in the library.
//
// The raw generator is std::mt19937_64, but the real-valued draws are
// implemented here instead of going through <random> distributions, whose
// output is implementation-defined. This keeps datasets, initializations
// and attack restarts reproducible for a fixed seed across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed == 0 ? 0x9e3779b97f4a7c15ULL : seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) {
        // Rejection sampling avoids modulo bias.
        const std::uint64_t limit = n * (~0ULL / n);
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller; one value per call, spare cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent stream from (seed, stage tag, indices).
    // Used to give every (seed, stage, sample, restart, ...) cell its own
    // reproducible stream regardless of scheduling.
    static std::uint64_t derive(std::uint64_t seed, std::string_view stage,
                                std::uint64_t a = 0, std::uint64_t b = 0) {
        std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
        auto mix = [&h](std::uint64_t v) {
            h ^= v;
            h *= 0x100000001b3ULL;
            h ^= h >> 29;
            h *= 0xbf58476d1ce4e5b9ULL;
            h ^= h >> 32;
        };
        for (const char c : stage) mix(static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
        mix(a + 0x9e3779b97f4a7c15ULL);
        mix(b + 0x6a09e667f3bcc909ULL);
        return h == 0 ? 0x2545f4914f6cdd1dULL : h;
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace csi
