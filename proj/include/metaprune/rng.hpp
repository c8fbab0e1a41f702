#pragma once

// Portable random streams. std::mt19937_64 is bit-specified by the standard,
// but the std distributions are not, so the draws we rely on for replayable
// runs are implemented here.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string_view>

namespace metaprune {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_label(std::string_view label) {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Derive an independent stream seed from a root seed and a path of labels/indices.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
    return splitmix64(root ^ splitmix64(hash_label(label)));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t a) {
    return splitmix64(derive_seed(root, label) ^ splitmix64(a + 0x632BE59BD9B4E019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t a,
                                 std::uint64_t b) {
    return splitmix64(derive_seed(root, label, a) ^ splitmix64(b + 0x8CB92BA72F3D8DD7ULL));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(splitmix64(seed)) {}

    std::uint64_t next() { return engine_(); }

    // Uniform integer in [lo, hi], rejection sampled (no modulo bias).
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(next());
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % span;
        std::uint64_t r = next();
        while (r >= limit) r = next();
        return lo + static_cast<std::int64_t>(r % span);
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one value per call keeps the stream position easy to reason about.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        return mean + stddev * z;
    }

    template <typename Container>
    void shuffle(Container& c) {
        for (std::size_t i = c.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(c[i - 1], c[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace metaprune
