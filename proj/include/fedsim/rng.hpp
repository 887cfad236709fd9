#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace fedsim {

// Counter-based random number generation. Every draw is a pure function of
// (key, counter), so any consumer that records its stream state can replay
// the exact same values, and parallel clients stay deterministic as long as
// they use distinct keys. Keys are derived by hashing tuples such as
// (global seed, client id, round, purpose).

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

// Keyed block function: two mixing rounds with the key injected twice, so
// streams with different keys are statistically unrelated (not just offset).
inline std::uint64_t stream_block(std::uint64_t key, std::uint64_t counter) {
    std::uint64_t z = counter + kGoldenGamma;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z ^= key;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return mix64(z + key);
}

inline std::uint64_t derive_key(std::uint64_t a) { return mix64(a + kGoldenGamma); }

template <typename... Rest>
std::uint64_t derive_key(std::uint64_t a, std::uint64_t b, Rest... rest) {
    if constexpr (sizeof...(rest) == 0) {
        return mix64(derive_key(a) ^ (b + kGoldenGamma));
    } else {
        return derive_key(derive_key(a, b), rest...);
    }
}

// Stream purposes. Distinct constants keep e.g. the shuffle order of a client
// independent from its augmentation draws within the same round.
namespace purpose {
inline constexpr std::uint64_t kInit = 0x11;
inline constexpr std::uint64_t kShuffle = 0x22;
inline constexpr std::uint64_t kAugment = 0x33;
inline constexpr std::uint64_t kAttack = 0x44;
inline constexpr std::uint64_t kClientSample = 0x55;
inline constexpr std::uint64_t kMixfatAssign = 0x66;
inline constexpr std::uint64_t kBlobCenter = 0x77;
inline constexpr std::uint64_t kBlobNoise = 0x88;
inline constexpr std::uint64_t kSubsample = 0x99;
inline constexpr std::uint64_t kPartition = 0xAA;
inline constexpr std::uint64_t kClient = 0xBB;
inline constexpr std::uint64_t kEval = 0xCC;
}  // namespace purpose

struct RngStream {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;

    std::uint64_t next_u64() { return stream_block(key, counter++); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1); safe to feed into log().
    double next_double_open() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n) via multiply-shift.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller; consumes exactly two counter steps.
    double normal() {
        const double u1 = next_double_open();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }
};

// Gamma(shape, 1) via Marsaglia-Tsang, with the usual boost for shape < 1.
inline double gamma_sample(RngStream& rng, double shape) {
    if (shape < 1.0) {
        const double u = rng.next_double_open();
        return gamma_sample(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / (3.0 * std::sqrt(d));
    for (;;) {
        const double x = rng.normal();
        const double t = 1.0 + c * x;
        if (t <= 0.0) continue;
        const double v = t * t * t;
        const double u = rng.next_double_open();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

// Dirichlet(alpha * 1_n) proportions.
inline std::vector<double> dirichlet_sample(RngStream& rng, std::size_t n, double alpha) {
    std::vector<double> p(n);
    for (;;) {
        double sum = 0.0;
        for (auto& x : p) {
            x = gamma_sample(rng, alpha);
            sum += x;
        }
        if (sum > 0.0 && std::isfinite(sum)) {
            for (auto& x : p) x /= sum;
            return p;
        }
    }
}

}  // namespace fedsim
