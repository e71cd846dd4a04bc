#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <vector>

namespace gdro {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Folds an ordered list of integers into one 64-bit stream key.
inline std::uint64_t mix_key(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x6A09E667F3BCC909ull;
    for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ull));
    return h;
}

/// Counter-based generator: the n-th draw is a pure function of (key, n), so a
/// stream keyed by e.g. (seed, condition, sample) yields the same values no
/// matter which thread or in which order it is consumed.
class KeyedRng {
public:
    explicit KeyedRng(std::uint64_t key) : key_(key) {}
    KeyedRng(std::initializer_list<std::uint64_t> parts) : key_(mix_key(parts)) {}

    using result_type = std::uint64_t;
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    result_type operator()() { return splitmix64(key_ ^ splitmix64(counter_++)); }

    /// Uniform in the open interval (0, 1).
    double uniform() {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Lemire's multiply-shift with rejection.
        std::uint64_t x = (*this)();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                x = (*this)();
                m = static_cast<__uint128_t>(x) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Standard normal via Box-Muller; both halves are used.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Fisher-Yates permutation of [0, n), portable across standard libraries.
inline std::vector<std::size_t> random_permutation(std::size_t n, KeyedRng& rng) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

}  // namespace gdro
