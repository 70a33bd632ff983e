#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace promptforge {

/// Deterministic 64-bit generator (SplitMix64). Used instead of <random>
/// engines + distributions because std distributions are not bit-stable
/// across standard library implementations, and seeded runs must replay
/// identically everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, bound). bound must be > 0.
    std::uint64_t next_below(std::uint64_t bound) { return next() % bound; }

    /// Uniform in [0, 1).
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i + 1));
            using std::swap;
            swap(v[i], v[j]);
        }
    }

    /// k distinct indices from [0, n), in draw order. k must be <= n.
    std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + static_cast<std::size_t>(next_below(n - i));
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

private:
    std::uint64_t state_;
};

/// 64-bit FNV-1a over arbitrary bytes.
std::uint64_t fnv1a64(std::string_view data);

/// fnv1a64 rendered as 16 lowercase hex characters.
std::string hex_digest(std::string_view data);

/// Derives a labeled sub-seed from a run seed, so one seed knob drives every
/// module's RNG without correlated streams.
std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view label);

} // namespace promptforge
