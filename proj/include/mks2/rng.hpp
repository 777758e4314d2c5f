#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

#include "mks2/common.hpp"

namespace mks2 {

// Counter-based generator: every draw is a pure function of
// (master seed, purpose label, index). There is no mutable stream state,
// so any consumer can be re-run, reordered, or parallelized per index
// without changing a single bit of output.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {}

    uint64_t seed() const { return seed_; }

    // Child generator for a subsystem; equivalent to prefixing every label.
    Rng split(std::string_view scope) const {
        return Rng(mix_(seed_, fnv1a(scope), 0x9e3779b97f4a7c15ull));
    }

    uint64_t bits(std::string_view label, uint64_t index) const {
        return mix_(seed_, fnv1a(label), index);
    }

    // Uniform in [0, 1), 53-bit mantissa.
    double uniform(std::string_view label, uint64_t index) const {
        return static_cast<double>(bits(label, index) >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    uint64_t uniform_int(std::string_view label, uint64_t index, uint64_t n) const {
        require(n > 0, "rng: uniform_int needs n > 0");
        return static_cast<uint64_t>(uniform(label, index) * static_cast<double>(n));
    }

    // Standard normal via Box-Muller; draw i consumes uniforms (2i, 2i+1).
    double normal(std::string_view label, uint64_t index) const {
        const uint64_t h = fnv1a(label);
        double u1 = static_cast<double>(mix_(seed_, h, 2 * index) >> 11) * 0x1.0p-53;
        double u2 = static_cast<double>(mix_(seed_, h, 2 * index + 1) >> 11) * 0x1.0p-53;
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    void fill_normal(std::string_view label, float* out, size_t n, double stddev) const {
        for (size_t i = 0; i < n; ++i)
            out[i] = static_cast<float>(normal(label, i) * stddev);
    }

    // Fisher-Yates permutation of [0, n).
    std::vector<int64_t> permutation(std::string_view label, int64_t n) const {
        std::vector<int64_t> p(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
        for (int64_t i = n - 1; i > 0; --i) {
            auto j = static_cast<int64_t>(
                uniform_int(label, static_cast<uint64_t>(i), static_cast<uint64_t>(i) + 1));
            std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
        }
        return p;
    }

private:
    // Two rounds of the splitmix64 finalizer over the combined words.
    static uint64_t mix_(uint64_t a, uint64_t b, uint64_t c) {
        uint64_t x = a;
        x ^= b + 0x9e3779b97f4a7c15ull + (x << 6) + (x >> 2);
        x ^= c + 0x9e3779b97f4a7c15ull + (x << 6) + (x >> 2);
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        x ^= x >> 31;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    uint64_t seed_;
};

} // namespace mks2
