#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace inst4d {

// Counter-based splittable RNG (SplitMix64 core). Streams derived with
// split() are independent of the draw order of the parent, so parallel
// consumers can be seeded per work item without changing output.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

    Rng split(uint64_t stream) const {
        return Rng(mix(state_ + 0xbf58476d1ce4e5b9ull * (stream + 1)));
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Standard normal via Box-Muller (two uniforms per draw, no cache).
    double next_normal() {
        double u1 = 1.0 - next_double();  // (0, 1]
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Uniform integer in [0, n), n >= 1. Lemire reduction; bias is far below
    // anything observable at desk scale and the mapping is deterministic.
    int next_int(int n) {
        return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                                 static_cast<unsigned __int128>(n)) >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            std::swap(v[i], v[static_cast<size_t>(next_int(i + 1))]);
        }
    }

    // Sample k distinct indices from [0, n) in selection order.
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> pool(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
        shuffle(pool);
        pool.resize(static_cast<size_t>(k < n ? k : n));
        return pool;
    }

private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t state_;
};

}  // namespace inst4d
