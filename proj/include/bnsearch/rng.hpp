#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace bnsearch {

// Deterministic splitmix64 generator. Self-contained so that every stream is
// bit-identical across platforms and standard libraries; std::mt19937 plus
// the std distributions would not give that guarantee.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

    // Unbiased integer in [0, n) via rejection.
    uint64_t next_below(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    int next_int(int n) { return static_cast<int>(next_below(static_cast<uint64_t>(n))); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    float uniform_f(float lo, float hi) {
        return lo + (hi - lo) * static_cast<float>(uniform());
    }

    // Box-Muller; consumes two draws per sample, no cached spare so the
    // stream position is easy to reason about.
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Fisher-Yates permutation of {0..n-1}.
    std::vector<int> permutation(int n) {
        std::vector<int> p(static_cast<size_t>(n));
        std::iota(p.begin(), p.end(), 0);
        for (int i = n - 1; i > 0; --i) {
            int j = next_int(i + 1);
            std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
        }
        return p;
    }

    void shuffle(std::vector<int>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = next_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    // Independent child stream; mixes the tag through one splitmix round.
    Rng fork(uint64_t tag) {
        Rng child(state_ ^ (0xd1b54a32d192ed03ULL * (tag + 1)));
        child.next_u64();
        return child;
    }

private:
    uint64_t state_;
};

}  // namespace bnsearch
