#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ritseg {

// mt19937_64 with hand-rolled draw functions. The standard pins the engine's
// output sequence but not the <random> distributions, so distributions are
// implemented here to keep streams bit-stable across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0,1) with 53 random mantissa bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    float uniform_float() { return static_cast<float>(uniform()); }

    // Uniform in [lo,hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo,hi], inclusive.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(engine_() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Marsaglia polar method.
    double normal(double mean, double stddev) {
        double u, v, s;
        do {
            u = uniform(-1.0, 1.0);
            v = uniform(-1.0, 1.0);
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        return mean + stddev * u * std::sqrt(-2.0 * std::log(s) / s);
    }

private:
    std::mt19937_64 engine_;
};

// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t hash_u64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t combine_seed(std::uint64_t a, std::uint64_t b) {
    return hash_u64(a ^ hash_u64(b));
}

inline std::uint64_t combine_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return combine_seed(combine_seed(a, b), c);
}

} // namespace ritseg
