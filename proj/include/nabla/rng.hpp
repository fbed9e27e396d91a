#pragma once

// Seeded random source with fully pinned-down float mappings. std::mt19937_64
// is bit-exact across platforms; the standard distributions are not, so the
// uniform and normal transforms are spelled out here.

#include <cmath>
#include <cstdint>
#include <random>

namespace nabla {

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    float uniform_f(float lo, float hi) { return float(uniform(lo, hi)); }

    // Standard normal via Box-Muller; two fresh uniforms per call keeps the
    // draw sequence independent of call history.
    double normal() {
        double u1 = double((gen_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = double(gen_() >> 11) * 0x1.0p-53;        // [0, 1)
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    float normal_f() { return float(normal()); }

private:
    std::mt19937_64 gen_;
};

}  // namespace nabla
