#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace posdrift {

// One round of the splitmix64 output function (Steele, Lea, Flood 2014).
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Deterministic per-replicate seed: two splitmix64 rounds on
// master ^ golden_ratio * (index + 1).  Distinct indices give independent
// streams; replicate 0 does not collide with the master itself.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t s = master ^ (0x9E3779B97F4A7C15ull * (index + 1));
    (void)splitmix64(s);
    return splitmix64(s);
}

// Standard-normal sampler: mt19937_64 + Box-Muller.
// std::normal_distribution is not bit-identical across standard libraries,
// and frozen test values require a reproducible stream, so the transform is
// spelled out.  Each pair of engine draws yields two normals.
class NormalSampler {
public:
    explicit NormalSampler(std::uint64_t seed) : eng_(seed) {}

    double operator()() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // Map to (0,1]: u1 must stay away from 0 for the log.
        double u1 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
        double u2 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double phi = 2.0 * M_PI * u2;
        spare_ = r * std::sin(phi);
        has_spare_ = true;
        return r * std::cos(phi);
    }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Compensated (Kahan) accumulator so that replicate aggregation gives the
// same result regardless of harmless reassociation elsewhere.
class KahanSum {
public:
    void add(double x) {
        const double y = x - c_;
        const double t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    double value() const { return s_; }

private:
    double s_ = 0.0;
    double c_ = 0.0;
};

}  // namespace posdrift
