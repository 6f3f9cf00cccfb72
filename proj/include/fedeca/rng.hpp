#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace fedeca {

// ============================================================================
// Deterministic randomness.
//
// Generator: xoshiro256++ seeded through splitmix64. Every consumer derives
// its own stream from (seed, tag, index), so draws never depend on the order
// in which patients, replicates or replications are processed:
//
//   stream(seed, tag)             cohort-level draws (outcome coefficients,
//                                 allocation coefficients, splits)
//   stream(seed, tag, i)          patient-level draws (covariate row,
//                                 treatment flag, event and censoring times
//                                 of patient i)
//   derive_seed(seed, r)          counter-mode replication seeds for
//                                 Monte-Carlo harnesses
//
// Distribution transforms are implemented here (53-bit uniforms, inverse-CDF
// normals) instead of <random> so results do not depend on the standard
// library implementation.
// ============================================================================

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Counter-mode seed derivation: replication r of a master seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t counter) {
    std::uint64_t s = seed ^ (0xA0761D6478BD642Full + counter * 0xE7037ED1A0B428DBull);
    return splitmix64_next(s);
}

class Xoshiro256 {
public:
    explicit Xoshiro256(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64_next(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, bound) without modulo bias (Lemire).
    std::uint64_t next_below(std::uint64_t bound) {
        std::uint64_t x = next_u64();
        unsigned __int128 m = static_cast<unsigned __int128>(x) * bound;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (lo < threshold) {
                x = next_u64();
                m = static_cast<unsigned __int128>(x) * bound;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    double next_normal() { return inverse_normal_cdf(next_open_double()); }

    // Exponential with rate lambda (mean 1/lambda).
    double next_exponential(double lambda) {
        return -std::log(next_open_double()) / lambda;
    }

    bool next_bernoulli(double prob) { return next_double() < prob; }

    // Uniform on (0, 1): never returns an endpoint, safe under log/quantile.
    double next_open_double() {
        double u;
        do {
            u = next_double();
        } while (u <= 0.0);
        return u;
    }

    // Inverse standard-normal CDF, Wichura's PPND16 (algorithm AS 241).
    // Absolute error below 1e-15 over (0, 1).
    static double inverse_normal_cdf(double p) {
        const double q = p - 0.5;
        if (std::abs(q) <= 0.425) {
            const double r = 0.180625 - q * q;
            return q *
                   (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                         6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
                       1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
                     1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
                   (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                         3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
                       5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
                     4.2313330701600911252e+1) * r + 1.0);
        }
        double r = (q < 0.0) ? p : 1.0 - p;
        r = std::sqrt(-std::log(r));
        double value;
        if (r <= 5.0) {
            r -= 1.6;
            value = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                          2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
                        3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
                      4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
                    (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                          1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                        6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
                      2.05319162663775882187e+0) * r + 1.0);
        } else {
            r -= 5.0;
            value = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                          1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                        2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
                      5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
                    (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                          1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                        1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                      5.99832206555887937690e-1) * r + 1.0);
        }
        return (q < 0.0) ? -value : value;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_;
};

// Stream tags, one per independent consumer of a seed.
enum class StreamTag : std::uint64_t {
    outcome_coefficients = 1,
    allocation_coefficients = 2,
    patient = 3,
    split = 4,
    bootstrap = 5,
};

inline Xoshiro256 stream(std::uint64_t seed, StreamTag tag, std::uint64_t index = 0) {
    std::uint64_t s = seed;
    s ^= 0xD1B54A32D192ED03ull * (static_cast<std::uint64_t>(tag) + 1);
    s = splitmix64_next(s);
    s ^= 0x8BB84B93962EACC9ull * (index + 1);
    return Xoshiro256(splitmix64_next(s));
}

} // namespace fedeca
