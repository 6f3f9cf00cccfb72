#pragma once
#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "fedeca/errors.hpp"

namespace fedeca {

// ============================================================================
// Exact, order-invariant summation of binary64 values.
//
// A fixed-point accumulator over the full double range: every finite double
// is an integer multiple of 2^-1074, so sums are accumulated as wide integers
// split into 32-bit limbs (stored in int64 lanes, leaving headroom for ~2^30
// additions before any carry propagation is needed). Addition of doubles and
// merging of accumulators are exact integer operations, hence associative and
// commutative: any grouping of the same summands - per-center partial sums
// merged at an aggregator, or one pooled pass - yields bit-identical results
// once rounded back to double.
//
// This is what makes the federated analytics exactly partition-invariant.
// ============================================================================

class ExactSum {
public:
    // 2098 bits cover all finite doubles; +1 limb absorbs carries from sums.
    static constexpr int kLimbs = 67;
    static constexpr int kLimbBits = 32;

    ExactSum() { limbs_.fill(0); }

    void add(double x) {
        if (!std::isfinite(x)) throw data_error("exact_sum: non-finite summand");
        if (x == 0.0) return;
        const auto bits = std::bit_cast<std::uint64_t>(x);
        const bool negative = bits >> 63;
        const auto exp_field = static_cast<int>((bits >> 52) & 0x7FF);
        std::uint64_t mantissa = bits & 0xFFFFFFFFFFFFFull;
        int offset; // exponent of the unit 2^-1074
        if (exp_field == 0) {
            offset = 0; // subnormal: mantissa * 2^-1074
        } else {
            mantissa |= 1ull << 52;
            offset = exp_field - 1; // mantissa * 2^(exp_field - 1075 + 1074)
        }
        const int limb = offset / kLimbBits;
        const int shift = offset % kLimbBits;
        const unsigned __int128 wide = static_cast<unsigned __int128>(mantissa) << shift;
        for (int i = 0; i < 3; ++i) {
            const auto part = static_cast<std::int64_t>(
                static_cast<std::uint64_t>(wide >> (kLimbBits * i)) & 0xFFFFFFFFull);
            if (part != 0) limbs_[limb + i] += negative ? -part : part;
        }
        if (++pending_ >= kNormalizeEvery) normalize();
    }

    // Exact merge of another accumulator (the aggregation primitive).
    void add(const ExactSum& other) {
        for (int i = 0; i < kLimbs; ++i) limbs_[i] += other.limbs_[i];
        if ((pending_ += other.pending_ + 1) >= kNormalizeEvery) normalize();
    }

    // Round the exact value to the nearest double (ties to even).
    double value() const {
        std::array<std::int64_t, kLimbs> limbs = limbs_;
        double sign = carry_propagate(limbs);
        int high = kLimbs - 1;
        while (high >= 0 && limbs[high] == 0) --high;
        if (high < 0) return 0.0;

        // Most significant bit position in units of 2^-1074.
        const int msb = high * kLimbBits + 63 -
                        std::countl_zero(static_cast<std::uint64_t>(limbs[high]));
        if (msb <= 52) {
            // Fits exactly in the mantissa (subnormal or tiny normal range).
            const auto lo = static_cast<std::uint64_t>(limbs[0]);
            const auto hi = (kLimbs > 1) ? static_cast<std::uint64_t>(limbs[1]) : 0ull;
            return sign * std::ldexp(static_cast<double>(lo | (hi << kLimbBits)), -1074);
        }

        std::uint64_t mant = extract_bits(limbs, msb - 52, 53);
        const bool guard = extract_bits(limbs, msb - 53, 1) != 0;
        bool sticky = false;
        for (int b = 0; b < msb - 53 && !sticky; b += kLimbBits) {
            const int count = std::min(kLimbBits, msb - 53 - b);
            sticky = extract_bits(limbs, b, count) != 0;
        }
        int exp2 = msb - 52 - 1074;
        if (guard && (sticky || (mant & 1))) {
            if (++mant == (1ull << 53)) {
                mant >>= 1;
                ++exp2;
            }
        }
        if (exp2 + 52 > 1023) {
            return sign * std::numeric_limits<double>::infinity();
        }
        return sign * std::ldexp(static_cast<double>(mant), exp2);
    }

    // Raw limb window [lo, lo+size) for serialization; merge with add_window.
    std::pair<int, std::vector<std::int64_t>> window() const {
        int lo = 0;
        int hi = kLimbs - 1;
        while (lo < kLimbs && limbs_[lo] == 0) ++lo;
        while (hi >= lo && limbs_[hi] == 0) --hi;
        return {lo, std::vector<std::int64_t>(limbs_.begin() + lo, limbs_.begin() + hi + 1)};
    }

    void add_window(int lo, std::span<const std::int64_t> limbs) {
        if (lo < 0 || lo + static_cast<int>(limbs.size()) > kLimbs)
            throw protocol_error("exact_sum: limb window out of range");
        for (std::size_t i = 0; i < limbs.size(); ++i) limbs_[lo + i] += limbs[i];
        if ((pending_ += 1) >= kNormalizeEvery) normalize();
    }

private:
    static constexpr std::int64_t kNormalizeEvery = std::int64_t{1} << 30;

    void normalize() {
        carry_propagate_signed(limbs_);
        pending_ = 0;
    }

    // Propagation keeping limbs in [0, 2^32) except the top limb, which
    // stays signed and carries the sign of the whole value.
    static void carry_propagate_signed(std::array<std::int64_t, kLimbs>& limbs) {
        std::int64_t carry = 0;
        for (int i = 0; i < kLimbs - 1; ++i) {
            limbs[i] += carry;
            carry = limbs[i] >> kLimbBits; // floor division by 2^32
            limbs[i] -= carry << kLimbBits;
        }
        limbs[kLimbs - 1] += carry; // headroom limb beyond the double range
    }

    // Full propagation into nonnegative limbs; returns the sign as +-1.
    static double carry_propagate(std::array<std::int64_t, kLimbs>& limbs) {
        carry_propagate_signed(limbs);
        int high = kLimbs - 1;
        while (high >= 0 && limbs[high] == 0) --high;
        if (high >= 0 && limbs[high] < 0) {
            for (auto& limb : limbs) limb = -limb;
            carry_propagate_signed(limbs);
            return -1.0;
        }
        return 1.0;
    }

    // Bits [from, from+count) of the nonnegative limb array, count <= 64.
    static std::uint64_t extract_bits(const std::array<std::int64_t, kLimbs>& limbs,
                                      int from, int count) {
        std::uint64_t out = 0;
        int produced = 0;
        int limb = from / kLimbBits;
        int bit = from % kLimbBits;
        while (produced < count && limb < kLimbs) {
            const auto chunk = static_cast<std::uint64_t>(limbs[limb]) >> bit;
            out |= chunk << produced;
            produced += kLimbBits - bit;
            bit = 0;
            ++limb;
        }
        return (count == 64) ? out : (out & ((1ull << count) - 1));
    }

    std::array<std::int64_t, kLimbs> limbs_;
    std::int64_t pending_ = 0;
};

} // namespace fedeca
