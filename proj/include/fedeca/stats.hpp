#pragma once
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace fedeca {

// Standard normal CDF.
inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// Two-sided p-value of a z statistic.
inline double two_sided_p(double z) {
    if (!std::isfinite(z)) return z == 0.0 ? 1.0 : 0.0;
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

inline double mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double sample_variance(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

// Linear-interpolation quantile (R type 7) of an unsorted sample.
inline double quantile(std::vector<double> xs, double q) {
    if (xs.empty()) throw std::invalid_argument("quantile of empty sample");
    std::sort(xs.begin(), xs.end());
    const double h = q * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

// CLT band half-width for a Bernoulli rate estimated from n trials.
inline double bernoulli_band(double rate, std::size_t n) {
    return 1.96 * std::sqrt(rate * (1.0 - rate) / static_cast<double>(n));
}

} // namespace fedeca
