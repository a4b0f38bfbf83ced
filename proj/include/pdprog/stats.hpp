#pragma once

#include <span>
#include <vector>

namespace pdprog::stats {

double mean(std::span<const double> x);
/// Population (ddof = 0) variance.
double variance(std::span<const double> x);

/// Fisher-Pearson g1 = m3 / m2^(3/2) with population central moments.
/// Summation runs over sorted values, so the result is bit-identical under any
/// permutation of the input.
/// Errors: TooFewValues (< 3 values), ZeroVariance.
double skewness(std::span<const double> x);

/// True when skewness is defined and its magnitude exceeds `threshold`.
bool is_skewed(std::span<const double> x, double threshold);

/// Pearson correlation; 0 when either side is constant. Requires equal sizes >= 2.
double pearson(std::span<const double> x, std::span<const double> y);

/// Linear-interpolated quantile of unsorted data, q in [0, 1].
double quantile(std::vector<double> x, double q);

}  // namespace pdprog::stats
