#include "pdprog/stats.hpp"

#include <algorithm>
#include <cmath>

#include "pdprog/error.hpp"

namespace pdprog::stats {

double mean(std::span<const double> x) {
  if (x.empty()) throw data_error("Empty", "mean of empty vector");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

double skewness(std::span<const double> x) {
  if (x.size() < 3) throw data_error("TooFewValues", "skewness needs at least 3 values");
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  const double m = mean(sorted);
  double m2 = 0.0;
  double m3 = 0.0;
  double scale = 0.0;
  for (double v : sorted) {
    const double d = v - m;
    m2 += d * d;
    m3 += d * d * d;
    scale = std::max(scale, std::abs(v));
  }
  m2 /= n;
  m3 /= n;
  // Spread at rounding level of the data counts as constant.
  const double floor = 1e-12 * scale;
  if (m2 <= floor * floor) throw data_error("ZeroVariance", "skewness of a constant column");
  return m3 / std::pow(m2, 1.5);
}

bool is_skewed(std::span<const double> x, double threshold) {
  if (x.size() < 3) return false;
  try {
    return std::abs(skewness(x)) > threshold;
  } catch (const Error&) {
    return false;
  }
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw data_error("LengthMismatch", "pearson needs two equal-length vectors of size >= 2");
  }
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double quantile(std::vector<double> x, double q) {
  if (x.empty()) throw data_error("Empty", "quantile of empty vector");
  std::sort(x.begin(), x.end());
  const double pos = q * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, x.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return x[lo] + frac * (x[hi] - x[lo]);
}

}  // namespace pdprog::stats
