#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cnep/errors.hpp"

namespace cnep {

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw UsageError("mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Linear-interpolation quantile (type 7), q in [0, 1].
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw UsageError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median_of(const std::vector<double>& v) { return quantile(v, 0.5); }

inline double iqr_of(const std::vector<double>& v) { return quantile(v, 0.75) - quantile(v, 0.25); }

inline double stddev_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
}

/// Exact two-sided Wilcoxon signed-rank test on paired samples. Zero
/// differences are dropped, tied magnitudes get average ranks, and the null
/// distribution is enumerated over the doubled (integer) ranks.
inline double wilcoxon_signed_rank_p(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw UsageError("paired test needs equal sample sizes");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) diffs.push_back(a[i] - b[i]);
  const std::size_t n = diffs.size();
  if (n == 0) return 1.0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return std::abs(diffs[x]) < std::abs(diffs[y]); });
  std::vector<long> doubled_rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const long twice_avg = static_cast<long>(i + 1 + j + 1);  // 2 * mean of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) doubled_rank[order[k]] = twice_avg;
    i = j + 1;
  }
  long total = 0;
  long w_plus = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += doubled_rank[i];
    if (diffs[i] > 0) w_plus += doubled_rank[i];
  }
  // counts[s] = number of sign assignments with doubled positive rank sum s
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(doubled_rank[i]);
    for (std::size_t s = counts.size(); s-- > r;) counts[s] += counts[s - r];
  }
  const double all = std::pow(2.0, static_cast<double>(n));
  double lower = 0.0;
  double upper = 0.0;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    if (static_cast<long>(s) <= w_plus) lower += counts[s];
    if (static_cast<long>(s) >= w_plus) upper += counts[s];
  }
  return std::min(1.0, 2.0 * std::min(lower, upper) / all);
}

}  // namespace cnep
