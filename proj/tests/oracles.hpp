#pragma once

// Brute-force reference implementations used by the unit and acceptance
// tests. They deliberately avoid the library's code paths.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline double dist(const Vec& a, const Vec& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(static_cast<double>(s));
}

inline double sqdist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Index of the labeled point nearest to `u`; among equal distances the one
/// with the smallest id wins. Exhaustive over all pairs.
inline std::size_t nearest(const Vec& u, const std::vector<Vec>& labeled, const std::vector<std::int64_t>& ids) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < labeled.size(); ++i) {
    const double di = sqdist(u, labeled[i]), db = sqdist(u, labeled[best]);
    if (di < db || (di == db && ids[i] < ids[best])) best = i;
  }
  return best;
}

/// Gallery order by counting, for each entry, how many entries precede it
/// under (distance, id). O(n^2), no sort.
inline std::vector<std::size_t> ranking_order(const std::vector<double>& distances, const std::vector<std::int64_t>& ids) {
  const std::size_t n = distances.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t before = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (distances[j] < distances[i] || (distances[j] == distances[i] && ids[j] < ids[i])) ++before;
    order[before] = i;
  }
  return order;
}

/// CMC at `k` from per-probe match flags in ranked order.
inline double cmc(const std::vector<std::vector<bool>>& matches, std::size_t k) {
  double hits = 0.0;
  for (const auto& m : matches) {
    bool hit = false;
    for (std::size_t i = 0; i < m.size() && i < k; ++i) hit = hit || m[i];
    hits += hit ? 1.0 : 0.0;
  }
  return hits / static_cast<double>(matches.size());
}

/// Mean of per-probe average precision, computed as the mean over relevant
/// positions of precision@position.
inline double mean_ap(const std::vector<std::vector<bool>>& matches) {
  double total = 0.0;
  for (const auto& m : matches) {
    double ap = 0.0;
    int relevant = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!m[i]) continue;
      int correct_up_to_i = 0;
      for (std::size_t j = 0; j <= i; ++j) correct_up_to_i += m[j] ? 1 : 0;
      ap += static_cast<double>(correct_up_to_i) / static_cast<double>(i + 1);
      ++relevant;
    }
    total += ap / relevant;
  }
  return total / static_cast<double>(matches.size());
}

inline Vec random_vec(std::mt19937_64& rng, std::size_t d, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vec v(d);
  for (double& x : v) x = n(rng);
  return v;
}

}  // namespace oracle
