#include "l2g/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <vector>

namespace l2g {
namespace {

double row_sqdist(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t d = a.cols();
  double s = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    const double diff = a(i, c) - b(j, c);
    s += diff * diff;
  }
  return s;
}

}  // namespace

Tensor kmeans(const Tensor& points, std::size_t k, Rng& rng, int iterations) {
  require_matrix(points, "kmeans");
  const std::size_t n = points.rows(), d = points.cols();
  if (n == 0) throw std::invalid_argument("kmeans: no points");
  if (k == 0) throw std::invalid_argument("kmeans: k must be positive");

  Tensor centroids({k, d});
  auto copy_row = [&](std::size_t src, std::size_t dst) {
    for (std::size_t c = 0; c < d; ++c) centroids(dst, c) = points(src, c);
  };

  copy_row(static_cast<std::size_t>(rng.below(n)), 0);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t m = 1; m < k; ++m) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], row_sqdist(points, i, centroids, m - 1));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        if (nearest[pick] > 0.0 && r < nearest[pick]) break;
        r -= nearest[pick];
      }
      // Round-off can land on a point that is already a centroid.
      if (nearest[pick] == 0.0) {
        pick = static_cast<std::size_t>(
            std::find_if(nearest.begin(), nearest.end(), [](double v) { return v > 0.0; }) -
            nearest.begin());
      }
    } else {
      pick = static_cast<std::size_t>(rng.below(n));
    }
    copy_row(pick, m);
  }

  std::vector<std::size_t> assign(n, 0);
  for (int it = 0; it < iterations; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = row_sqdist(points, i, centroids, 0);
      for (std::size_t m = 1; m < k; ++m) {
        const double dist = row_sqdist(points, i, centroids, m);
        if (dist < best_d) best_d = dist, best = m;
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
    }
    if (!changed) break;
    Tensor sums({k, d});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t c = 0; c < d; ++c) sums(assign[i], c) += points(i, c);
    }
    for (std::size_t m = 0; m < k; ++m) {
      if (counts[m] == 0) continue;
      for (std::size_t c = 0; c < d; ++c)
        centroids(m, c) = sums(m, c) / static_cast<double>(counts[m]);
    }
  }
  return centroids;
}

}  // namespace l2g
