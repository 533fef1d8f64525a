#pragma once

#include <cstddef>

#include "l2g/rng.hpp"
#include "l2g/tensor.hpp"

namespace l2g {

/// Lloyd's k-means with k-means++ seeding on the rows of `points` (n x d).
/// Returns k x d centroids. Empty clusters keep their previous centroid.
/// Requires n >= 1; when n < k the extra centroids duplicate seeded rows.
Tensor kmeans(const Tensor& points, std::size_t k, Rng& rng, int iterations = 25);

}  // namespace l2g
