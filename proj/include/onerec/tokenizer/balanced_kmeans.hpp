#pragma once

#include <vector>

#include "onerec/numerics/rng.hpp"
#include "onerec/numerics/tensor.hpp"

namespace onerec::tokenizer {

struct BalancedKMeansResult {
  Tensor centroids;             // [K, d]
  std::vector<int> assignment;  // point index -> cluster
  int iterations = 0;
  bool converged = false;
};

// Equal-size K-means: every sweep walks the clusters in fixed order, sorts
// the still-unassigned points by distance to the cluster's centroid, claims
// the nearest w = |points|/K of them, and recomputes that centroid before
// moving to the next cluster. Stops when the assignment repeats.
//
// When |points| is not divisible by K the final cluster absorbs the
// remainder (sizes w, ..., w, w + |points| mod K).
BalancedKMeansResult balancedKMeans(const Tensor& points, int k, int maxIters, Rng& rng);

}  // namespace onerec::tokenizer
