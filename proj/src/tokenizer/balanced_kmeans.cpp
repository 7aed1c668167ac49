#include "onerec/tokenizer/balanced_kmeans.hpp"

#include <algorithm>
#include <string>

#include "onerec/error.hpp"

namespace onerec::tokenizer {

namespace {

inline Real sqDist(const Real* a, const Real* b, int d) {
  Real s = 0;
  for (int i = 0; i < d; ++i) {
    const Real diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

}  // namespace

BalancedKMeansResult balancedKMeans(const Tensor& points, int k, int maxIters, Rng& rng) {
  if (points.rank() != 2) throw ArgumentError("balancedKMeans expects points as an [N,d] tensor");
  const int n = points.dim(0);
  const int d = points.dim(1);
  if (k < 1) throw ArgumentError("balancedKMeans requires K >= 1");
  if (k > n) {
    throw ArgumentError("balancedKMeans: K=" + std::to_string(k) + " exceeds point count " + std::to_string(n));
  }

  const int w = n / k;
  const int remainder = n - w * k;

  BalancedKMeansResult result;
  result.centroids = Tensor({k, d});
  result.assignment.assign(static_cast<size_t>(n), -1);

  // Centroid init: uniform sample of points without replacement.
  const std::vector<int> init = rng.sampleWithoutReplacement(n, k);
  for (int c = 0; c < k; ++c) {
    const Real* src = points.data() + static_cast<size_t>(init[static_cast<size_t>(c)]) * d;
    std::copy(src, src + d, result.centroids.data() + static_cast<size_t>(c) * d);
  }

  std::vector<int> prev;
  std::vector<std::pair<Real, int>> order;
  order.reserve(static_cast<size_t>(n));

  for (int iter = 1; iter <= maxIters; ++iter) {
    result.iterations = iter;
    std::vector<int> unassigned(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) unassigned[static_cast<size_t>(i)] = i;

    for (int c = 0; c < k; ++c) {
      const int take = (c == k - 1) ? w + remainder : w;
      const Real* centroid = result.centroids.data() + static_cast<size_t>(c) * d;
      order.clear();
      for (int idx : unassigned) {
        order.emplace_back(sqDist(points.data() + static_cast<size_t>(idx) * d, centroid, d), idx);
      }
      // (distance, index) pairs are unique, so plain sort is deterministic.
      std::sort(order.begin(), order.end());

      Real* mean = result.centroids.data() + static_cast<size_t>(c) * d;
      std::fill(mean, mean + d, Real(0));
      for (int t = 0; t < take; ++t) {
        const int idx = order[static_cast<size_t>(t)].second;
        result.assignment[static_cast<size_t>(idx)] = c;
        const Real* p = points.data() + static_cast<size_t>(idx) * d;
        for (int j = 0; j < d; ++j) mean[j] += p[j];
      }
      for (int j = 0; j < d; ++j) mean[j] /= static_cast<Real>(take);

      std::vector<int> rest;
      rest.reserve(unassigned.size() - static_cast<size_t>(take));
      for (size_t t = static_cast<size_t>(take); t < order.size(); ++t) rest.push_back(order[t].second);
      std::sort(rest.begin(), rest.end());
      unassigned = std::move(rest);
    }

    if (result.assignment == prev) {
      result.converged = true;
      break;
    }
    prev = result.assignment;
  }
  return result;
}

}  // namespace onerec::tokenizer
