#include "onerec/numerics/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "onerec/error.hpp"

namespace onerec {

namespace {

std::vector<Real> averageRanks(std::span<const Real> values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<Real> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const Real avg = (static_cast<Real>(i) + static_cast<Real>(j)) / Real(2) + Real(1);
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

Real rocAuc(std::span<const Real> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ArgumentError("rocAuc: size mismatch");
  int64_t pos = 0, neg = 0;
  for (int y : labels) (y ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw ArgumentError("rocAuc requires both classes");
  const auto ranks = averageRanks(scores);
  Real posRankSum = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) posRankSum += ranks[i];
  }
  const Real p = static_cast<Real>(pos);
  return (posRankSum - p * (p + 1) / 2) / (p * static_cast<Real>(neg));
}

Real spearman(std::span<const Real> a, std::span<const Real> b) {
  if (a.size() != b.size()) throw ArgumentError("spearman: size mismatch");
  if (a.size() < 2) throw ArgumentError("spearman needs at least two points");
  const auto ra = averageRanks(a);
  const auto rb = averageRanks(b);
  const size_t n = a.size();
  Real meanA = 0, meanB = 0;
  for (size_t i = 0; i < n; ++i) {
    meanA += ra[i];
    meanB += rb[i];
  }
  meanA /= static_cast<Real>(n);
  meanB /= static_cast<Real>(n);
  Real cov = 0, varA = 0, varB = 0;
  for (size_t i = 0; i < n; ++i) {
    const Real da = ra[i] - meanA;
    const Real db = rb[i] - meanB;
    cov += da * db;
    varA += da * da;
    varB += db * db;
  }
  if (varA == 0 || varB == 0) return Real(0);
  return cov / std::sqrt(varA * varB);
}

}  // namespace onerec
