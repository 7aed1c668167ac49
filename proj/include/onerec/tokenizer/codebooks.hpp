#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "onerec/numerics/tensor.hpp"

namespace onerec::tokenizer {

// Hierarchical code of one item: one centroid index per level.
struct SemanticId {
  std::vector<int> codes;

  bool operator==(const SemanticId& o) const { return codes == o.codes; }
  bool operator<(const SemanticId& o) const { return codes < o.codes; }
  std::string str() const;  // "3-17-42"
};

struct Codebook {
  int level = 0;        // 1-based
  Tensor centroids;     // [K, d]
};

struct CodebookStack {
  int K = 0;
  int L = 0;
  int d = 0;
  uint64_t seed = 0;
  std::vector<Codebook> levels;
  // Index 0: mean squared norm of the raw embeddings; index l: mean squared
  // residual norm after subtracting the level-l argmin centroid.
  std::vector<Real> meanResidualSqNorm;
};

// Fits the residual stack: level 1 on the raw embeddings, each further level
// on what the previous levels left behind. Residual propagation uses the
// per-item argmin centroid, matching quantizeItem.
CodebookStack fitResidualStack(const Tensor& embeddings, int k, int l, int maxIters, uint64_t seed);

// Greedy per-level nearest-centroid coding; ties pick the lowest index.
SemanticId quantizeItem(std::span<const Real> embedding, const CodebookStack& stack);
std::vector<SemanticId> quantizeCatalog(const Tensor& embeddings, const CodebookStack& stack);

// Sum of the selected centroids.
Tensor reconstruct(const SemanticId& id, const CodebookStack& stack);

void saveCodebookStack(const std::string& path, const CodebookStack& stack);
CodebookStack loadCodebookStack(const std::string& path);

}  // namespace onerec::tokenizer
