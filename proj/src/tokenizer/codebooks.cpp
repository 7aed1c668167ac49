#include "onerec/tokenizer/codebooks.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "onerec/error.hpp"
#include "onerec/io/binary.hpp"
#include "onerec/numerics/rng.hpp"
#include "onerec/tokenizer/balanced_kmeans.hpp"

namespace onerec::tokenizer {

namespace {

constexpr char kMagic[8] = {'O', 'N', 'E', 'R', 'E', 'C', 'C', 'B'};
constexpr uint32_t kVersion = 1;

int argminCentroid(const Real* r, const Tensor& centroids, int d) {
  const int k = centroids.dim(0);
  int best = 0;
  Real bestDist = 0;
  for (int c = 0; c < k; ++c) {
    const Real* ct = centroids.data() + static_cast<size_t>(c) * d;
    Real s = 0;
    for (int j = 0; j < d; ++j) {
      const Real diff = r[j] - ct[j];
      s += diff * diff;
    }
    if (c == 0 || s < bestDist) {
      best = c;
      bestDist = s;
    }
  }
  return best;
}

Real meanSqNorm(const Tensor& rows) {
  Real total = 0;
  for (int64_t i = 0; i < rows.size(); ++i) total += rows[i] * rows[i];
  return total / static_cast<Real>(rows.dim(0));
}

}  // namespace

std::string SemanticId::str() const {
  std::ostringstream os;
  for (size_t i = 0; i < codes.size(); ++i) {
    if (i) os << '-';
    os << codes[i];
  }
  return os.str();
}

CodebookStack fitResidualStack(const Tensor& embeddings, int k, int l, int maxIters, uint64_t seed) {
  if (embeddings.rank() != 2 || embeddings.dim(0) < 1) {
    throw ArgumentError("fitResidualStack expects a nonempty [N,d] embedding matrix");
  }
  if (l < 1) throw ArgumentError("fitResidualStack requires L >= 1");
  const int n = embeddings.dim(0);
  const int d = embeddings.dim(1);

  CodebookStack stack;
  stack.K = k;
  stack.L = l;
  stack.d = d;
  stack.seed = seed;
  stack.meanResidualSqNorm.push_back(meanSqNorm(embeddings));

  Tensor residuals = embeddings;
  Rng root(seed);
  for (int level = 0; level < l; ++level) {
    Rng levelRng = root.substream("kmeans-level-" + std::to_string(level));
    BalancedKMeansResult fit = balancedKMeans(residuals, k, maxIters, levelRng);
    Codebook cb;
    cb.level = level + 1;
    cb.centroids = std::move(fit.centroids);
    // Residuals advance by the argmin centroid, the same rule quantizeItem
    // applies; the balanced assignment only shapes the centroids.
    for (int i = 0; i < n; ++i) {
      Real* r = residuals.data() + static_cast<size_t>(i) * d;
      const int code = argminCentroid(r, cb.centroids, d);
      const Real* ct = cb.centroids.data() + static_cast<size_t>(code) * d;
      for (int j = 0; j < d; ++j) r[j] -= ct[j];
    }
    stack.levels.push_back(std::move(cb));
    stack.meanResidualSqNorm.push_back(meanSqNorm(residuals));
  }
  return stack;
}

SemanticId quantizeItem(std::span<const Real> embedding, const CodebookStack& stack) {
  if (static_cast<int>(embedding.size()) != stack.d) {
    throw DimensionError("quantizeItem: embedding dimension " + std::to_string(embedding.size()) +
                         " does not match codebook dimension " + std::to_string(stack.d));
  }
  std::vector<Real> r(embedding.begin(), embedding.end());
  SemanticId id;
  id.codes.reserve(static_cast<size_t>(stack.L));
  for (const Codebook& cb : stack.levels) {
    const int code = argminCentroid(r.data(), cb.centroids, stack.d);
    const Real* ct = cb.centroids.data() + static_cast<size_t>(code) * stack.d;
    for (int j = 0; j < stack.d; ++j) r[static_cast<size_t>(j)] -= ct[j];
    id.codes.push_back(code);
  }
  return id;
}

std::vector<SemanticId> quantizeCatalog(const Tensor& embeddings, const CodebookStack& stack) {
  const int n = embeddings.dim(0);
  const int d = embeddings.dim(1);
  std::vector<SemanticId> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.push_back(quantizeItem({embeddings.data() + static_cast<size_t>(i) * d, static_cast<size_t>(d)}, stack));
  }
  return out;
}

Tensor reconstruct(const SemanticId& id, const CodebookStack& stack) {
  if (static_cast<int>(id.codes.size()) != stack.L) {
    throw DimensionError("reconstruct: code has " + std::to_string(id.codes.size()) + " levels, stack has " +
                         std::to_string(stack.L));
  }
  Tensor out({stack.d});
  for (int level = 0; level < stack.L; ++level) {
    const int code = id.codes[static_cast<size_t>(level)];
    if (code < 0 || code >= stack.K) {
      throw IndexError("reconstruct: code " + std::to_string(code) + " outside [0," + std::to_string(stack.K) + ")");
    }
    const Real* ct = stack.levels[static_cast<size_t>(level)].centroids.data() + static_cast<size_t>(code) * stack.d;
    for (int j = 0; j < stack.d; ++j) out[j] += ct[j];
  }
  return out;
}

void saveCodebookStack(const std::string& path, const CodebookStack& stack) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgumentError("cannot open codebook file for writing: " + path);
  io::HashingWriter w(os);
  w.write(kMagic, sizeof(kMagic));
  w.writeValue(kVersion);
  w.writeValue(static_cast<uint32_t>(stack.K));
  w.writeValue(static_cast<uint32_t>(stack.L));
  w.writeValue(static_cast<uint32_t>(stack.d));
  w.writeValue(stack.seed);
  for (const Codebook& cb : stack.levels) {
    w.writeValue(static_cast<uint32_t>(cb.level));
    w.write(cb.centroids.data(), static_cast<size_t>(cb.centroids.size()) * sizeof(Real));
  }
  for (Real v : stack.meanResidualSqNorm) w.writeValue(v);
  w.finish();
}

CodebookStack loadCodebookStack(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("codebook file not found: " + path);
  io::HashingReader r(is, path);
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IntegrityError("bad codebook magic in " + path);
  const uint32_t version = r.readValue<uint32_t>();
  if (version != kVersion) throw IntegrityError("unsupported codebook version " + std::to_string(version));
  CodebookStack stack;
  stack.K = static_cast<int>(r.readValue<uint32_t>());
  stack.L = static_cast<int>(r.readValue<uint32_t>());
  stack.d = static_cast<int>(r.readValue<uint32_t>());
  stack.seed = r.readValue<uint64_t>();
  for (int level = 0; level < stack.L; ++level) {
    Codebook cb;
    cb.level = static_cast<int>(r.readValue<uint32_t>());
    cb.centroids = Tensor({stack.K, stack.d});
    r.read(cb.centroids.data(), static_cast<size_t>(cb.centroids.size()) * sizeof(Real));
    stack.levels.push_back(std::move(cb));
  }
  stack.meanResidualSqNorm.resize(static_cast<size_t>(stack.L) + 1);
  for (Real& v : stack.meanResidualSqNorm) v = r.readValue<Real>();
  r.verifyChecksum();
  return stack;
}

}  // namespace onerec::tokenizer
