#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "onerec/numerics/optim.hpp"
#include "onerec/numerics/tensor.hpp"

namespace onerec {

using VarId = int32_t;

// Reverse-mode autodiff tape. Operations execute eagerly and record a
// backward closure; backward() replays the closures in exact reverse
// execution order and flushes leaf gradients into their Parameters.
//
// With gradients disabled the same ops run forward-only, which keeps a
// single numerical code path for training and inference.
class Tape {
 public:
  explicit Tape(bool gradEnabled = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool gradEnabled() const { return gradEnabled_; }

  // Leaves.
  VarId input(Tensor value);
  VarId param(Parameter& p);  // one node per Parameter per tape

  const Tensor& value(VarId id) const;
  Tensor& grad(VarId id);

  // Elementwise / structural ops.
  VarId add(VarId a, VarId b);
  VarId sub(VarId a, VarId b);
  VarId mul(VarId a, VarId b);
  VarId scale(VarId a, Real s);
  VarId addScalar(VarId a, Real c);
  VarId addBias(VarId a, VarId bias);            // [R,C] + [C]
  VarId mulColumn(VarId a, VarId col);           // [R,C] * [R,1]
  VarId concatCols(std::span<const VarId> parts);
  VarId concatCols(VarId a, VarId b);
  VarId sliceCols(VarId a, int begin, int len);
  VarId gatherRows(VarId a, std::vector<int> rows);
  VarId scatterAddRows(VarId src, std::vector<int> rows, int numRows);
  VarId transpose(VarId a);
  VarId reshape(VarId a, std::vector<int> shape);

  // Math ops.
  VarId matmul(VarId a, VarId b);
  VarId softmax(VarId a, int axis = -1);
  VarId layerNorm(VarId x, VarId gamma, VarId beta, Real eps = Real(1e-5));
  VarId gelu(VarId a);
  VarId sigmoid(VarId a);
  VarId negLogSigmoid(VarId a);
  VarId sumAll(VarId a);
  VarId meanAll(VarId a);
  VarId sumRows(VarId a);                        // [R,C] -> [1,C]

  // Fused log-prob over column slices: for each spec, the log-softmax over
  // columns [sliceBegin, sliceBegin+sliceLen) of `row`, evaluated at
  // sliceBegin+targetInSlice, times `weight`; the op returns the sum.
  struct LogProbSpec {
    int row = 0;
    int sliceBegin = 0;
    int sliceLen = 0;
    int targetInSlice = 0;
    Real weight = Real(1);
  };
  VarId sliceLogProbSum(VarId logits, std::vector<LogProbSpec> specs);

  // Mean of -log softmax(logits)[target] over unmasked positions; the
  // softmax runs over the full row. mask may be empty (all positions count).
  VarId crossEntropyFromLogits(VarId logits, std::span<const int> targets,
                               std::span<const uint8_t> mask = {});

  // Sum over elements of the stable binary cross entropy between
  // sigmoid(logit) and label.
  VarId bceWithLogitsSum(VarId logits, std::vector<Real> labels);

  // Accumulates gradients of all reachable Parameters. loss must be scalar.
  void backward(VarId loss);

  size_t numNodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool gradAllocated = false;
    bool touched = false;  // received any upstream gradient
    std::function<void()> backward;
  };

  VarId push(Tensor value, std::function<void()> backward = nullptr);
  Node& node(VarId id);
  const Node& node(VarId id) const;
  void accumulate(VarId id, const Tensor& g);
  void addGrad(VarId id, const Real* g, int64_t n);
  Tensor& ensureGrad(VarId id);
  void checkValid(VarId id) const;

  std::deque<Node> nodes_;  // deque: node references stay valid as ops append
  bool gradEnabled_;
  bool backwardDone_ = false;
  std::unordered_map<const Parameter*, VarId> paramIndex_;
  std::vector<std::pair<Parameter*, VarId>> bindings_;
};

// Raw matrix kernels (row-major). Accumulation over the inner dimension is
// always in ascending order per output element, so a row of the product is
// bit-identical whether computed alone or as part of a larger matrix.
void mmNN(const Real* a, const Real* b, Real* c, int m, int k, int n);  // c += a*b
void mmNT(const Real* a, const Real* b, Real* c, int m, int k, int n);  // c += a*b^T, b is [n,k]
void mmTN(const Real* a, const Real* b, Real* c, int m, int k, int n);  // c += a^T*b, a is [k,m]

}  // namespace onerec
