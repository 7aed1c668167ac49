#pragma once

#include <array>
#include <span>

#include "onerec/numerics/checkpoint.hpp"
#include "onerec/numerics/tape.hpp"
#include "onerec/sim/simulator.hpp"

namespace onerec::reward {

struct RewardConfig {
  int inputDim = 32;  // item embedding dimension fed to the model
  int dRm = 32;
  int hidden = 64;
  // Folds the four sigmoid outputs into the scalar preference reward.
  std::array<Real, 4> scoreWeights{0.25, 0.25, 0.25, 0.25};

  void validate() const {
    if (inputDim <= 0 || dRm <= 0 || hidden <= 0) throw ConfigError("reward dims must be positive");
    Real total = 0;
    for (Real w : scoreWeights) {
      if (w < 0) throw ConfigError("score weights must be non-negative");
      total += w;
    }
    if (total <= 0) throw ConfigError("score weights must not all be zero");
  }
};

struct RewardVector {
  Real swt = 0, vtr = 0, wtr = 0, ltr = 0;
  Real operator[](int t) const;
};

// Session-wise multi-target reward model: target-aware item encoding with
// single-head attention over the user history, bidirectional self-attention
// across the session, sum pooling, and four sigmoid towers.
class RewardModel {
 public:
  RewardModel(RewardConfig cfg, uint64_t initSeed);

  const RewardConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();
  ParamRegistry registry();

  // histEmb: [H, inputDim]; an empty history is passed as a single zero row
  // (see zeroHistory). sessEmb: [m, inputDim].
  VarId userContextVar(Tape& t, VarId histEmb);
  VarId sessionFeaturesVar(Tape& t, VarId histEmb, VarId sessEmb);
  VarId sessionFuseVar(Tape& t, VarId features);
  VarId towerLogitsVar(Tape& t, VarId fused);  // [1,4] in (swt, vtr, wtr, ltr) order
  VarId logitsVar(Tape& t, VarId histEmb, VarId sessEmb);
  VarId rmLossVar(Tape& t, VarId histEmb, VarId sessEmb, const sim::SessionLabels& labels);

  RewardVector predictRewards(const Tensor& histEmb, const Tensor& sessEmb);
  Real scoreSession(const Tensor& histEmb, const Tensor& sessEmb);
  Real combineScore(const RewardVector& r) const;

  Tensor zeroHistory() const { return Tensor({1, cfg_.inputDim}); }

  Parameter wUser;          // [inputDim, dRm], no bias: empty history -> zero context
  Parameter wProj;          // [inputDim, dRm]
  Parameter wQ, wK, wV;     // target attention projections
  Parameter wEnc, bEnc;     // [2*dRm, dRm], [dRm]
  Parameter wsQ, wsK, wsV;  // session self-attention
  struct Tower {
    Parameter w1, b1, w2, b2;
  };
  std::array<Tower, 4> towers;

 private:
  RewardConfig cfg_;
};

// Embedding matrix for a list of catalog items.
Tensor embeddingRows(const sim::SyntheticCatalog& catalog, std::span<const int64_t> items);

struct RmExample {
  std::vector<int64_t> history;
  std::vector<int64_t> session;
  sim::SessionLabels labels;
};

struct RmTrainConfig {
  int steps = 2000;
  int batchSize = 16;
  AdamConfig adam{Real(1e-3), Real(0.9), Real(0.999), Real(1e-8)};
  uint64_t seed = 0;
  int logEvery = 0;
};

struct RmEvalReport {
  std::array<Real, 4> auc{};  // NaN where a class is missing
  int examples = 0;
};

void trainRewardModel(RewardModel& model, const sim::SyntheticCatalog& catalog,
                      std::span<const RmExample> train, const RmTrainConfig& cfg);
RmEvalReport evaluateRmAuc(RewardModel& model, const sim::SyntheticCatalog& catalog,
                           std::span<const RmExample> heldout);

}  // namespace onerec::reward
