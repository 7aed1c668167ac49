#pragma once

#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "onerec/genmodel/model.hpp"

namespace onerec::gen {

struct TrainingExample {
  int64_t userId = 0;
  std::vector<SemanticId> history;
  std::vector<SemanticId> session;
  std::vector<int64_t> historyItems;  // original catalog ids
  std::vector<int64_t> sessionItems;
};

struct TrainConfig {
  int steps = 4000;
  int batchSize = 8;
  AdamConfig adam;
  uint64_t seed = 0;
  int evalEvery = 250;     // 0 disables held-out evaluation
  int evalSamples = 200;   // held-out examples per evaluation
  int logEvery = 0;        // 0 disables stdout progress
  // Early stop once the held-out loss reaches this value (<0 disables).
  Real targetHeldoutLoss = Real(-1);
};

struct TrainStats {
  std::vector<std::pair<int, Real>> lossCurve;
  std::vector<std::pair<int, Real>> heldoutCurve;
  Real finalHeldoutLoss = std::numeric_limits<Real>::quiet_NaN();
  int stepsRun = 0;
};

// Adam-optimized next-token-prediction training. With batchSize == 1 the
// loss graph is exactly one ntpLossVar, which keeps the parameter
// trajectory bit-comparable with the alignment loop's NTP-only branch.
TrainStats trainSeedModel(GenModel& model, std::span<const TrainingExample> train,
                          std::span<const TrainingExample> heldout, const TrainConfig& cfg);

// Mean NTP loss over (up to) maxExamples examples, deterministic order.
Real meanNtpLoss(GenModel& model, std::span<const TrainingExample> examples, int maxExamples = -1);

}  // namespace onerec::gen
