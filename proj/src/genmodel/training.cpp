#include "onerec/genmodel/training.hpp"

#include <algorithm>
#include <cstdio>

#include "onerec/numerics/rng.hpp"

namespace onerec::gen {

Real meanNtpLoss(GenModel& model, std::span<const TrainingExample> examples, int maxExamples) {
  const size_t count = maxExamples < 0
                           ? examples.size()
                           : std::min(examples.size(), static_cast<size_t>(maxExamples));
  if (count == 0) throw ArgumentError("meanNtpLoss needs at least one example");
  Real total = 0;
  for (size_t i = 0; i < count; ++i) {
    total += model.ntpLoss(examples[i].history, examples[i].session);
  }
  return total / static_cast<Real>(count);
}

TrainStats trainSeedModel(GenModel& model, std::span<const TrainingExample> train,
                          std::span<const TrainingExample> heldout, const TrainConfig& cfg) {
  if (cfg.steps > 0 && train.empty()) throw ArgumentError("training set is empty");
  TrainStats stats;
  Rng sampler = Rng(cfg.seed).substream("training");
  std::vector<Parameter*> params = model.parameters();

  for (int step = 1; step <= cfg.steps; ++step) {
    Tape t;
    VarId loss;
    if (cfg.batchSize <= 1) {
      const auto& ex = train[static_cast<size_t>(sampler.uniformInt64(static_cast<int64_t>(train.size())))];
      loss = model.ntpLossVar(t, ex.history, ex.session);
    } else {
      VarId sum = -1;
      for (int b = 0; b < cfg.batchSize; ++b) {
        const auto& ex = train[static_cast<size_t>(sampler.uniformInt64(static_cast<int64_t>(train.size())))];
        VarId l = model.ntpLossVar(t, ex.history, ex.session);
        sum = sum < 0 ? l : t.add(sum, l);
      }
      loss = t.scale(sum, Real(1) / static_cast<Real>(cfg.batchSize));
    }
    const Real lossValue = t.value(loss).item();
    t.backward(loss);
    adamStep(params, cfg.adam);
    stats.stepsRun = step;

    if (cfg.logEvery > 0 && (step % cfg.logEvery == 0 || step == 1)) {
      std::printf("step %6d  ntp %.4f\n", step, static_cast<double>(lossValue));
      std::fflush(stdout);
    }
    stats.lossCurve.emplace_back(step, lossValue);

    if (cfg.evalEvery > 0 && !heldout.empty() && step % cfg.evalEvery == 0) {
      const Real h = meanNtpLoss(model, heldout, cfg.evalSamples);
      stats.heldoutCurve.emplace_back(step, h);
      stats.finalHeldoutLoss = h;
      if (cfg.logEvery > 0) {
        std::printf("step %6d  heldout ntp %.4f\n", step, static_cast<double>(h));
        std::fflush(stdout);
      }
      if (cfg.targetHeldoutLoss >= 0 && h <= cfg.targetHeldoutLoss) break;
    }
  }

  if (!heldout.empty() && (cfg.evalEvery <= 0 || stats.heldoutCurve.empty() ||
                           stats.heldoutCurve.back().first != stats.stepsRun)) {
    stats.finalHeldoutLoss = meanNtpLoss(model, heldout, cfg.evalSamples);
    stats.heldoutCurve.emplace_back(stats.stepsRun, stats.finalHeldoutLoss);
  }
  return stats;
}

}  // namespace onerec::gen
