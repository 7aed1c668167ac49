#include "onerec/reward/reward_model.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "onerec/numerics/rng.hpp"
#include "onerec/numerics/stats.hpp"

namespace onerec::reward {

namespace {

Tensor randn(Rng& rng, std::vector<int> shape, Real std) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = std * static_cast<Real>(rng.normal());
  return t;
}

}  // namespace

Real RewardVector::operator[](int t) const {
  switch (t) {
    case sim::kSwt: return swt;
    case sim::kVtr: return vtr;
    case sim::kWtr: return wtr;
    case sim::kLtr: return ltr;
    default: throw IndexError("reward index out of range");
  }
}

RewardModel::RewardModel(RewardConfig cfg, uint64_t initSeed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng(initSeed).substream("rm-init");
  const Real inStd = Real(1) / std::sqrt(static_cast<Real>(cfg_.inputDim));
  const Real rmStd = Real(1) / std::sqrt(static_cast<Real>(cfg_.dRm));
  wUser = Parameter("rm.w_user", randn(rng, {cfg_.inputDim, cfg_.dRm}, inStd));
  wProj = Parameter("rm.w_proj", randn(rng, {cfg_.inputDim, cfg_.dRm}, inStd));
  wQ = Parameter("rm.attn.wq", randn(rng, {cfg_.inputDim, cfg_.dRm}, inStd));
  wK = Parameter("rm.attn.wk", randn(rng, {cfg_.inputDim, cfg_.dRm}, inStd));
  wV = Parameter("rm.attn.wv", randn(rng, {cfg_.inputDim, cfg_.dRm}, inStd));
  wEnc = Parameter("rm.enc.w", randn(rng, {2 * cfg_.dRm, cfg_.dRm}, Real(1) / std::sqrt(static_cast<Real>(2 * cfg_.dRm))));
  bEnc = Parameter("rm.enc.b", Tensor({cfg_.dRm}));
  wsQ = Parameter("rm.fuse.wq", randn(rng, {cfg_.dRm, cfg_.dRm}, rmStd));
  wsK = Parameter("rm.fuse.wk", randn(rng, {cfg_.dRm, cfg_.dRm}, rmStd));
  wsV = Parameter("rm.fuse.wv", randn(rng, {cfg_.dRm, cfg_.dRm}, rmStd));
  for (int t = 0; t < 4; ++t) {
    const std::string base = "rm.tower_" + std::string(sim::kTargetNames[static_cast<size_t>(t)]);
    towers[static_cast<size_t>(t)].w1 = Parameter(base + ".w1", randn(rng, {cfg_.dRm, cfg_.hidden}, rmStd));
    towers[static_cast<size_t>(t)].b1 = Parameter(base + ".b1", Tensor({cfg_.hidden}));
    towers[static_cast<size_t>(t)].w2 =
        Parameter(base + ".w2", randn(rng, {cfg_.hidden, 1}, Real(0.05)));
    towers[static_cast<size_t>(t)].b2 = Parameter(base + ".b2", Tensor({1}));
  }
}

std::vector<Parameter*> RewardModel::parameters() {
  std::vector<Parameter*> out{&wUser, &wProj, &wQ, &wK, &wV, &wEnc, &bEnc, &wsQ, &wsK, &wsV};
  for (auto& tower : towers) {
    out.push_back(&tower.w1);
    out.push_back(&tower.b1);
    out.push_back(&tower.w2);
    out.push_back(&tower.b2);
  }
  return out;
}

ParamRegistry RewardModel::registry() {
  ParamRegistry reg;
  reg.add(parameters());
  return reg;
}

VarId RewardModel::userContextVar(Tape& t, VarId histEmb) {
  const int rows = t.value(histEmb).rows();
  VarId pooled = t.scale(t.sumRows(histEmb), Real(1) / static_cast<Real>(rows));
  return t.matmul(pooled, t.param(wUser));
}

VarId RewardModel::sessionFeaturesVar(Tape& t, VarId histEmb, VarId sessEmb) {
  if (t.value(sessEmb).cols() != cfg_.inputDim || t.value(histEmb).cols() != cfg_.inputDim) {
    throw ContractError("reward model fed embeddings of the wrong dimension");
  }
  VarId projected = t.matmul(sessEmb, t.param(wProj));                      // [m, dRm]
  VarId queries = t.matmul(sessEmb, t.param(wQ));
  VarId keys = t.matmul(histEmb, t.param(wK));
  VarId values = t.matmul(histEmb, t.param(wV));
  const Real scaleFactor = Real(1) / std::sqrt(static_cast<Real>(cfg_.dRm));
  VarId attnW = t.softmax(t.scale(t.matmul(queries, t.transpose(keys)), scaleFactor), 1);
  VarId attended = t.matmul(attnW, values);                                 // [m, dRm]
  VarId interaction = t.mul(projected, attended);
  VarId combined = t.concatCols(projected, interaction);
  return t.addBias(t.matmul(combined, t.param(wEnc)), t.param(bEnc));
}

VarId RewardModel::sessionFuseVar(Tape& t, VarId features) {
  const Real scaleFactor = Real(1) / std::sqrt(static_cast<Real>(cfg_.dRm));
  VarId q = t.matmul(features, t.param(wsQ));
  VarId k = t.matmul(features, t.param(wsK));
  VarId v = t.matmul(features, t.param(wsV));
  VarId attnW = t.softmax(t.scale(t.matmul(q, t.transpose(k)), scaleFactor), 1);
  return t.matmul(attnW, v);
}

VarId RewardModel::towerLogitsVar(Tape& t, VarId fused) {
  VarId pooled = t.sumRows(fused);  // [1, dRm]
  std::vector<VarId> logits;
  for (auto& tower : towers) {
    VarId h = t.gelu(t.addBias(t.matmul(pooled, t.param(tower.w1)), t.param(tower.b1)));
    logits.push_back(t.addBias(t.matmul(h, t.param(tower.w2)), t.param(tower.b2)));
  }
  return t.concatCols(logits);
}

VarId RewardModel::logitsVar(Tape& t, VarId histEmb, VarId sessEmb) {
  VarId features = sessionFeaturesVar(t, histEmb, sessEmb);
  VarId fused = sessionFuseVar(t, features);
  return towerLogitsVar(t, fused);
}

VarId RewardModel::rmLossVar(Tape& t, VarId histEmb, VarId sessEmb, const sim::SessionLabels& labels) {
  VarId logits = t.reshape(logitsVar(t, histEmb, sessEmb), {4});
  return t.bceWithLogitsSum(logits, {static_cast<Real>(labels.swt), static_cast<Real>(labels.vtr),
                                     static_cast<Real>(labels.wtr), static_cast<Real>(labels.ltr)});
}

RewardVector RewardModel::predictRewards(const Tensor& histEmb, const Tensor& sessEmb) {
  Tape t(false);
  VarId logits = logitsVar(t, t.input(histEmb), t.input(sessEmb));
  VarId probs = t.sigmoid(logits);
  const Tensor& p = t.value(probs);
  return RewardVector{p[0], p[1], p[2], p[3]};
}

Real RewardModel::combineScore(const RewardVector& r) const {
  Real total = 0, weightSum = 0;
  for (int t = 0; t < 4; ++t) {
    total += cfg_.scoreWeights[static_cast<size_t>(t)] * r[t];
    weightSum += cfg_.scoreWeights[static_cast<size_t>(t)];
  }
  return total / weightSum;
}

Real RewardModel::scoreSession(const Tensor& histEmb, const Tensor& sessEmb) {
  return combineScore(predictRewards(histEmb, sessEmb));
}

Tensor embeddingRows(const sim::SyntheticCatalog& catalog, std::span<const int64_t> items) {
  const int d = catalog.cfg.embedDim;
  if (items.empty()) return Tensor({1, d});  // zero placeholder
  Tensor out({static_cast<int>(items.size()), d});
  for (size_t i = 0; i < items.size(); ++i) {
    const auto row = catalog.embeddingOf(items[i]);
    std::copy(row.begin(), row.end(), out.data() + i * static_cast<size_t>(d));
  }
  return out;
}

void trainRewardModel(RewardModel& model, const sim::SyntheticCatalog& catalog,
                      std::span<const RmExample> train, const RmTrainConfig& cfg) {
  if (cfg.steps > 0 && train.empty()) throw ArgumentError("reward training set is empty");
  Rng sampler = Rng(cfg.seed).substream("rm-training");
  std::vector<Parameter*> params = model.parameters();
  for (int step = 1; step <= cfg.steps; ++step) {
    Tape t;
    VarId sum = -1;
    for (int b = 0; b < cfg.batchSize; ++b) {
      const auto& ex = train[static_cast<size_t>(sampler.uniformInt64(static_cast<int64_t>(train.size())))];
      VarId hist = t.input(embeddingRows(catalog, ex.history));
      VarId sess = t.input(embeddingRows(catalog, ex.session));
      VarId l = model.rmLossVar(t, hist, sess, ex.labels);
      sum = sum < 0 ? l : t.add(sum, l);
    }
    VarId loss = t.scale(sum, Real(1) / static_cast<Real>(cfg.batchSize));
    if (cfg.logEvery > 0 && (step == 1 || step % cfg.logEvery == 0)) {
      std::printf("rm step %6d  loss %.4f\n", step, static_cast<double>(t.value(loss).item()));
      std::fflush(stdout);
    }
    t.backward(loss);
    adamStep(params, cfg.adam);
  }
}

RmEvalReport evaluateRmAuc(RewardModel& model, const sim::SyntheticCatalog& catalog,
                           std::span<const RmExample> heldout) {
  RmEvalReport report;
  report.examples = static_cast<int>(heldout.size());
  std::array<std::vector<Real>, 4> scores;
  std::array<std::vector<int>, 4> labels;
  for (const auto& ex : heldout) {
    const Tensor hist = embeddingRows(catalog, ex.history);
    const Tensor sess = embeddingRows(catalog, ex.session);
    const RewardVector r = model.predictRewards(hist, sess);
    for (int t = 0; t < 4; ++t) {
      scores[static_cast<size_t>(t)].push_back(r[t]);
      labels[static_cast<size_t>(t)].push_back(ex.labels[t]);
    }
  }
  for (int t = 0; t < 4; ++t) {
    try {
      report.auc[static_cast<size_t>(t)] = rocAuc(scores[static_cast<size_t>(t)], labels[static_cast<size_t>(t)]);
    } catch (const ArgumentError&) {
      report.auc[static_cast<size_t>(t)] = std::numeric_limits<Real>::quiet_NaN();
    }
  }
  return report;
}

}  // namespace onerec::reward
