#include "onerec/align/ipa.hpp"

#include <algorithm>
#include <cstdio>

#include "onerec/numerics/parallel.hpp"

namespace onerec::align {

std::vector<ScoredSession> sampleResponses(GenModel& policy, std::span<const SemanticId> history,
                                           const ItemIndex& index, const IpaConfig& cfg, Rng& rng) {
  if (cfg.temperatureSampling) {
    return sampleSessionsTemperature(policy, history, index, cfg.numResponses, cfg.temperature, rng);
  }
  gen::BeamConfig bc;
  bc.beamSize = std::max(cfg.beamSize, cfg.numResponses);
  bc.useKvCache = cfg.useKvCache;
  auto result = beamSearchSession(policy, history, index, bc);
  if (static_cast<int>(result.sessions.size()) > cfg.numResponses) {
    result.sessions.resize(static_cast<size_t>(cfg.numResponses));
  }
  return std::move(result.sessions);
}

std::optional<PreferencePair> selectPair(std::span<const ScoredSession> scored,
                                         std::span<const Real> rewards,
                                         std::span<const SemanticId> history) {
  if (scored.size() != rewards.size()) throw ArgumentError("selectPair: rewards must align with sessions");
  if (scored.size() < 2) return std::nullopt;
  size_t winner = 0, loser = 0;
  for (size_t i = 1; i < scored.size(); ++i) {
    // winner: higher reward, then higher log-prob, then lower index
    if (rewards[i] > rewards[winner] ||
        (rewards[i] == rewards[winner] && scored[i].logProb > scored[winner].logProb)) {
      winner = i;
    }
    // loser: lower reward, then lower log-prob, then higher index
    if (rewards[i] < rewards[loser] ||
        (rewards[i] == rewards[loser] && scored[i].logProb <= scored[loser].logProb)) {
      loser = i;
    }
  }
  if (winner == loser) return std::nullopt;
  PreferencePair pair;
  pair.history.assign(history.begin(), history.end());
  pair.winner = scored[winner].items;
  pair.loser = scored[loser].items;
  pair.winnerReward = rewards[winner];
  pair.loserReward = rewards[loser];
  pair.winnerLogProb = scored[winner].logProb;
  pair.loserLogProb = scored[loser].logProb;
  return pair;
}

VarId dpoLossVar(Tape& t, GenModel& policy, GenModel& reference, const PreferencePair& pair, Real beta) {
  Real winnerRef = 0, loserRef = 0;
  {
    Tape ref(false);
    winnerRef = ref.value(reference.sessionLogProbVar(ref, pair.history, pair.winner)).item();
  }
  {
    Tape ref(false);
    loserRef = ref.value(reference.sessionLogProbVar(ref, pair.history, pair.loser)).item();
  }
  VarId winnerLp = policy.sessionLogProbVar(t, pair.history, pair.winner);
  VarId loserLp = policy.sessionLogProbVar(t, pair.history, pair.loser);
  VarId margin = t.addScalar(t.scale(t.sub(winnerLp, loserLp), beta), beta * (loserRef - winnerRef));
  return t.negLogSigmoid(margin);
}

Real dpoLoss(GenModel& policy, GenModel& reference, const PreferencePair& pair, Real beta) {
  Tape t(false);
  return t.value(dpoLossVar(t, policy, reference, pair, beta)).item();
}

std::vector<int64_t> resolveSessionItems(const ItemIndex& index, std::span<const SemanticId> session) {
  std::vector<int64_t> items;
  items.reserve(session.size());
  for (const SemanticId& id : session) {
    const int64_t item = index.resolveItem(id);
    if (item < 0) throw ContractError("generated code " + id.str() + " is not in the catalog");
    items.push_back(item);
  }
  return items;
}

namespace {

Real scoreWithRm(reward::RewardModel& rm, const sim::SyntheticCatalog& catalog,
                 const ItemIndex& index, const TrainingExample& user,
                 std::span<const SemanticId> session) {
  const Tensor hist = reward::embeddingRows(catalog, user.historyItems);
  const Tensor sess = reward::embeddingRows(catalog, resolveSessionItems(index, session));
  return rm.scoreSession(hist, sess);
}

}  // namespace

IpaResult ipaTrain(GenModel& policy, reward::RewardModel& rm, const sim::SyntheticCatalog& catalog,
                   const ItemIndex& index, std::span<const TrainingExample> logs,
                   const IpaConfig& cfg, uint64_t seed, bool keepPairs) {
  cfg.validate();
  if (logs.empty()) throw ArgumentError("ipaTrain needs interaction logs");
  IpaResult result;
  result.snapshots.push_back(policy);

  Rng root(seed);
  Rng sampleStream = root.substream("training");
  Rng branchStream = root.substream("dpo-branch");
  Rng tempStream = root.substream("temperature-sampling");
  std::vector<Parameter*> params = policy.parameters();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    GenModel snapshot = result.snapshots.back();  // frozen sampler + DPO reference
    EpochMetrics metrics;
    metrics.epoch = epoch;
    Real ntpTotal = 0, dpoTotal = 0, winnerTotal = 0, loserTotal = 0;

    for (int s = 1; s <= cfg.samplesPerEpoch; ++s) {
      const auto& ex = logs[static_cast<size_t>(sampleStream.uniformInt64(static_cast<int64_t>(logs.size())))];
      const bool dpoBranch = branchStream.uniform() < cfg.rDpo;
      std::optional<PreferencePair> pair;
      if (dpoBranch) {
        ++metrics.dpoSamples;
        auto responses = sampleResponses(snapshot, ex.history, index, cfg, tempStream);
        if (responses.size() < 2) {
          ++metrics.skippedUsers;
        } else {
          std::vector<Real> rewards;
          rewards.reserve(responses.size());
          for (const auto& r : responses) {
            rewards.push_back(scoreWithRm(rm, catalog, index, ex, r.items));
          }
          pair = selectPair(responses, rewards, ex.history);
          if (!pair) ++metrics.skippedUsers;
        }
      }

      Tape t;
      VarId ntp = policy.ntpLossVar(t, ex.history, ex.session);
      VarId loss = ntp;
      if (pair) {
        VarId dpo = dpoLossVar(t, policy, snapshot, *pair, cfg.beta);
        loss = t.add(ntp, t.scale(dpo, cfg.lambda));
        ++metrics.pairsBuilt;
        dpoTotal += t.value(dpo).item();
        winnerTotal += pair->winnerReward;
        loserTotal += pair->loserReward;
        if (keepPairs) result.pairs.push_back(*pair);
      }
      ntpTotal += t.value(ntp).item();
      t.backward(loss);
      adamStep(params, cfg.adam);

      if (cfg.logEvery > 0 && s % cfg.logEvery == 0) {
        std::printf("ipa epoch %d sample %d/%d  ntp %.4f\n", epoch, s, cfg.samplesPerEpoch,
                    static_cast<double>(t.value(ntp).item()));
        std::fflush(stdout);
      }
    }

    metrics.meanNtpLoss = ntpTotal / static_cast<Real>(cfg.samplesPerEpoch);
    if (metrics.pairsBuilt > 0) {
      metrics.meanDpoLoss = dpoTotal / static_cast<Real>(metrics.pairsBuilt);
      metrics.meanWinnerReward = winnerTotal / static_cast<Real>(metrics.pairsBuilt);
      metrics.meanLoserReward = loserTotal / static_cast<Real>(metrics.pairsBuilt);
    }
    result.epochs.push_back(metrics);
    result.snapshots.push_back(policy);
  }
  return result;
}

XtrTable evaluateXtr(GenModel& policy, reward::RewardModel& rm, const sim::SyntheticCatalog& catalog,
                     const ItemIndex& index, std::span<const TrainingExample> users, int topN,
                     bool useKvCache, int threads) {
  if (users.empty()) throw ArgumentError("evaluateXtr needs at least one user");
  if (topN < 1) throw ArgumentError("topN must be positive");
  const int n = static_cast<int>(users.size());
  std::vector<std::vector<reward::RewardVector>> perUser(static_cast<size_t>(n));
  parallelFor(n, threads, [&](int u) {
    gen::BeamConfig bc;
    bc.beamSize = topN;
    bc.useKvCache = useKvCache;
    auto beams = beamSearchSession(policy, users[static_cast<size_t>(u)].history, index, bc);
    const Tensor hist = reward::embeddingRows(catalog, users[static_cast<size_t>(u)].historyItems);
    for (const auto& s : beams.sessions) {
      const Tensor sess = reward::embeddingRows(catalog, resolveSessionItems(index, s.items));
      perUser[static_cast<size_t>(u)].push_back(rm.predictRewards(hist, sess));
    }
  });

  XtrTable table;
  table.users = n;
  for (const auto& sessions : perUser) {
    if (sessions.empty()) continue;
    std::array<Real, 4> userMax{sessions[0][0], sessions[0][1], sessions[0][2], sessions[0][3]};
    for (const auto& r : sessions) {
      for (int t = 0; t < 4; ++t) {
        table.mean[static_cast<size_t>(t)] += r[t];
        userMax[static_cast<size_t>(t)] = std::max(userMax[static_cast<size_t>(t)], r[t]);
      }
      ++table.sessions;
    }
    for (int t = 0; t < 4; ++t) table.maxMean[static_cast<size_t>(t)] += userMax[static_cast<size_t>(t)];
  }
  if (table.sessions == 0) throw ContractError("no session could be generated for the evaluation set");
  for (int t = 0; t < 4; ++t) {
    table.mean[static_cast<size_t>(t)] /= static_cast<Real>(table.sessions);
    table.maxMean[static_cast<size_t>(t)] /= static_cast<Real>(table.users);
  }
  return table;
}

Real meanTrueTopSessionValue(GenModel& policy, const sim::SyntheticCatalog& catalog,
                             const ItemIndex& index, std::span<const TrainingExample> users,
                             std::span<const sim::SyntheticUser> simUsers, int beamSize,
                             bool useKvCache, int threads) {
  if (users.empty()) throw ArgumentError("oracle evaluation needs users");
  const int n = static_cast<int>(users.size());
  std::vector<Real> values(static_cast<size_t>(n));
  parallelFor(n, threads, [&](int u) {
    gen::BeamConfig bc;
    bc.beamSize = beamSize;
    bc.useKvCache = useKvCache;
    auto beams = beamSearchSession(policy, users[static_cast<size_t>(u)].history, index, bc);
    if (beams.sessions.empty()) throw ContractError("beam search produced no session");
    const auto items = resolveSessionItems(index, beams.sessions[0].items);
    const auto& simUser = simUsers[static_cast<size_t>(users[static_cast<size_t>(u)].userId)];
    values[static_cast<size_t>(u)] = sim::trueSessionValue(catalog, simUser, items);
  });
  Real total = 0;
  for (Real v : values) total += v;
  return total / static_cast<Real>(n);
}

}  // namespace onerec::align
