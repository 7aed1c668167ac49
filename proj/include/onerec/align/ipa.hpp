#pragma once

#include <optional>
#include <span>
#include <vector>

#include "onerec/genmodel/beam_search.hpp"
#include "onerec/genmodel/training.hpp"
#include "onerec/reward/reward_model.hpp"

namespace onerec::align {

using gen::GenModel;
using gen::ScoredSession;
using gen::SemanticId;
using gen::TrainingExample;
using tokenizer::ItemIndex;

struct IpaConfig {
  int numResponses = 16;   // candidates sampled per selected user
  Real rDpo = 0.05;        // fraction of samples routed through the DPO branch
  Real beta = 0.1;         // DPO temperature
  Real lambda = 1.0;       // DPO loss weight
  int epochs = 3;
  int samplesPerEpoch = 500;
  AdamConfig adam;
  int beamSize = 16;
  bool useKvCache = true;
  bool temperatureSampling = false;  // ablation: sample instead of beam search
  Real temperature = 1.0;
  int logEvery = 0;

  void validate() const {
    if (numResponses < 2) throw ConfigError("numResponses must be at least 2 (pairs need distinct extremes)");
    if (rDpo < 0 || rDpo > 1) throw ConfigError("rDpo must lie in [0,1]");
    if (beta <= 0) throw ConfigError("beta must be positive");
    if (lambda < 0) throw ConfigError("lambda must be non-negative");
    if (epochs < 1 || samplesPerEpoch < 1) throw ConfigError("epochs and samplesPerEpoch must be positive");
    if (beamSize < numResponses && !temperatureSampling) {
      throw ConfigError("beamSize must cover numResponses");
    }
  }
};

struct PreferencePair {
  std::vector<SemanticId> history;
  std::vector<SemanticId> winner;
  std::vector<SemanticId> loser;
  Real winnerReward = 0;
  Real loserReward = 0;
  Real winnerLogProb = 0;
  Real loserLogProb = 0;
};

// Top-N distinct responses from the (frozen) sampling policy. rng is only
// consumed in temperature mode.
std::vector<ScoredSession> sampleResponses(GenModel& policy, std::span<const SemanticId> history,
                                           const ItemIndex& index, const IpaConfig& cfg, Rng& rng);

// Best/worst extremes by reward; ties fall back to generation log-prob
// (higher for the winner, lower for the loser) and then to sample index.
// Empty when fewer than two candidates exist.
std::optional<PreferencePair> selectPair(std::span<const ScoredSession> scored,
                                         std::span<const Real> rewards,
                                         std::span<const SemanticId> history);

// -log sigmoid(beta * (policy winner margin - reference winner margin));
// the reference terms are evaluated without gradients.
VarId dpoLossVar(Tape& t, GenModel& policy, GenModel& reference, const PreferencePair& pair, Real beta);
Real dpoLoss(GenModel& policy, GenModel& reference, const PreferencePair& pair, Real beta);

struct EpochMetrics {
  int epoch = 0;
  Real meanNtpLoss = 0;
  Real meanDpoLoss = 0;  // over DPO-branch samples
  int dpoSamples = 0;
  int pairsBuilt = 0;
  int skippedUsers = 0;
  Real meanWinnerReward = 0;
  Real meanLoserReward = 0;
};

struct IpaResult {
  std::vector<EpochMetrics> epochs;
  // snapshots[0] is the seed model; snapshots[t] the policy after epoch t.
  std::vector<GenModel> snapshots;
  std::vector<PreferencePair> pairs;  // captured when keepPairs is set
};

// One pass of iterative preference alignment over the interaction logs.
// Per epoch the sampling/reference snapshot is frozen at the epoch-start
// policy and refreshed afterwards. With rDpo == 0 the parameter trajectory
// is bit-identical to plain NTP training at batch size 1 and the same seed
// (the branch draw consumes a dedicated substream).
IpaResult ipaTrain(GenModel& policy, reward::RewardModel& rm, const sim::SyntheticCatalog& catalog,
                   const ItemIndex& index, std::span<const TrainingExample> logs,
                   const IpaConfig& cfg, uint64_t seed, bool keepPairs = false);

// Session items resolved through the trie (lowest item id on collisions).
std::vector<int64_t> resolveSessionItems(const ItemIndex& index, std::span<const SemanticId> session);

struct XtrTable {
  std::array<Real, 4> mean{};     // over all (user, session) pairs
  std::array<Real, 4> maxMean{};  // mean of per-user maxima
  int users = 0;
  int sessions = 0;
};

// RM-scored mean/max table over the topN generated sessions per user.
XtrTable evaluateXtr(GenModel& policy, reward::RewardModel& rm, const sim::SyntheticCatalog& catalog,
                     const ItemIndex& index, std::span<const TrainingExample> users, int topN,
                     bool useKvCache = true, int threads = 1);

// Ground-truth oracle: mean trueSessionValue of each user's top-1 beam
// session. Drives the alignment acceptance comparison.
Real meanTrueTopSessionValue(GenModel& policy, const sim::SyntheticCatalog& catalog,
                             const ItemIndex& index, std::span<const TrainingExample> users,
                             std::span<const sim::SyntheticUser> simUsers, int beamSize,
                             bool useKvCache = true, int threads = 1);

}  // namespace onerec::align
