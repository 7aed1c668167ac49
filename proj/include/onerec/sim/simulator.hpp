#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "onerec/numerics/rng.hpp"
#include "onerec/numerics/tensor.hpp"

namespace onerec::sim {

// Target order used everywhere: swt, vtr, wtr, ltr.
enum Target : int { kSwt = 0, kVtr = 1, kWtr = 2, kLtr = 3 };
constexpr std::array<const char*, 4> kTargetNames{"swt", "vtr", "wtr", "ltr"};

struct SimConfig {
  int numItems = 5000;
  int embedDim = 32;
  int numClusters = 16;
  Real itemNoise = 0.3;

  int numUsers = 2000;
  int historyLength = 32;
  int sessionSize = 5;       // m
  int sessionsPerUser = 10;
  Real historyTemp = 1.0;    // softmax temperature for history sampling
  Real affinityTemp = 0.25;  // softmax temperature of the affinity-greedy logger
  Real prefNoise = 0.5;      // user preference = normalize(center + prefNoise * eps)
  Real userWeightStd = 0.25; // per-target affinity weight = exp(std * eps)

  // Logistic links. Base rates at zero affinity: watch 0.5, like
  // likeScale/2, follow followScale/2.
  Real watchSlope = 1.0, watchBias = 0.0;
  Real timeSlope = 0.8, timeBias = 0.0, watchTimeFull = 30.0;
  Real likeScale = 0.1, likeSlope = 1.0, likeBias = 0.0;
  Real followScale = 0.02, followSlope = 1.0, followBias = 0.0;

  // Session-label rules.
  int vtrCountThreshold = 5;
  Real swtTimeThreshold = 75.0;

  // Weights folding the four target probabilities into one session value.
  std::array<Real, 4> valueWeights{0.25, 0.25, 0.25, 0.25};
};

struct SyntheticCatalog {
  SimConfig cfg;
  uint64_t seed = 0;
  std::vector<int64_t> ids;  // 0..numItems-1
  Tensor embeddings;         // [numItems, d]
  Tensor clusterCenters;     // [numClusters, d]
  std::vector<int> clusterOf;

  std::span<const Real> embeddingOf(int64_t itemId) const;
};

struct SyntheticUser {
  int64_t userId = 0;
  int homeCluster = 0;
  Tensor preference;                  // [d], unit norm
  std::array<Real, 4> targetWeight;   // multiplicative affinity weight per target
  std::vector<int64_t> history;       // oldest first
};

struct SessionLabels {
  int swt = 0, vtr = 0, wtr = 0, ltr = 0;
  int operator[](int t) const;
};

struct Feedback {
  SessionLabels labels;
  std::vector<Real> watchTimes;
  std::vector<uint8_t> watched, liked, followed;
};

struct InteractionLog {
  int64_t userId = 0;
  std::vector<int64_t> history;
  std::vector<int64_t> session;
  SessionLabels labels;
  std::vector<Real> watchTimes;
};

enum class LogPolicy { kAffinityGreedy, kRandom };
LogPolicy logPolicyFromString(const std::string& s);
std::string logPolicyName(LogPolicy p);

SyntheticCatalog generateCatalog(const SimConfig& cfg, uint64_t seed);
std::vector<SyntheticUser> generateUsers(const SyntheticCatalog& catalog, uint64_t seed);

// Per-item link functions (exposed so tests and the oracle share semantics).
Real affinity(const SyntheticCatalog& catalog, const SyntheticUser& user, int64_t itemId);
Real watchProbability(const SyntheticCatalog& catalog, const SyntheticUser& user, int64_t itemId);
Real watchTimeIfWatched(const SyntheticCatalog& catalog, const SyntheticUser& user, int64_t itemId);
Real likeProbability(const SyntheticCatalog& catalog, const SyntheticUser& user, int64_t itemId);
Real followProbability(const SyntheticCatalog& catalog, const SyntheticUser& user, int64_t itemId);

// Draws per item, in order: watch, like, follow. Watch time is
// deterministic given the watch draw (the oracle integrates it exactly).
Feedback simulateSessionFeedback(const SyntheticCatalog& catalog, const SyntheticUser& user,
                                 std::span<const int64_t> session, uint64_t seed);

// Closed-form probabilities of the four session labels.
std::array<Real, 4> trueSessionTargetProbs(const SyntheticCatalog& catalog, const SyntheticUser& user,
                                           std::span<const int64_t> session);
// valueWeights-combined scalar; the ground-truth session value.
Real trueSessionValue(const SyntheticCatalog& catalog, const SyntheticUser& user,
                      std::span<const int64_t> session);
// E[sum of realized watch times].
Real expectedWatchTime(const SyntheticCatalog& catalog, const SyntheticUser& user,
                       std::span<const int64_t> session);

std::vector<InteractionLog> generateTrainingLogs(const SyntheticCatalog& catalog,
                                                 std::span<const SyntheticUser> users,
                                                 int sessionsPerUser, LogPolicy policy,
                                                 bool qualityFilter, uint64_t seed);

// Weighted sample of k distinct indices; weights need not be normalized.
std::vector<int> weightedSampleWithoutReplacement(std::span<const Real> weights, int k, Rng& rng);

}  // namespace onerec::sim
