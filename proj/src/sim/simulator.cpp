#include "onerec/sim/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "onerec/error.hpp"

namespace onerec::sim {

namespace {

inline Real sigmoid(Real x) {
  if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

void checkItem(const SyntheticCatalog& catalog, int64_t itemId) {
  if (itemId < 0 || itemId >= static_cast<int64_t>(catalog.ids.size())) {
    throw ContractError("unknown item id " + std::to_string(itemId));
  }
}

Real dotWithItem(const SyntheticCatalog& catalog, const Tensor& preference, int64_t itemId) {
  const Real* e = catalog.embeddings.data() + static_cast<size_t>(itemId) * catalog.cfg.embedDim;
  Real dot = 0;
  for (int j = 0; j < catalog.cfg.embedDim; ++j) dot += preference[j] * e[j];
  return dot;
}

}  // namespace

int SessionLabels::operator[](int t) const {
  switch (t) {
    case kSwt: return swt;
    case kVtr: return vtr;
    case kWtr: return wtr;
    case kLtr: return ltr;
    default: throw IndexError("label index out of range");
  }
}

LogPolicy logPolicyFromString(const std::string& s) {
  if (s == "affinity-greedy") return LogPolicy::kAffinityGreedy;
  if (s == "random") return LogPolicy::kRandom;
  throw ConfigError("unknown logging policy '" + s + "' (expected affinity-greedy or random)");
}

std::string logPolicyName(LogPolicy p) {
  return p == LogPolicy::kAffinityGreedy ? "affinity-greedy" : "random";
}

std::span<const Real> SyntheticCatalog::embeddingOf(int64_t itemId) const {
  checkItem(*this, itemId);
  return {embeddings.data() + static_cast<size_t>(itemId) * cfg.embedDim,
          static_cast<size_t>(cfg.embedDim)};
}

SyntheticCatalog generateCatalog(const SimConfig& cfg, uint64_t seed) {
  if (cfg.numItems < cfg.numClusters) {
    throw ArgumentError("numItems must be at least numClusters");
  }
  SyntheticCatalog catalog;
  catalog.cfg = cfg;
  catalog.seed = seed;
  Rng root(seed);

  Rng centerRng = root.substream("catalog-centers");
  catalog.clusterCenters = Tensor({cfg.numClusters, cfg.embedDim});
  for (int64_t i = 0; i < catalog.clusterCenters.size(); ++i) {
    catalog.clusterCenters[i] = static_cast<Real>(centerRng.normal());
  }

  Rng itemRng = root.substream("catalog-items");
  catalog.embeddings = Tensor({cfg.numItems, cfg.embedDim});
  catalog.ids.resize(static_cast<size_t>(cfg.numItems));
  catalog.clusterOf.resize(static_cast<size_t>(cfg.numItems));
  for (int i = 0; i < cfg.numItems; ++i) {
    catalog.ids[static_cast<size_t>(i)] = i;
    const int c = itemRng.uniformInt(cfg.numClusters);
    catalog.clusterOf[static_cast<size_t>(i)] = c;
    const Real* center = catalog.clusterCenters.data() + static_cast<size_t>(c) * cfg.embedDim;
    Real* e = catalog.embeddings.data() + static_cast<size_t>(i) * cfg.embedDim;
    for (int j = 0; j < cfg.embedDim; ++j) {
      e[j] = center[j] + cfg.itemNoise * static_cast<Real>(itemRng.normal());
    }
  }
  return catalog;
}

std::vector<int> weightedSampleWithoutReplacement(std::span<const Real> weights, int k, Rng& rng) {
  const int n = static_cast<int>(weights.size());
  if (k > n) throw ArgumentError("weighted sample larger than population");
  std::vector<Real> w(weights.begin(), weights.end());
  std::vector<int> out;
  out.reserve(static_cast<size_t>(k));
  for (int draw = 0; draw < k; ++draw) {
    Real total = 0;
    for (Real x : w) total += x;
    if (total <= Real(0)) throw ArgumentError("weighted sample ran out of mass");
    Real u = static_cast<Real>(rng.uniform()) * total;
    int pick = -1;
    for (int i = 0; i < n; ++i) {
      if (w[static_cast<size_t>(i)] <= Real(0)) continue;
      u -= w[static_cast<size_t>(i)];
      if (u < Real(0)) {
        pick = i;
        break;
      }
    }
    if (pick < 0) {  // numerical tail: take the last positive-weight index
      for (int i = n - 1; i >= 0; --i) {
        if (w[static_cast<size_t>(i)] > Real(0)) {
          pick = i;
          break;
        }
      }
    }
    out.push_back(pick);
    w[static_cast<size_t>(pick)] = Real(0);
  }
  return out;
}

std::vector<SyntheticUser> generateUsers(const SyntheticCatalog& catalog, uint64_t seed) {
  const SimConfig& cfg = catalog.cfg;
  Rng root(seed);
  std::vector<SyntheticUser> users;
  users.reserve(static_cast<size_t>(cfg.numUsers));
  for (int u = 0; u < cfg.numUsers; ++u) {
    Rng rng = root.substream("user-" + std::to_string(u));
    SyntheticUser user;
    user.userId = u;
    user.homeCluster = rng.uniformInt(cfg.numClusters);
    user.preference = Tensor({cfg.embedDim});
    const Real* center = catalog.clusterCenters.data() +
                         static_cast<size_t>(user.homeCluster) * cfg.embedDim;
    Real norm = 0;
    for (int j = 0; j < cfg.embedDim; ++j) {
      user.preference[j] = center[j] + cfg.prefNoise * static_cast<Real>(rng.normal());
      norm += user.preference[j] * user.preference[j];
    }
    norm = std::sqrt(norm);
    if (norm > Real(0)) {
      for (int j = 0; j < cfg.embedDim; ++j) user.preference[j] /= norm;
    }
    for (int t = 0; t < 4; ++t) {
      user.targetWeight[static_cast<size_t>(t)] =
          std::exp(cfg.userWeightStd * static_cast<Real>(rng.normal()));
    }
    if (cfg.historyLength > 0) {
      std::vector<Real> weights(static_cast<size_t>(cfg.numItems));
      for (int i = 0; i < cfg.numItems; ++i) {
        weights[static_cast<size_t>(i)] = std::exp(dotWithItem(catalog, user.preference, i) / cfg.historyTemp);
      }
      for (int idx : weightedSampleWithoutReplacement(weights, cfg.historyLength, rng)) {
        user.history.push_back(idx);
      }
    }
    users.push_back(std::move(user));
  }
  return users;
}

Real affinity(const SyntheticCatalog& catalog, const SyntheticUser& user, int64_t itemId) {
  checkItem(catalog, itemId);
  return dotWithItem(catalog, user.preference, itemId);
}

Real watchProbability(const SyntheticCatalog& catalog, const SyntheticUser& user, int64_t itemId) {
  const SimConfig& c = catalog.cfg;
  const Real a = affinity(catalog, user, itemId);
  return sigmoid(c.watchSlope * (user.targetWeight[kVtr] * a + c.watchBias));
}

Real watchTimeIfWatched(const SyntheticCatalog& catalog, const SyntheticUser& user, int64_t itemId) {
  const SimConfig& c = catalog.cfg;
  const Real a = affinity(catalog, user, itemId);
  return c.watchTimeFull * sigmoid(c.timeSlope * (user.targetWeight[kSwt] * a + c.timeBias));
}

Real likeProbability(const SyntheticCatalog& catalog, const SyntheticUser& user, int64_t itemId) {
  const SimConfig& c = catalog.cfg;
  const Real a = affinity(catalog, user, itemId);
  return c.likeScale * sigmoid(c.likeSlope * (user.targetWeight[kLtr] * a + c.likeBias));
}

Real followProbability(const SyntheticCatalog& catalog, const SyntheticUser& user, int64_t itemId) {
  const SimConfig& c = catalog.cfg;
  const Real a = affinity(catalog, user, itemId);
  return c.followScale * sigmoid(c.followSlope * (user.targetWeight[kWtr] * a + c.followBias));
}

Feedback simulateSessionFeedback(const SyntheticCatalog& catalog, const SyntheticUser& user,
                                 std::span<const int64_t> session, uint64_t seed) {
  const SimConfig& cfg = catalog.cfg;
  Rng rng(seed);
  Feedback fb;
  fb.watchTimes.reserve(session.size());
  int watchedCount = 0;
  Real totalTime = 0;
  bool anyLike = false, anyFollow = false;
  for (int64_t itemId : session) {
    checkItem(catalog, itemId);
    const bool watched = rng.uniform() < watchProbability(catalog, user, itemId);
    const bool liked = rng.uniform() < likeProbability(catalog, user, itemId);
    const bool followed = rng.uniform() < followProbability(catalog, user, itemId);
    const Real time = watched ? watchTimeIfWatched(catalog, user, itemId) : Real(0);
    fb.watched.push_back(watched ? 1 : 0);
    fb.liked.push_back(liked ? 1 : 0);
    fb.followed.push_back(followed ? 1 : 0);
    fb.watchTimes.push_back(time);
    watchedCount += watched ? 1 : 0;
    totalTime += time;
    anyLike = anyLike || liked;
    anyFollow = anyFollow || followed;
  }
  fb.labels.vtr = watchedCount >= cfg.vtrCountThreshold ? 1 : 0;
  fb.labels.swt = totalTime >= cfg.swtTimeThreshold ? 1 : 0;
  fb.labels.ltr = anyLike ? 1 : 0;
  fb.labels.wtr = anyFollow ? 1 : 0;
  return fb;
}

std::array<Real, 4> trueSessionTargetProbs(const SyntheticCatalog& catalog, const SyntheticUser& user,
                                           std::span<const int64_t> session) {
  const SimConfig& cfg = catalog.cfg;
  const int m = static_cast<int>(session.size());
  if (m > 20) throw ContractError("closed-form session value supports at most 20 items");

  std::vector<Real> pWatch, tau, pLike, pFollow;
  for (int64_t itemId : session) {
    pWatch.push_back(watchProbability(catalog, user, itemId));
    tau.push_back(watchTimeIfWatched(catalog, user, itemId));
    pLike.push_back(likeProbability(catalog, user, itemId));
    pFollow.push_back(followProbability(catalog, user, itemId));
  }

  // vtr: Poisson-binomial tail P(#watched >= threshold).
  std::vector<Real> countDist(static_cast<size_t>(m) + 1, Real(0));
  countDist[0] = Real(1);
  for (int i = 0; i < m; ++i) {
    for (int c = i + 1; c >= 1; --c) {
      countDist[static_cast<size_t>(c)] = countDist[static_cast<size_t>(c)] * (Real(1) - pWatch[static_cast<size_t>(i)]) +
                                          countDist[static_cast<size_t>(c) - 1] * pWatch[static_cast<size_t>(i)];
    }
    countDist[0] *= Real(1) - pWatch[static_cast<size_t>(i)];
  }
  Real pVtr = 0;
  for (int c = cfg.vtrCountThreshold; c <= m; ++c) {
    if (c >= 0) pVtr += countDist[static_cast<size_t>(c)];
  }
  if (cfg.vtrCountThreshold <= 0) pVtr = Real(1);

  // swt: exact enumeration over watch subsets (watch times are
  // deterministic given the watch draws).
  Real pSwt = 0;
  for (uint32_t mask = 0; mask < (1u << m); ++mask) {
    Real prob = 1, time = 0;
    for (int i = 0; i < m; ++i) {
      if (mask & (1u << i)) {
        prob *= pWatch[static_cast<size_t>(i)];
        time += tau[static_cast<size_t>(i)];
      } else {
        prob *= Real(1) - pWatch[static_cast<size_t>(i)];
      }
    }
    if (time >= cfg.swtTimeThreshold) pSwt += prob;
  }

  Real noLike = 1, noFollow = 1;
  for (int i = 0; i < m; ++i) {
    noLike *= Real(1) - pLike[static_cast<size_t>(i)];
    noFollow *= Real(1) - pFollow[static_cast<size_t>(i)];
  }

  return {pSwt, pVtr, Real(1) - noFollow, Real(1) - noLike};
}

Real trueSessionValue(const SyntheticCatalog& catalog, const SyntheticUser& user,
                      std::span<const int64_t> session) {
  const auto probs = trueSessionTargetProbs(catalog, user, session);
  Real value = 0;
  for (int t = 0; t < 4; ++t) value += catalog.cfg.valueWeights[static_cast<size_t>(t)] * probs[static_cast<size_t>(t)];
  return value;
}

Real expectedWatchTime(const SyntheticCatalog& catalog, const SyntheticUser& user,
                       std::span<const int64_t> session) {
  Real total = 0;
  for (int64_t itemId : session) {
    total += watchProbability(catalog, user, itemId) * watchTimeIfWatched(catalog, user, itemId);
  }
  return total;
}

std::vector<InteractionLog> generateTrainingLogs(const SyntheticCatalog& catalog,
                                                 std::span<const SyntheticUser> users,
                                                 int sessionsPerUser, LogPolicy policy,
                                                 bool qualityFilter, uint64_t seed) {
  const SimConfig& cfg = catalog.cfg;
  Rng root(seed);
  std::vector<InteractionLog> logs;
  logs.reserve(users.size() * static_cast<size_t>(sessionsPerUser));
  std::vector<Real> weights(static_cast<size_t>(cfg.numItems));
  std::vector<Real> affinities(static_cast<size_t>(cfg.numItems));
  for (const SyntheticUser& user : users) {
    if (policy == LogPolicy::kAffinityGreedy) {
      for (int i = 0; i < cfg.numItems; ++i) {
        affinities[static_cast<size_t>(i)] = affinity(catalog, user, i);
        weights[static_cast<size_t>(i)] = std::exp(affinities[static_cast<size_t>(i)] / cfg.affinityTemp);
      }
    }
    for (int s = 0; s < sessionsPerUser; ++s) {
      Rng rng = root.substream("log-" + std::to_string(user.userId) + "-" + std::to_string(s));
      std::vector<int64_t> session;
      if (policy == LogPolicy::kAffinityGreedy) {
        std::vector<int> picks = weightedSampleWithoutReplacement(weights, cfg.sessionSize, rng);
        // rank the chosen items by affinity, best first
        std::sort(picks.begin(), picks.end(), [&](int a, int b) {
          const Real da = affinities[static_cast<size_t>(a)];
          const Real db = affinities[static_cast<size_t>(b)];
          if (da != db) return da > db;
          return a < b;
        });
        session.assign(picks.begin(), picks.end());
      } else {
        for (int idx : rng.sampleWithoutReplacement(cfg.numItems, cfg.sessionSize)) {
          session.push_back(idx);
        }
      }
      Feedback fb = simulateSessionFeedback(catalog, user, session,
                                            rng.substream("feedback").seed());
      if (qualityFilter &&
          !(fb.labels.swt || fb.labels.vtr || fb.labels.wtr || fb.labels.ltr)) {
        continue;
      }
      InteractionLog log;
      log.userId = user.userId;
      log.history = user.history;
      log.session = std::move(session);
      log.labels = fb.labels;
      log.watchTimes = std::move(fb.watchTimes);
      logs.push_back(std::move(log));
    }
  }
  return logs;
}

}  // namespace onerec::sim
