#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "onerec/sim/simulator.hpp"
#include "onerec/tokenizer/codebooks.hpp"

using namespace onerec;
using namespace onerec::sim;

namespace {

SimConfig tinyConfig() {
  SimConfig cfg;
  cfg.numItems = 300;
  cfg.embedDim = 8;
  cfg.numClusters = 4;
  cfg.numUsers = 20;
  cfg.historyLength = 8;
  cfg.sessionSize = 5;
  cfg.sessionsPerUser = 4;
  return cfg;
}

}  // namespace

TEST_CASE("catalog generation is deterministic and cluster-shaped") {
  SimConfig cfg = tinyConfig();
  auto a = generateCatalog(cfg, 42);
  auto b = generateCatalog(cfg, 42);
  CHECK(a.embeddings.values() == b.embeddings.values());
  CHECK(a.clusterOf == b.clusterOf);

  auto c = generateCatalog(cfg, 43);
  CHECK(a.embeddings.values() != c.embeddings.values());

  // single-cluster catalogs are unimodal around the lone center
  cfg.numClusters = 1;
  auto uni = generateCatalog(cfg, 7);
  for (int i = 0; i < cfg.numItems; ++i) CHECK(uni.clusterOf[static_cast<size_t>(i)] == 0);
}

TEST_CASE("users are deterministic; zero history length supported") {
  SimConfig cfg = tinyConfig();
  auto catalog = generateCatalog(cfg, 1);
  auto u1 = generateUsers(catalog, 5);
  auto u2 = generateUsers(catalog, 5);
  REQUIRE(u1.size() == u2.size());
  for (size_t i = 0; i < u1.size(); ++i) {
    CHECK(u1[i].history == u2[i].history);
    CHECK(u1[i].preference.values() == u2[i].preference.values());
  }

  cfg.historyLength = 0;
  auto catalogEmpty = generateCatalog(cfg, 1);
  auto empties = generateUsers(catalogEmpty, 5);
  for (auto& u : empties) CHECK(u.history.empty());
}

TEST_CASE("history concentrates on the preferred cluster") {
  SimConfig cfg = tinyConfig();
  cfg.numItems = 400;
  cfg.historyLength = 16;
  auto catalog = generateCatalog(cfg, 11);
  auto users = generateUsers(catalog, 12);
  int hits = 0, total = 0;
  for (auto& u : users) {
    for (int64_t item : u.history) {
      hits += catalog.clusterOf[static_cast<size_t>(item)] == u.homeCluster ? 1 : 0;
      ++total;
    }
  }
  // chance rate would be ~1/numClusters = 25%
  CHECK(static_cast<double>(hits) / total > 0.5);
}

TEST_CASE("zero preference and zero bias hit the logistic midpoint") {
  SimConfig cfg = tinyConfig();
  auto catalog = generateCatalog(cfg, 3);
  SyntheticUser user;
  user.preference = Tensor({cfg.embedDim});  // orthogonal to everything
  user.targetWeight = {1, 1, 1, 1};
  CHECK(watchProbability(catalog, user, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(likeProbability(catalog, user, 0) == doctest::Approx(cfg.likeScale / 2).epsilon(1e-12));
  CHECK(followProbability(catalog, user, 0) == doctest::Approx(cfg.followScale / 2).epsilon(1e-12));
  CHECK(watchTimeIfWatched(catalog, user, 0) == doctest::Approx(cfg.watchTimeFull / 2).epsilon(1e-12));
}

TEST_CASE("feedback is deterministic under seed and wrong items raise") {
  SimConfig cfg = tinyConfig();
  auto catalog = generateCatalog(cfg, 3);
  auto users = generateUsers(catalog, 4);
  std::vector<int64_t> session{1, 2, 3, 4, 5};
  auto f1 = simulateSessionFeedback(catalog, users[0], session, 99);
  auto f2 = simulateSessionFeedback(catalog, users[0], session, 99);
  CHECK(f1.watched == f2.watched);
  CHECK(f1.watchTimes == f2.watchTimes);
  CHECK(f1.labels.swt == f2.labels.swt);

  std::vector<int64_t> bad{1, 9999};
  CHECK_THROWS_AS((void)simulateSessionFeedback(catalog, users[0], bad, 1), ContractError);
}

TEST_CASE("top-affinity sessions out-watch random sessions (Monte Carlo)") {
  SimConfig cfg = tinyConfig();
  auto catalog = generateCatalog(cfg, 8);
  auto users = generateUsers(catalog, 9);
  const SyntheticUser& user = users[0];

  std::vector<std::pair<Real, int64_t>> ranked;
  for (int i = 0; i < cfg.numItems; ++i) ranked.emplace_back(affinity(catalog, user, i), i);
  std::sort(ranked.rbegin(), ranked.rend());
  std::vector<int64_t> best, random;
  for (int i = 0; i < cfg.sessionSize; ++i) {
    best.push_back(ranked[static_cast<size_t>(i)].second);
    random.push_back(ranked[ranked.size() / 2 + static_cast<size_t>(i) * 7].second);
  }

  Real bestTime = 0, randomTime = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    auto fb = simulateSessionFeedback(catalog, user, best, 1000 + static_cast<uint64_t>(draw));
    auto fr = simulateSessionFeedback(catalog, user, random, 5000 + static_cast<uint64_t>(draw));
    for (Real t : fb.watchTimes) bestTime += t;
    for (Real t : fr.watchTimes) randomTime += t;
  }
  CHECK(bestTime > randomTime);
  CHECK(expectedWatchTime(catalog, user, best) > expectedWatchTime(catalog, user, random));
}

TEST_CASE("Monte-Carlo session value converges to the closed form") {
  SimConfig cfg = tinyConfig();
  auto catalog = generateCatalog(cfg, 21);
  auto users = generateUsers(catalog, 22);
  const SyntheticUser& user = users[1];
  std::vector<int64_t> session{10, 50, 90, 130, 170};

  const auto exact = trueSessionTargetProbs(catalog, user, session);
  const int draws = 10000;
  std::array<double, 4> mc{0, 0, 0, 0};
  for (int i = 0; i < draws; ++i) {
    auto fb = simulateSessionFeedback(catalog, user, session, 777000 + static_cast<uint64_t>(i));
    mc[0] += fb.labels.swt;
    mc[1] += fb.labels.vtr;
    mc[2] += fb.labels.wtr;
    mc[3] += fb.labels.ltr;
  }
  for (int t = 0; t < 4; ++t) {
    const double p = mc[static_cast<size_t>(t)] / draws;
    const double se = std::sqrt(std::max(exact[static_cast<size_t>(t)] * (1 - exact[static_cast<size_t>(t)]), 1e-9) / draws);
    INFO("target ", t, " exact ", exact[static_cast<size_t>(t)], " mc ", p, " se ", se);
    CHECK(std::abs(p - exact[static_cast<size_t>(t)]) <= 3 * se + 1e-12);
  }

  // value equals the weighted combination of the target probabilities
  Real manual = 0;
  for (int t = 0; t < 4; ++t) manual += catalog.cfg.valueWeights[static_cast<size_t>(t)] * exact[static_cast<size_t>(t)];
  CHECK(trueSessionValue(catalog, user, session) == doctest::Approx(manual).epsilon(1e-14));
}

TEST_CASE("session value is monotone in item affinity") {
  SimConfig cfg = tinyConfig();
  auto catalog = generateCatalog(cfg, 31);
  auto users = generateUsers(catalog, 32);
  const SyntheticUser& user = users[2];

  std::vector<std::pair<Real, int64_t>> ranked;
  for (int i = 0; i < cfg.numItems; ++i) ranked.emplace_back(affinity(catalog, user, i), i);
  std::sort(ranked.rbegin(), ranked.rend());

  std::vector<int64_t> low{ranked[200].second, ranked[210].second, ranked[220].second,
                           ranked[230].second, ranked[240].second};
  std::vector<int64_t> better = low;
  better[0] = ranked[0].second;  // strictly higher affinity in slot 0
  CHECK(trueSessionValue(catalog, user, better) > trueSessionValue(catalog, user, low));

  // duplicate-best session is computable and comparable against the top session
  std::vector<int64_t> dupBest(5, ranked[0].second);
  std::vector<int64_t> trueBest;
  for (int i = 0; i < 5; ++i) trueBest.push_back(ranked[static_cast<size_t>(i)].second);
  const Real vDup = trueSessionValue(catalog, user, dupBest);
  const Real vBest = trueSessionValue(catalog, user, trueBest);
  CHECK(std::isfinite(vDup));
  CHECK(std::isfinite(vBest));
}

TEST_CASE("random-policy logs match configured base rates") {
  SimConfig cfg = tinyConfig();
  cfg.numUsers = 60;
  cfg.sessionsPerUser = 8;
  auto catalog = generateCatalog(cfg, 41);
  auto users = generateUsers(catalog, 42);
  auto logs = generateTrainingLogs(catalog, users, cfg.sessionsPerUser, LogPolicy::kRandom,
                                   /*qualityFilter=*/false, 43);
  REQUIRE(logs.size() == static_cast<size_t>(cfg.numUsers * cfg.sessionsPerUser));

  // Per-item watch rate should sit near 0.5 for random sessions; verify via
  // watch times (nonzero time == watched).
  int watched = 0, total = 0;
  for (auto& log : logs) {
    for (Real t : log.watchTimes) {
      watched += t > 0 ? 1 : 0;
      ++total;
    }
  }
  const double rate = static_cast<double>(watched) / total;
  CHECK(rate > 0.40);
  CHECK(rate < 0.60);
}

TEST_CASE("quality filter keeps only sessions meeting a criterion") {
  SimConfig cfg = tinyConfig();
  cfg.numUsers = 30;
  auto catalog = generateCatalog(cfg, 51);
  auto users = generateUsers(catalog, 52);
  auto logs = generateTrainingLogs(catalog, users, 6, LogPolicy::kRandom, /*qualityFilter=*/true, 53);
  for (auto& log : logs) {
    CHECK((log.labels.swt || log.labels.vtr || log.labels.wtr || log.labels.ltr));
  }
  auto again = generateTrainingLogs(catalog, users, 6, LogPolicy::kRandom, true, 53);
  REQUIRE(again.size() == logs.size());
  for (size_t i = 0; i < logs.size(); ++i) {
    CHECK(again[i].session == logs[i].session);
    CHECK(again[i].watchTimes == logs[i].watchTimes);
  }
}

TEST_CASE("affinity-greedy sessions rank items by affinity") {
  SimConfig cfg = tinyConfig();
  cfg.numUsers = 10;
  auto catalog = generateCatalog(cfg, 61);
  auto users = generateUsers(catalog, 62);
  auto logs = generateTrainingLogs(catalog, users, 3, LogPolicy::kAffinityGreedy, false, 63);
  for (auto& log : logs) {
    const SyntheticUser& user = users[static_cast<size_t>(log.userId)];
    for (size_t i = 1; i < log.session.size(); ++i) {
      CHECK(affinity(catalog, user, log.session[i - 1]) >=
            affinity(catalog, user, log.session[i]) - 1e-12);
    }
  }
}

TEST_CASE("tokenizer groups same-cluster items under shared level-1 codes") {
  SimConfig cfg = tinyConfig();
  cfg.numItems = 512;
  cfg.numClusters = 8;
  auto catalog = generateCatalog(cfg, 71);
  auto stack = tokenizer::fitResidualStack(catalog.embeddings, 16, 1, 50, 72);
  auto codes = tokenizer::quantizeCatalog(catalog.embeddings, stack);

  // modal level-1 code frequency per simulator cluster, vs 1/16 chance
  double purity = 0;
  for (int c = 0; c < cfg.numClusters; ++c) {
    std::map<int, int> freq;
    int count = 0;
    for (int i = 0; i < cfg.numItems; ++i) {
      if (catalog.clusterOf[static_cast<size_t>(i)] != c) continue;
      freq[codes[static_cast<size_t>(i)].codes[0]]++;
      ++count;
    }
    int modal = 0;
    for (auto& [code, n] : freq) modal = std::max(modal, n);
    purity += static_cast<double>(modal) / count;
  }
  purity /= cfg.numClusters;
  CHECK(purity > 5.0 / 16.0);
}
