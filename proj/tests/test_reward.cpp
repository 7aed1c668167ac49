#include <algorithm>
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "onerec/numerics/finite_diff.hpp"
#include "onerec/numerics/stats.hpp"
#include "onerec/reward/reward_model.hpp"

using namespace onerec;
using namespace onerec::reward;

namespace {

Tensor randMat(int r, int c, Rng& rng, Real scale = 1.0) {
  Tensor t({r, c});
  for (int64_t i = 0; i < t.size(); ++i) t[i] = scale * static_cast<Real>(rng.normal());
  return t;
}

RewardConfig smallConfig() {
  RewardConfig cfg;
  cfg.inputDim = 8;
  cfg.dRm = 8;
  cfg.hidden = 12;
  return cfg;
}

}  // namespace

TEST_CASE("empty history makes features depend on the item alone") {
  RewardModel m(smallConfig(), 1);
  Rng rng(2);
  Tensor sess = randMat(3, 8, rng);

  Tape t(false);
  VarId features = m.sessionFeaturesVar(t, t.input(m.zeroHistory()), t.input(sess));
  // manual recompute: e = [proj ; proj * 0] * wEnc + bEnc = slice-of-wEnc product
  VarId proj = t.matmul(t.input(sess), t.param(m.wProj));
  VarId zeros = t.input(Tensor({3, 8}));
  VarId manual = t.addBias(t.matmul(t.concatCols(proj, zeros), t.param(m.wEnc)), t.param(m.bEnc));
  for (int64_t i = 0; i < t.value(features).size(); ++i) {
    CHECK(t.value(features)[i] == doctest::Approx(t.value(manual)[i]).epsilon(1e-12));
  }

  VarId u = m.userContextVar(t, t.input(m.zeroHistory()));
  for (int64_t i = 0; i < t.value(u).size(); ++i) CHECK(t.value(u)[i] == 0.0);
}

TEST_CASE("history permutation leaves features unchanged") {
  RewardModel m(smallConfig(), 3);
  Rng rng(4);
  Tensor hist = randMat(5, 8, rng);
  Tensor sess = randMat(2, 8, rng);
  Tensor permuted({5, 8});
  const int perm[5] = {3, 0, 4, 1, 2};
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 8; ++c) permuted.at(r, c) = hist.at(perm[r], c);
  }
  Tape t(false);
  const Tensor& a = t.value(m.sessionFeaturesVar(t, t.input(hist), t.input(sess)));
  const Tensor& b = t.value(m.sessionFeaturesVar(t, t.input(permuted), t.input(sess)));
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

  const Tensor& ua = t.value(m.userContextVar(t, t.input(hist)));
  const Tensor& ub = t.value(m.userContextVar(t, t.input(permuted)));
  for (int64_t i = 0; i < ua.size(); ++i) CHECK(ua[i] == doctest::Approx(ub[i]).epsilon(1e-12));
}

TEST_CASE("session features have one row per item") {
  RewardModel m(smallConfig(), 5);
  Rng rng(6);
  Tape t(false);
  VarId f = m.sessionFeaturesVar(t, t.input(randMat(4, 8, rng)), t.input(randMat(5, 8, rng)));
  CHECK(t.value(f).rows() == 5);
  CHECK(t.value(f).cols() == 8);
}

TEST_CASE("self-attention fusion closed forms") {
  RewardModel m(smallConfig(), 7);
  Rng rng(8);

  SUBCASE("single row reduces to its value projection") {
    Tensor f = randMat(1, 8, rng);
    Tape t(false);
    const Tensor& fused = t.value(m.sessionFuseVar(t, t.input(f)));
    const Tensor& direct = t.value(t.matmul(t.input(f), t.param(m.wsV)));
    for (int64_t i = 0; i < fused.size(); ++i) CHECK(fused[i] == doctest::Approx(direct[i]).epsilon(1e-12));
  }

  SUBCASE("zero value projection zeroes the output") {
    m.wsV.value.fill(0);
    Tape t(false);
    const Tensor& fused = t.value(m.sessionFuseVar(t, t.input(randMat(3, 8, rng))));
    for (int64_t i = 0; i < fused.size(); ++i) CHECK(fused[i] == 0.0);
  }

  SUBCASE("full attention: any item moves every row") {
    Tensor f = randMat(4, 8, rng);
    Tensor g = f;
    g.at(2, 5) += 0.7;
    Tape t(false);
    const Tensor& a = t.value(m.sessionFuseVar(t, t.input(f)));
    const Tensor& b = t.value(m.sessionFuseVar(t, t.input(g)));
    for (int r = 0; r < 4; ++r) {
      Real diff = 0;
      for (int c = 0; c < 8; ++c) diff += std::abs(a.at(r, c) - b.at(r, c));
      CHECK(diff > 1e-9);
    }
  }

  SUBCASE("identity value projection keeps rows in the input box hull") {
    m.wsV.value.fill(0);
    for (int i = 0; i < 8; ++i) m.wsV.value.at(i, i) = 1.0;
    Tensor f = randMat(5, 8, rng);
    Tape t(false);
    const Tensor& fused = t.value(m.sessionFuseVar(t, t.input(f)));
    for (int c = 0; c < 8; ++c) {
      Real lo = f.at(0, c), hi = f.at(0, c);
      for (int r = 1; r < 5; ++r) {
        lo = std::min(lo, f.at(r, c));
        hi = std::max(hi, f.at(r, c));
      }
      for (int r = 0; r < 5; ++r) {
        CHECK(fused.at(r, c) >= lo - 1e-12);
        CHECK(fused.at(r, c) <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("tower outputs and loss closed forms") {
  RewardModel m(smallConfig(), 9);
  Rng rng(10);
  Tensor hist = randMat(4, 8, rng);
  Tensor sess = randMat(3, 8, rng);

  SUBCASE("zero towers predict one half everywhere") {
    for (auto& tower : m.towers) {
      tower.w1.value.fill(0);
      tower.b1.value.fill(0);
      tower.w2.value.fill(0);
      tower.b2.value.fill(0);
    }
    auto r = m.predictRewards(hist, sess);
    for (int t = 0; t < 4; ++t) CHECK(r[t] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.scoreSession(hist, sess) == doctest::Approx(0.5).epsilon(1e-12));

    sim::SessionLabels labels{1, 0, 1, 0};
    Tape t(false);
    const Real loss = t.value(m.rmLossVar(t, t.input(hist), t.input(sess), labels)).item();
    CHECK(loss == doctest::Approx(4 * std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("outputs stay strictly inside (0,1)") {
    auto r = m.predictRewards(hist, sess);
    for (int t = 0; t < 4; ++t) {
      CHECK(r[t] > 0.0);
      CHECK(r[t] < 1.0);
    }
  }

  SUBCASE("duplicating the session changes sum pooling") {
    Tensor doubled({6, 8});
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 8; ++c) doubled.at(r, c) = sess.at(r % 3, c);
    }
    auto a = m.predictRewards(hist, sess);
    auto b = m.predictRewards(hist, doubled);
    Real diff = 0;
    for (int t = 0; t < 4; ++t) diff += std::abs(a[t] - b[t]);
    CHECK(diff > 1e-9);
  }

  SUBCASE("loss vanishes with confident correct predictions") {
    sim::SessionLabels labels{1, 1, 0, 0};
    // drive tower biases to large magnitudes of the right sign
    m.towers[0].b2.value[0] = 50;
    m.towers[1].b2.value[0] = 50;
    m.towers[2].b2.value[0] = -50;
    m.towers[3].b2.value[0] = -50;
    for (auto& tower : m.towers) {
      tower.w1.value.fill(0);
      tower.w2.value.fill(0);
    }
    Tape t(false);
    CHECK(t.value(m.rmLossVar(t, t.input(hist), t.input(sess), labels)).item() < 1e-12);
  }
}

TEST_CASE("reward loss gradient passes finite differences") {
  RewardModel m(smallConfig(), 11);
  Rng rng(12);
  Tensor hist = randMat(4, 8, rng);
  Tensor sess = randMat(3, 8, rng);
  sim::SessionLabels labels{1, 0, 0, 1};
  auto loss = [&]() -> Real {
    Tape t(false);
    return t.value(m.rmLossVar(t, t.input(hist), t.input(sess), labels)).item();
  };
  auto grads = [&]() {
    Tape t;
    t.backward(m.rmLossVar(t, t.input(hist), t.input(sess), labels));
  };
  auto report = finiteDiffCheck(loss, grads, m.parameters(), 1e-5);
  INFO(report.summary());
  CHECK(report.maxRelError < 1e-6);
}

TEST_CASE("score combiner is monotone and matches recomputation") {
  RewardModel m(smallConfig(), 13);
  RewardVector base{0.4, 0.3, 0.2, 0.6};
  const Real s0 = m.combineScore(base);
  for (int t = 0; t < 4; ++t) {
    RewardVector bumped = base;
    switch (t) {
      case 0: bumped.swt += 0.1; break;
      case 1: bumped.vtr += 0.1; break;
      case 2: bumped.wtr += 0.1; break;
      case 3: bumped.ltr += 0.1; break;
    }
    CHECK(m.combineScore(bumped) > s0);
  }

  // ranking 8 candidate sessions by scoreSession matches the recomputed
  // weighted tower outputs
  Rng rng(14);
  sim::SimConfig sc;
  sc.numItems = 64;
  sc.embedDim = 8;
  sc.numClusters = 4;
  sc.numUsers = 2;
  sc.historyLength = 6;
  auto catalog = sim::generateCatalog(sc, 15);
  auto users = sim::generateUsers(catalog, 16);
  Tensor hist = embeddingRows(catalog, users[0].history);
  std::vector<std::pair<Real, int>> ranked;
  std::vector<Real> recomputed;
  for (int cand = 0; cand < 8; ++cand) {
    std::vector<int64_t> session;
    for (int i = 0; i < 5; ++i) session.push_back((cand * 7 + i * 3) % sc.numItems);
    Tensor sess = embeddingRows(catalog, session);
    ranked.emplace_back(m.scoreSession(hist, sess), cand);
    auto r = m.predictRewards(hist, sess);
    recomputed.push_back(m.combineScore(r));
  }
  for (int cand = 0; cand < 8; ++cand) {
    CHECK(ranked[static_cast<size_t>(cand)].first == doctest::Approx(recomputed[static_cast<size_t>(cand)]).epsilon(1e-12));
  }
}

TEST_CASE("zero training steps keep the initialization") {
  RewardModel m(smallConfig(), 17);
  RewardModel copy = m;
  sim::SimConfig sc;
  sc.numItems = 32;
  sc.embedDim = 8;
  sc.numClusters = 2;
  auto catalog = sim::generateCatalog(sc, 18);
  RmTrainConfig cfg;
  cfg.steps = 0;
  trainRewardModel(m, catalog, {}, cfg);
  auto a = m.parameters();
  auto b = copy.parameters();
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(std::memcmp(a[i]->value.data(), b[i]->value.data(), sizeof(Real) * a[i]->value.size()) == 0);
  }
}

TEST_CASE("short training beats chance on separable labels") {
  sim::SimConfig sc;
  sc.numItems = 400;
  sc.embedDim = 8;
  sc.numClusters = 4;
  sc.numUsers = 80;
  sc.historyLength = 8;
  sc.sessionsPerUser = 6;
  auto catalog = sim::generateCatalog(sc, 19);
  auto users = sim::generateUsers(catalog, 20);
  auto randomLogs = sim::generateTrainingLogs(catalog, users, 3, sim::LogPolicy::kRandom, false, 21);
  auto greedyLogs = sim::generateTrainingLogs(catalog, users, 3, sim::LogPolicy::kAffinityGreedy, false, 22);

  std::vector<RmExample> examples;
  for (auto* source : {&randomLogs, &greedyLogs}) {
    for (auto& log : *source) {
      examples.push_back(RmExample{log.history, log.session, log.labels});
    }
  }
  // alternate into train/heldout
  std::vector<RmExample> train, heldout;
  for (size_t i = 0; i < examples.size(); ++i) {
    (i % 5 == 0 ? heldout : train).push_back(examples[i]);
  }

  RewardConfig cfg;
  cfg.inputDim = 8;
  cfg.dRm = 16;
  cfg.hidden = 24;
  RewardModel m(cfg, 23);
  RmTrainConfig tc;
  tc.steps = 400;
  tc.batchSize = 8;
  tc.seed = 24;
  trainRewardModel(m, catalog, train, tc);
  auto report = evaluateRmAuc(m, catalog, heldout);
  INFO("auc swt=", report.auc[0], " vtr=", report.auc[1], " wtr=", report.auc[2], " ltr=", report.auc[3]);
  CHECK(report.auc[sim::kVtr] > 0.55);
  CHECK(report.auc[sim::kSwt] > 0.55);
}
