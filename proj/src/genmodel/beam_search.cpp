#include "onerec/genmodel/beam_search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace onerec::gen {

namespace {

// Projected encoder keys/values per decoder layer; shared by all beams of
// one user. Values match what the uncached path recomputes every step.
struct CrossCache {
  Tensor encOut;
  std::vector<Tensor> k, v;  // per layer, [S, d]
};

CrossCache buildCrossCache(GenModel& m, std::span<const SemanticId> history) {
  CrossCache cache;
  Tape t(false);
  VarId enc = m.encode(t, m.historyTokens(history));
  cache.encOut = t.value(enc);
  for (auto& layer : m.decoder) {
    VarId k = t.addBias(t.matmul(enc, t.param(layer.cross.wk)), t.param(layer.cross.bk));
    VarId v = t.addBias(t.matmul(enc, t.param(layer.cross.wv)), t.param(layer.cross.bv));
    cache.k.push_back(t.value(k));
    cache.v.push_back(t.value(v));
  }
  return cache;
}

// Per-beam self-attention key/value rows, one pair of matrices per layer.
struct DecodeState {
  std::vector<std::vector<Real>> k, v;  // [layer][len * d]
  int len = 0;
};

DecodeState makeState(int numLayers) {
  DecodeState s;
  s.k.resize(static_cast<size_t>(numLayers));
  s.v.resize(static_cast<size_t>(numLayers));
  return s;
}

// Feeds tokens[state.len .. ] through the decoder with cached keys/values
// and returns the logits row of the last position. Operation order matches
// decodeLogits row-for-row, so results are bit-identical at 64-bit.
Tensor decodeStepCached(GenModel& m, const CrossCache& cross, DecodeState& state,
                        std::span<const int> tokens, MoeStats* stats) {
  const ModelConfig& cfg = m.config();
  const int d = cfg.dModel;
  const int headDim = d / cfg.numHeads;
  const Real scaleFactor = Real(1) / std::sqrt(static_cast<Real>(headDim));
  Tensor logits;
  for (int pos = state.len; pos < static_cast<int>(tokens.size()); ++pos) {
    Tape t(false);
    VarId x = t.add(t.gatherRows(t.param(m.tokenEmbed), {tokens[static_cast<size_t>(pos)]}),
                    t.gatherRows(t.param(m.decPos), {pos}));
    const int len = pos + 1;
    const Tensor zeroMask({1, len});  // the causal-mask row is all zeros here
    for (size_t l = 0; l < m.decoder.size(); ++l) {
      auto& layer = m.decoder[l];
      // self-attention against the cache
      VarId h = t.layerNorm(x, t.param(layer.ln1.gain), t.param(layer.ln1.bias));
      VarId q = t.addBias(t.matmul(h, t.param(layer.self.wq)), t.param(layer.self.bq));
      VarId k = t.addBias(t.matmul(h, t.param(layer.self.wk)), t.param(layer.self.bk));
      VarId v = t.addBias(t.matmul(h, t.param(layer.self.wv)), t.param(layer.self.bv));
      const Real* kRow = t.value(k).data();
      const Real* vRow = t.value(v).data();
      state.k[l].insert(state.k[l].end(), kRow, kRow + d);
      state.v[l].insert(state.v[l].end(), vRow, vRow + d);
      VarId kAll = t.input(Tensor({len, d}, state.k[l]));
      VarId vAll = t.input(Tensor({len, d}, state.v[l]));
      VarId maskVar = t.input(zeroMask);
      std::vector<VarId> heads;
      for (int hIdx = 0; hIdx < cfg.numHeads; ++hIdx) {
        VarId qh = t.sliceCols(q, hIdx * headDim, headDim);
        VarId kh = t.sliceCols(kAll, hIdx * headDim, headDim);
        VarId vh = t.sliceCols(vAll, hIdx * headDim, headDim);
        VarId scores = t.add(t.scale(t.matmul(qh, t.transpose(kh)), scaleFactor), maskVar);
        heads.push_back(t.matmul(t.softmax(scores, 1), vh));
      }
      VarId merged = t.concatCols(heads);
      x = t.add(x, t.addBias(t.matmul(merged, t.param(layer.self.wo)), t.param(layer.self.bo)));

      // cross-attention against the precomputed encoder projections
      h = t.layerNorm(x, t.param(layer.ln2.gain), t.param(layer.ln2.bias));
      VarId cq = t.addBias(t.matmul(h, t.param(layer.cross.wq)), t.param(layer.cross.bq));
      VarId ck = t.input(cross.k[l]);
      VarId cv = t.input(cross.v[l]);
      std::vector<VarId> crossHeads;
      for (int hIdx = 0; hIdx < cfg.numHeads; ++hIdx) {
        VarId qh = t.sliceCols(cq, hIdx * headDim, headDim);
        VarId kh = t.sliceCols(ck, hIdx * headDim, headDim);
        VarId vh = t.sliceCols(cv, hIdx * headDim, headDim);
        VarId scores = t.scale(t.matmul(qh, t.transpose(kh)), scaleFactor);
        crossHeads.push_back(t.matmul(t.softmax(scores, 1), vh));
      }
      VarId mergedCross = t.concatCols(crossHeads);
      x = t.add(x, t.addBias(t.matmul(mergedCross, t.param(layer.cross.wo)), t.param(layer.cross.bo)));

      h = t.layerNorm(x, t.param(layer.ln3.gain), t.param(layer.ln3.bias));
      x = t.add(x, m.moeFFN(t, h, layer, stats));
    }
    x = t.layerNorm(x, t.param(m.decFinalLn.gain), t.param(m.decFinalLn.bias));
    logits = t.value(t.addBias(t.matmul(x, t.param(m.headW)), t.param(m.headB)));
    state.len = len;
  }
  return logits;
}

struct Hypothesis {
  std::vector<int> input;          // decoder tokens so far (starts with BOS)
  std::vector<int> itemPrefix;     // codes of the item being generated
  std::vector<SemanticId> items;
  Real logProb = 0;
  std::vector<Real> stepLogProbs;
  DecodeState cache;
};

Real logSumExpSlice(const Real* logits, int begin, int len) {
  Real mx = logits[begin];
  for (int j = 1; j < len; ++j) mx = std::max(mx, logits[begin + j]);
  Real sum = 0;
  for (int j = 0; j < len; ++j) sum += std::exp(logits[begin + j] - mx);
  return mx + std::log(sum);
}

}  // namespace

BeamResult beamSearchSession(GenModel& model, std::span<const SemanticId> history,
                             const tokenizer::ItemIndex& index, const BeamConfig& cfg) {
  const ModelConfig& mc = model.config();
  if (cfg.beamSize < 1) throw ArgumentError("beamSize must be positive");
  const int numItems = cfg.numItems > 0 ? cfg.numItems : mc.sessionSize;
  if (numItems * (mc.codebookLevels + 1) > mc.decoderLen()) {
    throw ArgumentError("requested session length exceeds the decoder's positional table");
  }
  if (index.levels() != mc.codebookLevels) {
    throw ArgumentError("item index level count does not match the model");
  }

  CrossCache cross;
  Tensor encOut;
  if (cfg.useKvCache) {
    cross = buildCrossCache(model, history);
  } else {
    Tape t(false);
    encOut = t.value(model.encode(t, model.historyTokens(history)));
  }

  std::vector<Hypothesis> beams(1);
  beams[0].input.push_back(mc.bosToken());
  beams[0].cache = makeState(mc.numDecoderLayers);

  BeamResult result;
  for (int item = 0; item < numItems; ++item) {
    for (int level = 0; level < mc.codebookLevels; ++level) {
      struct Candidate {
        int parent;
        int code;
        Real logProb;
        Real stepLogProb;
      };
      std::vector<Candidate> candidates;
      for (size_t b = 0; b < beams.size(); ++b) {
        Hypothesis& hyp = beams[b];
        Tensor logitsRow;
        if (cfg.useKvCache) {
          logitsRow = decodeStepCached(model, cross, hyp.cache, hyp.input, nullptr);
        } else {
          Tape t(false);
          VarId logits = model.decodeLogits(t, t.input(encOut), hyp.input);
          const Tensor& all = t.value(logits);
          logitsRow = Tensor({1, all.cols()});
          const Real* last = all.data() + static_cast<size_t>(all.rows() - 1) * all.cols();
          std::copy(last, last + all.cols(), logitsRow.data());
        }
        const int begin = level * mc.codebookSize;
        const Real lse = logSumExpSlice(logitsRow.data(), begin, mc.codebookSize);
        for (int code : index.validNextCodes(hyp.itemPrefix)) {
          const Real step = logitsRow[begin + code] - lse;
          candidates.push_back({static_cast<int>(b), code, hyp.logProb + step, step});
        }
      }
      if (candidates.empty()) {
        result.truncated = true;
        result.sessions.clear();
        return result;
      }
      std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
        if (a.logProb != b.logProb) return a.logProb > b.logProb;
        // ties: lexicographically smaller token sequence wins
        const auto& sa = beams[static_cast<size_t>(a.parent)].input;
        const auto& sb = beams[static_cast<size_t>(b.parent)].input;
        if (sa != sb) return sa < sb;
        return a.code < b.code;
      });
      const size_t keep = std::min<size_t>(static_cast<size_t>(cfg.beamSize), candidates.size());
      std::vector<Hypothesis> next;
      next.reserve(keep);
      for (size_t c = 0; c < keep; ++c) {
        const Candidate& cand = candidates[c];
        Hypothesis hyp = beams[static_cast<size_t>(cand.parent)];
        hyp.input.push_back(level * mc.codebookSize + cand.code);
        hyp.itemPrefix.push_back(cand.code);
        hyp.logProb = cand.logProb;
        hyp.stepLogProbs.push_back(cand.stepLogProb);
        next.push_back(std::move(hyp));
      }
      beams = std::move(next);
    }
    for (Hypothesis& hyp : beams) {
      SemanticId id;
      id.codes = hyp.itemPrefix;
      hyp.items.push_back(std::move(id));
      hyp.itemPrefix.clear();
      if (item + 1 < numItems) hyp.input.push_back(mc.bosToken());
    }
  }

  result.truncated = static_cast<int>(beams.size()) < cfg.beamSize;
  for (Hypothesis& hyp : beams) {
    ScoredSession s;
    s.items = std::move(hyp.items);
    s.logProb = hyp.logProb;
    s.stepLogProbs = std::move(hyp.stepLogProbs);
    result.sessions.push_back(std::move(s));
  }
  return result;
}

std::vector<ScoredSession> sampleSessionsTemperature(GenModel& model,
                                                     std::span<const SemanticId> history,
                                                     const tokenizer::ItemIndex& index, int n,
                                                     Real temperature, Rng& rng) {
  const ModelConfig& mc = model.config();
  if (temperature <= Real(0)) throw ArgumentError("temperature must be positive");
  Tensor encOut;
  {
    Tape t(false);
    encOut = t.value(model.encode(t, model.historyTokens(history)));
  }
  std::set<std::vector<int>> seen;
  std::vector<ScoredSession> out;
  for (int draw = 0; draw < n; ++draw) {
    std::vector<int> input{mc.bosToken()};
    std::vector<int> itemPrefix;
    ScoredSession s;
    for (int item = 0; item < mc.sessionSize; ++item) {
      itemPrefix.clear();
      for (int level = 0; level < mc.codebookLevels; ++level) {
        Tape t(false);
        const Tensor& all = t.value(model.decodeLogits(t, t.input(encOut), input));
        const Real* row = all.data() + static_cast<size_t>(all.rows() - 1) * all.cols();
        const int begin = level * mc.codebookSize;
        const Real lse = logSumExpSlice(row, begin, mc.codebookSize);
        const auto valid = index.validNextCodes(itemPrefix);
        std::vector<Real> weights;
        weights.reserve(valid.size());
        Real mx = -1e300;
        for (int code : valid) mx = std::max(mx, row[begin + code] / temperature);
        for (int code : valid) weights.push_back(std::exp(row[begin + code] / temperature - mx));
        Real total = 0;
        for (Real w : weights) total += w;
        Real u = static_cast<Real>(rng.uniform()) * total;
        int pick = valid.back();
        for (size_t i = 0; i < valid.size(); ++i) {
          u -= weights[i];
          if (u < 0) {
            pick = valid[i];
            break;
          }
        }
        s.stepLogProbs.push_back(row[begin + pick] - lse);
        s.logProb += s.stepLogProbs.back();
        input.push_back(begin + pick);
        itemPrefix.push_back(pick);
      }
      SemanticId id;
      id.codes = itemPrefix;
      s.items.push_back(id);
      if (item + 1 < mc.sessionSize) input.push_back(mc.bosToken());
    }
    if (seen.insert(input).second) out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(),
            [](const ScoredSession& a, const ScoredSession& b) { return a.logProb > b.logProb; });
  return out;
}

EntropyReport predictionEntropy(GenModel& model,
                                std::span<const std::vector<SemanticId>> histories,
                                const tokenizer::ItemIndex& index) {
  const ModelConfig& mc = model.config();
  EntropyReport report;
  report.perLevel.assign(static_cast<size_t>(mc.codebookLevels), Real(0));
  for (const auto& history : histories) {
    Tensor encOut;
    {
      Tape t(false);
      encOut = t.value(model.encode(t, model.historyTokens(history)));
    }
    std::vector<int> input{mc.bosToken()};
    std::vector<int> itemPrefix;
    for (int level = 0; level < mc.codebookLevels; ++level) {
      Tape t(false);
      const Tensor& all = t.value(model.decodeLogits(t, t.input(encOut), input));
      const Real* row = all.data() + static_cast<size_t>(all.rows() - 1) * all.cols();
      const int begin = level * mc.codebookSize;
      const Real lse = logSumExpSlice(row, begin, mc.codebookSize);
      Real entropy = 0;
      for (int j = 0; j < mc.codebookSize; ++j) {
        const Real logp = row[begin + j] - lse;
        entropy -= std::exp(logp) * logp;
      }
      report.perLevel[static_cast<size_t>(level)] += entropy;
      // advance greedily along trie-valid codes
      const auto valid = index.validNextCodes(itemPrefix);
      int best = valid.front();
      for (int code : valid) {
        if (row[begin + code] > row[begin + best]) best = code;
      }
      input.push_back(begin + best);
      itemPrefix.push_back(best);
    }
    ++report.numUsers;
  }
  if (report.numUsers > 0) {
    for (Real& e : report.perLevel) e /= static_cast<Real>(report.numUsers);
  }
  return report;
}

}  // namespace onerec::gen
