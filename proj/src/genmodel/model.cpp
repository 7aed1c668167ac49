#include "onerec/genmodel/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "onerec/numerics/rng.hpp"

namespace onerec::gen {

namespace {

constexpr Real kMaskValue = Real(-1e30);

Tensor randn(Rng& rng, std::vector<int> shape, Real std) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = std * static_cast<Real>(rng.normal());
  return t;
}

}  // namespace

Tensor causalMask(int len) {
  Tensor mask({len, len});
  for (int i = 0; i < len; ++i) {
    for (int j = i + 1; j < len; ++j) mask.at(i, j) = kMaskValue;
  }
  return mask;
}

Tensor keyPaddingMask(int queryLen, int keyLen, int validKeys) {
  Tensor mask({queryLen, keyLen});
  for (int i = 0; i < queryLen; ++i) {
    for (int j = validKeys; j < keyLen; ++j) mask.at(i, j) = kMaskValue;
  }
  return mask;
}

GenModel::GenModel(ModelConfig cfg, uint64_t initSeed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng(initSeed).substream("model-init");
  const int d = cfg_.dModel;
  const int v = cfg_.vocabSize();
  const Real embedStd = Real(0.1);
  const Real projStd = Real(1) / std::sqrt(static_cast<Real>(d));
  const Real ffnOutStd = Real(1) / std::sqrt(static_cast<Real>(cfg_.ffnHidden));
  const Real headStd = Real(0.02);

  tokenEmbed = Parameter("embed.token", randn(rng, {v, d}, embedStd));
  encPos = Parameter("embed.enc_pos", randn(rng, {cfg_.maxEncoderLen(), d}, embedStd));
  decPos = Parameter("embed.dec_pos", randn(rng, {cfg_.decoderLen(), d}, embedStd));
  encPlaceholder = Parameter("embed.enc_placeholder", randn(rng, {1, d}, embedStd));

  auto makeLn = [&](const std::string& name) {
    LayerNormParams ln;
    ln.gain = Parameter(name + ".gain", Tensor::full({d}, Real(1)));
    ln.bias = Parameter(name + ".bias", Tensor({d}));
    return ln;
  };
  auto makeAttn = [&](const std::string& name) {
    AttentionParams a;
    a.wq = Parameter(name + ".wq", randn(rng, {d, d}, projStd));
    a.bq = Parameter(name + ".bq", Tensor({d}));
    a.wk = Parameter(name + ".wk", randn(rng, {d, d}, projStd));
    a.bk = Parameter(name + ".bk", Tensor({d}));
    a.wv = Parameter(name + ".wv", randn(rng, {d, d}, projStd));
    a.bv = Parameter(name + ".bv", Tensor({d}));
    a.wo = Parameter(name + ".wo", randn(rng, {d, d}, projStd));
    a.bo = Parameter(name + ".bo", Tensor({d}));
    return a;
  };
  auto makeFfn = [&](const std::string& name) {
    FfnParams f;
    f.w1 = Parameter(name + ".w1", randn(rng, {d, cfg_.ffnHidden}, projStd));
    f.b1 = Parameter(name + ".b1", Tensor({cfg_.ffnHidden}));
    f.w2 = Parameter(name + ".w2", randn(rng, {cfg_.ffnHidden, d}, ffnOutStd));
    f.b2 = Parameter(name + ".b2", Tensor({d}));
    return f;
  };

  for (int l = 0; l < cfg_.numEncoderLayers; ++l) {
    const std::string base = "enc.l" + std::to_string(l);
    EncoderLayerParams layer;
    layer.ln1 = makeLn(base + ".ln1");
    layer.attn = makeAttn(base + ".attn");
    layer.ln2 = makeLn(base + ".ln2");
    layer.ffn = makeFfn(base + ".ffn");
    encoder.push_back(std::move(layer));
  }
  for (int l = 0; l < cfg_.numDecoderLayers; ++l) {
    const std::string base = "dec.l" + std::to_string(l);
    DecoderLayerParams layer;
    layer.ln1 = makeLn(base + ".ln1");
    layer.self = makeAttn(base + ".self");
    layer.ln2 = makeLn(base + ".ln2");
    layer.cross = makeAttn(base + ".cross");
    layer.ln3 = makeLn(base + ".ln3");
    layer.gate = Parameter(base + ".gate", randn(rng, {d, cfg_.numExperts}, projStd));
    for (int e = 0; e < cfg_.numExperts; ++e) {
      layer.experts.push_back(makeFfn(base + ".expert" + std::to_string(e)));
    }
    decoder.push_back(std::move(layer));
  }
  encFinalLn = makeLn("enc.final_ln");
  decFinalLn = makeLn("dec.final_ln");
  headW = Parameter("head.w", randn(rng, {d, v}, headStd));
  headB = Parameter("head.b", Tensor({v}));
}

std::vector<Parameter*> GenModel::parameters() {
  std::vector<Parameter*> out;
  auto addLn = [&](LayerNormParams& ln) {
    out.push_back(&ln.gain);
    out.push_back(&ln.bias);
  };
  auto addAttn = [&](AttentionParams& a) {
    for (Parameter* p : {&a.wq, &a.bq, &a.wk, &a.bk, &a.wv, &a.bv, &a.wo, &a.bo}) out.push_back(p);
  };
  auto addFfn = [&](FfnParams& f) {
    for (Parameter* p : {&f.w1, &f.b1, &f.w2, &f.b2}) out.push_back(p);
  };
  out.push_back(&tokenEmbed);
  out.push_back(&encPos);
  out.push_back(&decPos);
  out.push_back(&encPlaceholder);
  for (auto& layer : encoder) {
    addLn(layer.ln1);
    addAttn(layer.attn);
    addLn(layer.ln2);
    addFfn(layer.ffn);
  }
  for (auto& layer : decoder) {
    addLn(layer.ln1);
    addAttn(layer.self);
    addLn(layer.ln2);
    addAttn(layer.cross);
    addLn(layer.ln3);
    out.push_back(&layer.gate);
    for (auto& e : layer.experts) addFfn(e);
  }
  addLn(encFinalLn);
  addLn(decFinalLn);
  out.push_back(&headW);
  out.push_back(&headB);
  return out;
}

ParamRegistry GenModel::registry() {
  ParamRegistry reg;
  reg.add(parameters());
  return reg;
}

int64_t GenModel::parameterCount() {
  int64_t n = 0;
  for (Parameter* p : parameters()) n += p->value.size();
  return n;
}

std::vector<int> GenModel::historyTokens(std::span<const SemanticId> history) const {
  const size_t keep = static_cast<size_t>(cfg_.maxHistoryItems);
  const size_t start = history.size() > keep ? history.size() - keep : 0;
  std::vector<int> tokens;
  tokens.reserve((history.size() - start) * static_cast<size_t>(cfg_.codebookLevels));
  for (size_t i = start; i < history.size(); ++i) {
    const SemanticId& id = history[i];
    if (static_cast<int>(id.codes.size()) != cfg_.codebookLevels) {
      throw ContractError("history item has " + std::to_string(id.codes.size()) + " codes, expected " +
                          std::to_string(cfg_.codebookLevels));
    }
    for (int level = 0; level < cfg_.codebookLevels; ++level) {
      const int code = id.codes[static_cast<size_t>(level)];
      if (code < 0 || code >= cfg_.codebookSize) throw IndexError("history code out of range");
      tokens.push_back(level * cfg_.codebookSize + code);
    }
  }
  return tokens;
}

DecoderTokens GenModel::buildDecoderTokens(std::span<const SemanticId> session) const {
  if (session.empty()) throw ContractError("session must contain at least one item");
  const int levels = cfg_.codebookLevels;
  const int len = static_cast<int>(session.size()) * (levels + 1);
  if (len > cfg_.decoderLen()) {
    throw ContractError("session of " + std::to_string(session.size()) +
                        " items exceeds the configured decoder length");
  }
  DecoderTokens out;
  out.input.reserve(static_cast<size_t>(len));
  for (const SemanticId& id : session) {
    if (static_cast<int>(id.codes.size()) != levels) {
      throw ContractError("session item has " + std::to_string(id.codes.size()) + " codes, expected " +
                          std::to_string(levels));
    }
    out.input.push_back(cfg_.bosToken());
    for (int level = 0; level < levels; ++level) {
      const int code = id.codes[static_cast<size_t>(level)];
      if (code < 0 || code >= cfg_.codebookSize) throw IndexError("session code out of range");
      out.input.push_back(level * cfg_.codebookSize + code);
    }
  }
  out.target.assign(static_cast<size_t>(len), 0);
  out.targetLevel.assign(static_cast<size_t>(len), -1);
  out.lossMask.assign(static_cast<size_t>(len), 0);
  for (int i = 0; i + 1 < len; ++i) {
    const int next = out.input[static_cast<size_t>(i) + 1];
    out.target[static_cast<size_t>(i)] = next;
    if (next != cfg_.bosToken()) {
      out.lossMask[static_cast<size_t>(i)] = 1;
      out.targetLevel[static_cast<size_t>(i)] = next / cfg_.codebookSize;
      ++out.maskedCount;
    }
  }
  return out;
}

std::vector<SemanticId> GenModel::parseDecoderInput(std::span<const int> input, const ModelConfig& cfg) {
  std::vector<SemanticId> out;
  size_t i = 0;
  while (i < input.size()) {
    if (input[i] != cfg.bosToken()) throw ContractError("expected BOS separator in decoder input");
    ++i;
    SemanticId id;
    for (int level = 0; level < cfg.codebookLevels; ++level) {
      if (i >= input.size()) throw ContractError("truncated item in decoder input");
      const int token = input[i++];
      const int tokenLevel = token / cfg.codebookSize;
      if (token >= cfg.bosToken() || tokenLevel != level) {
        throw ContractError("token " + std::to_string(token) + " is not a level-" + std::to_string(level) +
                            " code");
      }
      id.codes.push_back(token - level * cfg.codebookSize);
    }
    out.push_back(std::move(id));
  }
  return out;
}

VarId GenModel::attention(Tape& t, VarId queriesSrc, VarId keysSrc, AttentionParams& p,
                          const Tensor* addMask) {
  VarId q = t.addBias(t.matmul(queriesSrc, t.param(p.wq)), t.param(p.bq));
  VarId k = t.addBias(t.matmul(keysSrc, t.param(p.wk)), t.param(p.bk));
  VarId v = t.addBias(t.matmul(keysSrc, t.param(p.wv)), t.param(p.bv));
  const int headDim = cfg_.dModel / cfg_.numHeads;
  const Real scaleFactor = Real(1) / std::sqrt(static_cast<Real>(headDim));
  VarId maskVar = -1;
  if (addMask != nullptr) maskVar = t.input(*addMask);
  std::vector<VarId> heads;
  heads.reserve(static_cast<size_t>(cfg_.numHeads));
  for (int h = 0; h < cfg_.numHeads; ++h) {
    VarId qh = t.sliceCols(q, h * headDim, headDim);
    VarId kh = t.sliceCols(k, h * headDim, headDim);
    VarId vh = t.sliceCols(v, h * headDim, headDim);
    VarId scores = t.scale(t.matmul(qh, t.transpose(kh)), scaleFactor);
    if (addMask != nullptr) scores = t.add(scores, maskVar);
    heads.push_back(t.matmul(t.softmax(scores, 1), vh));
  }
  VarId merged = t.concatCols(heads);
  return t.addBias(t.matmul(merged, t.param(p.wo)), t.param(p.bo));
}

VarId GenModel::ffnForward(Tape& t, VarId x, FfnParams& f) {
  VarId h = t.gelu(t.addBias(t.matmul(x, t.param(f.w1)), t.param(f.b1)));
  return t.addBias(t.matmul(h, t.param(f.w2)), t.param(f.b2));
}

uint64_t GenModel::perTokenExpertMacs() const {
  return 2ull * static_cast<uint64_t>(cfg_.dModel) * static_cast<uint64_t>(cfg_.ffnHidden);
}

std::vector<int> GenModel::topKExperts(const Real* scores, int numExperts, int k) {
  std::vector<int> idx(static_cast<size_t>(numExperts));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(static_cast<size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

VarId GenModel::moeFFN(Tape& t, VarId hidden, DecoderLayerParams& layer, MoeStats* stats) {
  VarId scores = t.matmul(hidden, t.param(layer.gate));
  VarId gates = t.softmax(scores, 1);
  const Tensor& gateValues = t.value(gates);
  const int tokens = gateValues.rows();
  const int n = cfg_.numExperts;

  std::vector<std::vector<int>> expertRows(static_cast<size_t>(n));
  for (int row = 0; row < tokens; ++row) {
    const Real* rowScores = gateValues.data() + static_cast<size_t>(row) * n;
    for (int e : topKExperts(rowScores, n, cfg_.activeExperts)) {
      expertRows[static_cast<size_t>(e)].push_back(row);
    }
  }
  if (stats != nullptr) {
    if (stats->gateUsage.size() < static_cast<size_t>(n)) stats->gateUsage.resize(static_cast<size_t>(n), 0);
    stats->tokensRouted += static_cast<uint64_t>(tokens);
  }

  VarId combined = -1;
  for (int e = 0; e < n; ++e) {
    const auto& rows = expertRows[static_cast<size_t>(e)];
    if (rows.empty()) continue;
    VarId routed = t.gatherRows(hidden, rows);
    VarId expertOut = ffnForward(t, routed, layer.experts[static_cast<size_t>(e)]);
    VarId gateCol = t.gatherRows(t.sliceCols(gates, e, 1), rows);
    VarId weighted = t.mulColumn(expertOut, gateCol);
    VarId scattered = t.scatterAddRows(weighted, rows, tokens);
    combined = combined < 0 ? scattered : t.add(combined, scattered);
    if (stats != nullptr) {
      stats->expertFfnMacs += static_cast<uint64_t>(rows.size()) * perTokenExpertMacs();
      stats->gateUsage[static_cast<size_t>(e)] += rows.size();
    }
  }
  return t.add(combined, hidden);
}

VarId GenModel::encode(Tape& t, std::span<const int> tokens, int validLen) {
  int seqLen = static_cast<int>(tokens.size());
  VarId x;
  if (seqLen == 0) {
    VarId placeholder = t.param(encPlaceholder);
    x = t.add(placeholder, t.gatherRows(t.param(encPos), {0}));
    seqLen = 1;
    validLen = -1;
  } else {
    if (seqLen > cfg_.maxEncoderLen()) {
      throw ContractError("encoder input longer than maxHistoryItems * L; truncate via historyTokens");
    }
    std::vector<int> rows(tokens.begin(), tokens.end());
    std::vector<int> positions(static_cast<size_t>(seqLen));
    std::iota(positions.begin(), positions.end(), 0);
    x = t.add(t.gatherRows(t.param(tokenEmbed), rows), t.gatherRows(t.param(encPos), positions));
  }

  const bool padded = validLen >= 0 && validLen < seqLen;
  if (padded && validLen == 0) throw ContractError("validLen must keep at least one position");
  Tensor mask;
  if (padded) mask = keyPaddingMask(seqLen, seqLen, validLen);

  for (auto& layer : encoder) {
    VarId h = t.layerNorm(x, t.param(layer.ln1.gain), t.param(layer.ln1.bias));
    x = t.add(x, attention(t, h, h, layer.attn, padded ? &mask : nullptr));
    h = t.layerNorm(x, t.param(layer.ln2.gain), t.param(layer.ln2.bias));
    x = t.add(x, ffnForward(t, h, layer.ffn));
  }
  x = t.layerNorm(x, t.param(encFinalLn.gain), t.param(encFinalLn.bias));
  if (padded) {
    std::vector<int> keep(static_cast<size_t>(validLen));
    std::iota(keep.begin(), keep.end(), 0);
    x = t.gatherRows(x, keep);
  }
  return x;
}

VarId GenModel::decodeLogits(Tape& t, VarId encOut, std::span<const int> decInput, MoeStats* stats) {
  const int seqLen = static_cast<int>(decInput.size());
  if (seqLen == 0) throw ContractError("decoder input must be nonempty");
  if (seqLen > cfg_.decoderLen()) throw ContractError("decoder input exceeds configured length");
  std::vector<int> rows(decInput.begin(), decInput.end());
  for (int tok : rows) {
    if (tok < 0 || tok >= cfg_.vocabSize()) throw IndexError("decoder token out of vocabulary");
  }
  std::vector<int> positions(static_cast<size_t>(seqLen));
  std::iota(positions.begin(), positions.end(), 0);
  VarId x = t.add(t.gatherRows(t.param(tokenEmbed), rows), t.gatherRows(t.param(decPos), positions));

  const Tensor mask = causalMask(seqLen);
  for (auto& layer : decoder) {
    VarId h = t.layerNorm(x, t.param(layer.ln1.gain), t.param(layer.ln1.bias));
    x = t.add(x, attention(t, h, h, layer.self, &mask));
    h = t.layerNorm(x, t.param(layer.ln2.gain), t.param(layer.ln2.bias));
    x = t.add(x, attention(t, h, encOut, layer.cross, nullptr));
    h = t.layerNorm(x, t.param(layer.ln3.gain), t.param(layer.ln3.bias));
    x = t.add(x, moeFFN(t, h, layer, stats));
  }
  x = t.layerNorm(x, t.param(decFinalLn.gain), t.param(decFinalLn.bias));
  return t.addBias(t.matmul(x, t.param(headW)), t.param(headB));
}

namespace {

std::vector<Tape::LogProbSpec> levelSpecs(const DecoderTokens& dec, const ModelConfig& cfg) {
  std::vector<Tape::LogProbSpec> specs;
  specs.reserve(static_cast<size_t>(dec.maskedCount));
  for (size_t i = 0; i < dec.input.size(); ++i) {
    if (!dec.lossMask[i]) continue;
    const int level = dec.targetLevel[i];
    Tape::LogProbSpec s;
    s.row = static_cast<int>(i);
    s.sliceBegin = level * cfg.codebookSize;
    s.sliceLen = cfg.codebookSize;
    s.targetInSlice = dec.target[i] - level * cfg.codebookSize;
    s.weight = Real(1);
    specs.push_back(s);
  }
  return specs;
}

}  // namespace

VarId GenModel::ntpLossVar(Tape& t, std::span<const SemanticId> history,
                           std::span<const SemanticId> session, MoeStats* stats) {
  const DecoderTokens dec = buildDecoderTokens(session);
  VarId enc = encode(t, historyTokens(history));
  VarId logits = decodeLogits(t, enc, dec.input, stats);
  auto specs = levelSpecs(dec, cfg_);
  return t.scale(t.sliceLogProbSum(logits, std::move(specs)), Real(-1) / static_cast<Real>(dec.maskedCount));
}

Real GenModel::ntpLoss(std::span<const SemanticId> history, std::span<const SemanticId> session) {
  Tape t(false);
  return t.value(ntpLossVar(t, history, session)).item();
}

VarId GenModel::sessionLogProbVar(Tape& t, std::span<const SemanticId> history,
                                  std::span<const SemanticId> session) {
  const DecoderTokens dec = buildDecoderTokens(session);
  VarId enc = encode(t, historyTokens(history));
  VarId logits = decodeLogits(t, enc, dec.input);
  return t.sliceLogProbSum(logits, levelSpecs(dec, cfg_));
}

Real GenModel::sessionLogProb(std::span<const SemanticId> history, std::span<const SemanticId> session) {
  Tape t(false);
  return t.value(sessionLogProbVar(t, history, session)).item();
}

}  // namespace onerec::gen
