#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "onerec/genmodel/config.hpp"
#include "onerec/numerics/checkpoint.hpp"
#include "onerec/numerics/tape.hpp"
#include "onerec/tokenizer/codebooks.hpp"

namespace onerec::gen {

using tokenizer::SemanticId;

struct AttentionParams {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerNormParams {
  Parameter gain, bias;
};

struct FfnParams {
  Parameter w1, b1, w2, b2;
};

struct EncoderLayerParams {
  LayerNormParams ln1, ln2;
  AttentionParams attn;
  FfnParams ffn;
};

struct DecoderLayerParams {
  LayerNormParams ln1, ln2, ln3;
  AttentionParams self, cross;
  Parameter gate;  // [d, numExperts] expert embeddings
  std::vector<FfnParams> experts;
};

// Expert-FFN cost meter and gate-usage histogram, passed explicitly by
// callers that want instrumentation (keeps shared inference thread-safe).
struct MoeStats {
  uint64_t expertFfnMacs = 0;
  uint64_t tokensRouted = 0;
  std::vector<uint64_t> gateUsage;  // indexed by expert, summed over layers

  void reset() {
    expertFfnMacs = 0;
    tokensRouted = 0;
    gateUsage.assign(gateUsage.size(), 0);
  }
};

// Tokenized decoder batch per the session layout
// [BOS s^1..s^L] * m; targets are the inputs shifted left, masked so that
// only semantic-ID targets (m*L positions) contribute to the loss.
struct DecoderTokens {
  std::vector<int> input;
  std::vector<int> target;        // dummy 0 at the final position
  std::vector<int> targetLevel;   // 0-based level of each target, -1 when masked
  std::vector<uint8_t> lossMask;
  int maskedCount = 0;
};

class GenModel {
 public:
  GenModel(ModelConfig cfg, uint64_t initSeed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();
  ParamRegistry registry();
  int64_t parameterCount();

  // --- tokenization helpers -------------------------------------------------
  // Flattens semantic IDs to vocabulary tokens, keeping the most recent
  // maxHistoryItems items.
  std::vector<int> historyTokens(std::span<const SemanticId> history) const;
  DecoderTokens buildDecoderTokens(std::span<const SemanticId> session) const;
  // Inverse of the input layout: splits on BOS separators.
  static std::vector<SemanticId> parseDecoderInput(std::span<const int> input, const ModelConfig& cfg);

  // --- forward --------------------------------------------------------------
  // Empty token spans encode to a single learned placeholder row. With
  // 0 <= validLen < tokens.size(), positions past validLen are treated as
  // padding: masked out of attention and dropped from the output.
  VarId encode(Tape& t, std::span<const int> tokens, int validLen = -1);
  VarId decodeLogits(Tape& t, VarId encOut, std::span<const int> decInput, MoeStats* stats = nullptr);
  VarId moeFFN(Tape& t, VarId hidden, DecoderLayerParams& layer, MoeStats* stats = nullptr);

  VarId ntpLossVar(Tape& t, std::span<const SemanticId> history, std::span<const SemanticId> session,
                   MoeStats* stats = nullptr);
  Real ntpLoss(std::span<const SemanticId> history, std::span<const SemanticId> session);

  // Sum of constrained log-softmax over the session's semantic tokens.
  VarId sessionLogProbVar(Tape& t, std::span<const SemanticId> history,
                          std::span<const SemanticId> session);
  Real sessionLogProb(std::span<const SemanticId> history, std::span<const SemanticId> session);

  // Multi-head attention block over pre-normalized inputs. addMask, when
  // present, is added to every head's score matrix.
  VarId attention(Tape& t, VarId queriesSrc, VarId keysSrc, AttentionParams& p, const Tensor* addMask);
  VarId ffnForward(Tape& t, VarId x, FfnParams& f);

  uint64_t perTokenExpertMacs() const;

  // Top-activeExperts selection by (score desc, index asc); exposed for the
  // routing tests.
  static std::vector<int> topKExperts(const Real* scores, int numExperts, int k);

  // --- members (checkpointed in declaration order) ---------------------------
  Parameter tokenEmbed;      // [V, d]
  Parameter encPos;          // [maxEncoderLen, d]
  Parameter decPos;          // [decoderLen, d]
  Parameter encPlaceholder;  // [1, d]
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
  LayerNormParams encFinalLn, decFinalLn;
  Parameter headW;  // [d, V]
  Parameter headB;  // [V]

 private:
  ModelConfig cfg_;
};

// Additive attention masks (0 = visible, large negative = hidden).
Tensor causalMask(int len);
Tensor keyPaddingMask(int queryLen, int keyLen, int validKeys);

}  // namespace onerec::gen
