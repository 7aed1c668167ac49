#pragma once

#include <span>
#include <vector>

#include "onerec/genmodel/model.hpp"
#include "onerec/numerics/rng.hpp"
#include "onerec/tokenizer/item_index.hpp"

namespace onerec::gen {

struct ScoredSession {
  std::vector<SemanticId> items;
  Real logProb = 0;                  // sum of level-constrained log-softmax values
  std::vector<Real> stepLogProbs;    // one entry per semantic token
};

struct BeamResult {
  std::vector<ScoredSession> sessions;  // descending logProb, ties lexicographic
  bool truncated = false;               // trie pruning left fewer than beamSize
};

struct BeamConfig {
  int beamSize = 16;
  int numItems = -1;      // session length; -1 uses the model's sessionSize
  bool useKvCache = false;
};

// Constrained beam search over m items of L codes each. BOS separators are
// forced and contribute no probability. At every level only codes that the
// catalog trie can extend are expanded; scores stay normalized over the full
// level slice so they are recomputable from sessionLogProb.
BeamResult beamSearchSession(GenModel& model, std::span<const SemanticId> history,
                             const tokenizer::ItemIndex& index, const BeamConfig& cfg);

// Ablation path: n independent autoregressive samples at the given
// temperature (over trie-valid codes), deduplicated.
std::vector<ScoredSession> sampleSessionsTemperature(GenModel& model,
                                                     std::span<const SemanticId> history,
                                                     const tokenizer::ItemIndex& index, int n,
                                                     Real temperature, Rng& rng);

// Mean Shannon entropy (nats) of the level-constrained softmax at each level
// of the first generated item, across users; decoding advances greedily.
struct EntropyReport {
  std::vector<Real> perLevel;
  int numUsers = 0;
};
EntropyReport predictionEntropy(GenModel& model,
                                std::span<const std::vector<SemanticId>> histories,
                                const tokenizer::ItemIndex& index);

}  // namespace onerec::gen
