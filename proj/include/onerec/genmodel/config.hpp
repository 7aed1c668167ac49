#pragma once

#include <algorithm>

#include "onerec/error.hpp"

namespace onerec::gen {

// Encoder-decoder dimensions. The shared vocabulary packs the L codebook
// levels back to back (token of level l, code c = l*K + c) and appends one
// BOS separator, so structural validity is enforceable by masking a level's
// K-token slice.
struct ModelConfig {
  int dModel = 64;
  int numEncoderLayers = 2;
  int numDecoderLayers = 2;
  int numHeads = 4;
  int ffnHidden = 256;
  int numExperts = 4;       // decoder MoE width
  int activeExperts = 2;    // experts kept per token
  int maxHistoryItems = 32; // n: history truncates to the most recent n items
  int sessionSize = 5;      // m
  int codebookLevels = 3;   // L
  int codebookSize = 64;    // K

  int vocabSize() const { return codebookLevels * codebookSize + 1; }
  int bosToken() const { return codebookLevels * codebookSize; }
  int maxEncoderLen() const { return std::max(1, maxHistoryItems * codebookLevels); }
  int decoderLen() const { return sessionSize * (codebookLevels + 1); }

  void validate() const {
    if (dModel <= 0 || numHeads <= 0 || dModel % numHeads != 0) {
      throw ConfigError("dModel must be a positive multiple of numHeads");
    }
    if (numEncoderLayers < 1 || numDecoderLayers < 1) {
      throw ConfigError("need at least one encoder and one decoder layer");
    }
    if (ffnHidden <= 0) throw ConfigError("ffnHidden must be positive");
    if (numExperts < 1 || activeExperts < 1 || activeExperts > numExperts) {
      throw ConfigError("expert config requires 1 <= activeExperts <= numExperts");
    }
    if (maxHistoryItems < 0) throw ConfigError("maxHistoryItems must be non-negative");
    if (sessionSize < 1) throw ConfigError("sessionSize must be positive");
    if (codebookLevels < 1 || codebookSize < 2) {
      throw ConfigError("codebook must have at least one level and two codes");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace onerec::gen
