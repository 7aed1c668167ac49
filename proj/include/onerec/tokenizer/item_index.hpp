#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "onerec/tokenizer/codebooks.hpp"

namespace onerec::tokenizer {

// Prefix trie over catalog semantic IDs; drives constrained decoding and
// maps generated codes back to items. Multiple items may share a full code
// (collisions are kept, sorted by item id).
class ItemIndex {
 public:
  static ItemIndex build(std::span<const SemanticId> codes, std::span<const int64_t> itemIds, int levels);
  static ItemIndex build(const CodebookStack& stack, const Tensor& embeddings,
                         std::span<const int64_t> itemIds);

  int levels() const { return levels_; }
  size_t numItems() const { return numItems_; }

  bool prefixValid(std::span<const int> prefix) const;
  // Codes that extend the prefix to some catalog item, ascending.
  std::vector<int> validNextCodes(std::span<const int> prefix) const;
  // Items under a full code; nullptr if the code is absent.
  const std::vector<int64_t>* itemsForCode(const SemanticId& id) const;
  // Lowest item id under the code, or -1.
  int64_t resolveItem(const SemanticId& id) const;
  // All item ids reachable from a prefix (ascending, deduplicated).
  std::vector<int64_t> itemsForPrefix(std::span<const int> prefix) const;

  // Sum of collision-list sizes over all full codes.
  size_t totalLeafEntries() const;

 private:
  struct Node {
    std::map<int, int> children;   // code -> node index
    std::vector<int64_t> items;    // populated at depth == levels_
  };

  int findNode(std::span<const int> prefix) const;  // -1 if absent
  void collectItems(int nodeIdx, std::vector<int64_t>& out) const;

  std::vector<Node> nodes_;
  int levels_ = 0;
  size_t numItems_ = 0;
};

}  // namespace onerec::tokenizer
