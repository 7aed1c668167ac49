#include "onerec/tokenizer/item_index.hpp"

#include <algorithm>

#include "onerec/error.hpp"

namespace onerec::tokenizer {

ItemIndex ItemIndex::build(std::span<const SemanticId> codes, std::span<const int64_t> itemIds, int levels) {
  if (codes.size() != itemIds.size()) throw ArgumentError("ItemIndex: codes and itemIds must align");
  ItemIndex index;
  index.levels_ = levels;
  index.numItems_ = codes.size();
  index.nodes_.emplace_back();  // root
  for (size_t i = 0; i < codes.size(); ++i) {
    const SemanticId& id = codes[i];
    if (static_cast<int>(id.codes.size()) != levels) {
      throw ArgumentError("ItemIndex: semantic id has wrong level count");
    }
    int cur = 0;
    for (int code : id.codes) {
      auto [it, inserted] = index.nodes_[static_cast<size_t>(cur)].children.try_emplace(
          code, static_cast<int>(index.nodes_.size()));
      if (inserted) index.nodes_.emplace_back();
      cur = it->second;
    }
    index.nodes_[static_cast<size_t>(cur)].items.push_back(itemIds[i]);
  }
  for (Node& n : index.nodes_) std::sort(n.items.begin(), n.items.end());
  return index;
}

ItemIndex ItemIndex::build(const CodebookStack& stack, const Tensor& embeddings,
                           std::span<const int64_t> itemIds) {
  const std::vector<SemanticId> codes = quantizeCatalog(embeddings, stack);
  return build(codes, itemIds, stack.L);
}

int ItemIndex::findNode(std::span<const int> prefix) const {
  int cur = 0;
  for (int code : prefix) {
    const auto& children = nodes_[static_cast<size_t>(cur)].children;
    auto it = children.find(code);
    if (it == children.end()) return -1;
    cur = it->second;
  }
  return cur;
}

bool ItemIndex::prefixValid(std::span<const int> prefix) const { return findNode(prefix) >= 0; }

std::vector<int> ItemIndex::validNextCodes(std::span<const int> prefix) const {
  std::vector<int> out;
  const int node = findNode(prefix);
  if (node < 0) return out;
  for (const auto& [code, child] : nodes_[static_cast<size_t>(node)].children) out.push_back(code);
  return out;
}

const std::vector<int64_t>* ItemIndex::itemsForCode(const SemanticId& id) const {
  const int node = findNode(id.codes);
  if (node < 0 || nodes_[static_cast<size_t>(node)].items.empty()) return nullptr;
  return &nodes_[static_cast<size_t>(node)].items;
}

int64_t ItemIndex::resolveItem(const SemanticId& id) const {
  const std::vector<int64_t>* items = itemsForCode(id);
  return items ? items->front() : -1;
}

void ItemIndex::collectItems(int nodeIdx, std::vector<int64_t>& out) const {
  const Node& n = nodes_[static_cast<size_t>(nodeIdx)];
  out.insert(out.end(), n.items.begin(), n.items.end());
  for (const auto& [code, child] : n.children) collectItems(child, out);
}

std::vector<int64_t> ItemIndex::itemsForPrefix(std::span<const int> prefix) const {
  std::vector<int64_t> out;
  const int node = findNode(prefix);
  if (node < 0) return out;
  collectItems(node, out);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

size_t ItemIndex::totalLeafEntries() const {
  size_t total = 0;
  for (const Node& n : nodes_) total += n.items.size();
  return total;
}

}  // namespace onerec::tokenizer
