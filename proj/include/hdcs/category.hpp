#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hdcs/errors.hpp"

namespace hdcs {

// A primitive symbol: zeroary (atoms, [MWU], artificial terminals) or binary
// (category-forming operators). Unary operators never survive adapter
// preprocessing.
struct Primitive {
  int id = -1;
  std::string name;
  int arity = 0;
};

// Ordered primitive inventory. Index order is persisted with checkpoints, so
// prediction weights remain row-aligned. [MWU] is reserved at index 0.
class SymbolTable {
 public:
  static constexpr const char* kMwu = "[MWU]";

  SymbolTable() { add(kMwu, 0); }

  int add(const std::string& name, int arity) {
    if (arity != 0 && arity != 2)
      throw ConfigError("symbol arity must be 0 or 2: " + name);
    auto it = index_.find(name);
    if (it != index_.end()) {
      if (primitives_[it->second].arity != arity)
        throw ConfigError("symbol " + name + " reused with different arity");
      return it->second;
    }
    int id = int(primitives_.size());
    primitives_.push_back(Primitive{id, name, arity});
    index_.emplace(name, id);
    return id;
  }

  int lookup(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  // Strict lookup for closed tables.
  int require(const std::string& name) const {
    int id = lookup(name);
    if (id < 0) throw UnknownSymbol(name);
    return id;
  }

  const Primitive& at(int id) const { return primitives_.at(std::size_t(id)); }
  std::size_t size() const { return primitives_.size(); }
  int mwu_id() const { return 0; }

  std::size_t zeroary_count() const {
    return std::size_t(std::count_if(primitives_.begin(), primitives_.end(),
                                     [](const Primitive& p) { return p.arity == 0; }));
  }

  bool operator==(const SymbolTable& o) const {
    if (primitives_.size() != o.primitives_.size()) return false;
    for (std::size_t i = 0; i < primitives_.size(); ++i)
      if (primitives_[i].name != o.primitives_[i].name ||
          primitives_[i].arity != o.primitives_[i].arity)
        return false;
    return true;
  }

 private:
  std::vector<Primitive> primitives_;
  std::map<std::string, int> index_;
};

// Heap-style tree address: root is 1, children of k are 2k and 2k+1.
struct Position {
  std::uint64_t k = 1;

  Position left() const { return Position{2 * k}; }
  Position right() const { return Position{2 * k + 1}; }
  Position parent() const { return Position{k / 2}; }
  int depth() const { return std::bit_width(k) - 1; }

  // Path-map factor indices in multiplication order: all bits of k including
  // the leading 1, least significant first. 12 = 1100b yields {0, 0, 1, 1}.
  std::vector<int> path_bits() const {
    std::vector<int> bits;
    for (std::uint64_t v = k; v != 0; v >>= 1) bits.push_back(int(v & 1));
    return bits;
  }

  bool operator==(const Position& o) const { return k == o.k; }
  bool operator<(const Position& o) const { return k < o.k; }
};

// Immutable binary tree of primitives; shared substructure makes copies cheap.
class CategoryTree {
 public:
  CategoryTree() = default;

  static CategoryTree leaf(int symbol) {
    CategoryTree t;
    t.impl_ = std::make_shared<const Impl>(Impl{symbol, nullptr, nullptr, 0, 1});
    return t;
  }

  static CategoryTree node(int symbol, CategoryTree left, CategoryTree right) {
    CategoryTree t;
    int d = 1 + std::max(left.depth(), right.depth());
    std::size_t c = 1 + left.node_count() + right.node_count();
    t.impl_ = std::make_shared<const Impl>(Impl{symbol, left.impl_, right.impl_, d, c});
    return t;
  }

  bool empty() const { return impl_ == nullptr; }
  int symbol() const { return impl_->symbol; }
  int arity() const { return impl_->left ? 2 : 0; }
  CategoryTree left() const { return CategoryTree(impl_->left); }
  CategoryTree right() const { return CategoryTree(impl_->right); }
  int depth() const { return impl_->depth; }
  std::size_t node_count() const { return impl_->count; }

  bool operator==(const CategoryTree& o) const {
    if (impl_ == o.impl_) return true;
    if (!impl_ || !o.impl_) return false;
    if (impl_->symbol != o.impl_->symbol || arity() != o.arity()) return false;
    if (arity() == 0) return true;
    return left() == o.left() && right() == o.right();
  }
  bool operator!=(const CategoryTree& o) const { return !(*this == o); }

 private:
  struct Impl {
    int symbol;
    std::shared_ptr<const Impl> left, right;
    int depth;
    std::size_t count;
  };
  explicit CategoryTree(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<const Impl> impl_;
};

// Level-order listing with heap positions; length equals node count and
// positions are strictly increasing.
inline std::vector<std::pair<Position, int>> bfs_enumerate(const CategoryTree& tree) {
  std::vector<std::pair<Position, int>> out;
  std::deque<std::pair<Position, CategoryTree>> queue{{Position{1}, tree}};
  while (!queue.empty()) {
    auto [pos, node] = queue.front();
    queue.pop_front();
    out.emplace_back(pos, node.symbol());
    if (node.arity() == 2) {
      queue.emplace_back(pos.left(), node.left());
      queue.emplace_back(pos.right(), node.right());
    }
  }
  return out;
}

// Symbol at a heap position, or -1 when the position is not in the tree.
inline int symbol_at(const CategoryTree& tree, Position pos) {
  std::vector<int> dirs;  // 0 = left, 1 = right, from the root down
  for (std::uint64_t v = pos.k; v > 1; v >>= 1) dirs.push_back(int(v & 1));
  CategoryTree cur = tree;
  for (auto it = dirs.rbegin(); it != dirs.rend(); ++it) {
    if (cur.arity() == 0) return -1;
    cur = *it ? cur.right() : cur.left();
  }
  return cur.symbol();
}

// One blank node awaiting prediction: tree index within the sentence plus its
// position. A fringe holds entries of a single depth.
struct FringeEntry {
  std::size_t tree = 0;
  Position pos;
  bool operator==(const FringeEntry& o) const { return tree == o.tree && pos == o.pos; }
};

using Fringe = std::vector<FringeEntry>;

inline Fringe initial_fringe(std::size_t n_trees) {
  Fringe f;
  f.reserve(n_trees);
  for (std::size_t i = 0; i < n_trees; ++i) f.push_back(FringeEntry{i, Position{1}});
  return f;
}

// Next fringe from the decoded arities: binary entries contribute their two
// children, zeroary entries nothing. Empty result signals the fix-point.
inline Fringe fringe_successors(const Fringe& fringe, const std::vector<int>& arities) {
  if (arities.size() != fringe.size())
    throw ConfigError("fringe_successors: one decoded arity per entry required");
  Fringe next;
  for (std::size_t i = 0; i < fringe.size(); ++i) {
    if (arities[i] == 2) {
      next.push_back(FringeEntry{fringe[i].tree, fringe[i].pos.left()});
      next.push_back(FringeEntry{fringe[i].tree, fringe[i].pos.right()});
    }
  }
  return next;
}

// Pre-adapter tree: parsers produce these, adapters rewrite them, and only
// then are symbols interned. Unary nodes are legal here.
struct RawNode {
  std::string label;
  std::vector<RawNode> kids;

  bool operator==(const RawNode& o) const { return label == o.label && kids == o.kids; }
};

inline CategoryTree intern_raw(const RawNode& raw, SymbolTable& table, bool strict) {
  int arity = int(raw.kids.size());
  if (arity == 1)
    throw MarkerPlacement("unary node \"" + raw.label + "\" survived adapter preprocessing");
  int id = strict ? table.require(raw.label) : table.add(raw.label, arity);
  if (table.at(id).arity != arity)
    throw ConfigError("symbol " + raw.label + " reused with different arity");
  if (arity == 0) return CategoryTree::leaf(id);
  return CategoryTree::node(id, intern_raw(raw.kids[0], table, strict),
                            intern_raw(raw.kids[1], table, strict));
}

inline RawNode extern_tree(const CategoryTree& tree, const SymbolTable& table) {
  RawNode n;
  n.label = table.at(tree.symbol()).name;
  if (tree.arity() == 2) {
    n.kids.push_back(extern_tree(tree.left(), table));
    n.kids.push_back(extern_tree(tree.right(), table));
  }
  return n;
}

}  // namespace hdcs
