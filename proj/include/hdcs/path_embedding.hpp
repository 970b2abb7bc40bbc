#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hdcs/category.hpp"
#include "hdcs/params.hpp"
#include "hdcs/rng.hpp"
#include "hdcs/tape.hpp"

namespace hdcs {

// Parameter names for the path semigroup and the symbol embedding table.
namespace pnames {
inline constexpr const char* path_base0 = "path.base0";
inline constexpr const char* path_base1 = "path.base1";
inline constexpr const char* path_rho0 = "path.rho0";
inline constexpr const char* symbol_embed = "symbols.embed";
}  // namespace pnames

inline void add_path_params(ParameterStore& store, std::size_t d_n, std::size_t n_symbols,
                            Rng& rng) {
  store.add(pnames::path_base0, Tensor::randn({d_n, d_n}, rng, 0.1));
  store.add(pnames::path_base1, Tensor::randn({d_n, d_n}, rng, 0.1));
  // Fixed unit direction scaled to norm sqrt(d_n); trainable thereafter.
  Tensor rho = Tensor::zeros({d_n});
  rho.at(0) = std::sqrt(double(d_n));
  store.add(pnames::path_rho0, std::move(rho));
  store.add(pnames::symbol_embed, Tensor::randn({n_symbols, d_n}, rng, 0.5));
}

// Tree-path embedder: the two primitive maps are orthogonal (exponentials of
// skew bases), a position's map is their product along the position's bits
// least-significant first, and its vector is that map applied to the root
// seed. Vectors are cached per tape; an optional frozen cache carries plain
// values across tapes at inference.
class PathEmbedder {
 public:
  PathEmbedder(Tape& tape, ParameterStore& store, std::map<std::uint64_t, Tensor>* frozen = nullptr)
      : tape_(&tape), frozen_(frozen) {
    p_[0] = orthogonal_from_skew(tape.param(store.get(pnames::path_base0)));
    p_[1] = orthogonal_from_skew(tape.param(store.get(pnames::path_base1)));
    rho_ = tape.param(store.get(pnames::path_rho0));
    symbols_ = tape.param(store.get(pnames::symbol_embed));
  }

  Var primitive_map(int bit) const { return p_[bit]; }
  Var symbol_table_var() const { return symbols_; }

  // Full d_n x d_n map for a position; factor order per Position::path_bits.
  Var path_map(Position k) {
    auto bits = k.path_bits();
    Var m = p_[bits[0]];
    for (std::size_t i = 1; i < bits.size(); ++i) m = matmul(m, p_[bits[i]]);
    return m;
  }

  // p(k)(rho0), served from the cache when present.
  Var positional_vector(Position k) {
    auto it = cache_.find(k.k);
    if (it != cache_.end()) return it->second;
    if (frozen_ && !tape_->recording()) {
      auto fit = frozen_->find(k.k);
      if (fit != frozen_->end()) {
        Var v = tape_->leaf(fit->second);
        cache_.emplace(k.k, v);
        return v;
      }
    }
    Var v;
    if (k.k == 1) {
      v = matvec(p_[1], rho_);
    } else {
      Var parent = positional_vector(k.parent());
      v = matvec(p_[k.k & 1], parent);
    }
    cache_.emplace(k.k, v);
    if (frozen_ && !tape_->recording()) frozen_->emplace(k.k, tape_->val(v));
    return v;
  }

  // Rows of positional vectors for a batch of positions.
  Var positional_rows(const std::vector<Position>& ks) {
    std::vector<Var> rows;
    rows.reserve(ks.size());
    for (auto k : ks) rows.push_back(positional_vector(k));
    return concat_rows(rows);
  }

  // n_{i,k} = p(k)(rho0) (*) W_e(symbol), one row per decoded node.
  Var embed_nodes(const std::vector<int>& symbol_ids, const std::vector<Position>& ks) {
    std::vector<std::size_t> ids(symbol_ids.begin(), symbol_ids.end());
    return mul(positional_rows(ks), embedding_lookup(symbols_, ids));
  }

 private:
  Tape* tape_;
  std::map<std::uint64_t, Tensor>* frozen_;
  Var p_[2];
  Var rho_;
  Var symbols_;
  std::map<std::uint64_t, Var> cache_;
};

}  // namespace hdcs
