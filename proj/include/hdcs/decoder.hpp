#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hdcs/category.hpp"
#include "hdcs/errors.hpp"
#include "hdcs/params.hpp"
#include "hdcs/path_embedding.hpp"
#include "hdcs/rng.hpp"
#include "hdcs/tape.hpp"

namespace hdcs {

struct DecodeConfig {
  std::size_t d_n = 128;
  std::size_t h_het = 4;
  std::size_t d_w = 768;
  std::size_t h_seq = 8;
  std::size_t kappa = 16;   // attention window; out-of-window edges do not exist
  std::size_t d_ff = 0;     // 0 means 2 * d_w
  int max_depth = 64;
  double leaky_slope = 0.2;
  bool disable_state_feedback = false;  // -sf: drop the sequential attention mixing
  bool disable_node_feedback = false;   // -nf: drop the node feedback stage

  std::size_t ffn_dim() const { return d_ff ? d_ff : 2 * d_w; }
};

inline void validate(const DecodeConfig& c) {
  if (c.d_n == 0 || c.d_w == 0) throw ConfigError("d_n and d_w must be positive");
  if (c.h_het == 0 || c.d_w % c.h_het != 0)
    throw ConfigError("h_het must divide d_w for head-slice self-loops");
  if (c.h_seq == 0 || c.d_w % c.h_seq != 0) throw ConfigError("h_seq must divide d_w");
  if (c.kappa < 1) throw ConfigError("kappa must be >= 1");
  if (c.max_depth < 1) throw ConfigError("max_depth must be >= 1");
  if (c.max_depth > 62) throw ConfigError("max_depth above 62 exceeds 64-bit tree addresses");
}

enum class DecodeMode { teacher_forced, free_running };

// Train-time stochasticity; a null rng (or zero rates) means evaluation.
struct DropoutCtx {
  double feature_p = 0.0;
  double edge_p = 0.0;
  Rng* rng = nullptr;
  bool active() const { return rng != nullptr && (feature_p > 0.0 || edge_p > 0.0); }
};

// ---------------------------------------------------------------------------
// Sequential block: windowed relative-position attention + swish-gated FFN,
// post-norm residual around each. Shared by the decoder's state feedback and
// the stub encoder's layers.
// ---------------------------------------------------------------------------

struct SeqBlock {
  Var wq, wk, wv, wr, attn_gain, w1, w2, w3, ffn_gain;

  static void add_params(ParameterStore& store, const std::string& prefix, std::size_t d_w,
                         std::size_t d_ff, std::size_t kappa, Rng& rng,
                         LrGroup group = LrGroup::decoder) {
    auto xavier = [&](std::size_t rows, std::size_t cols) {
      double bound = std::sqrt(6.0 / double(rows + cols));
      Tensor t({rows, cols});
      for (auto& x : t.writable()) x = rng.uniform(-bound, bound);
      return t;
    };
    store.add(prefix + ".wq", xavier(d_w, d_w), group);
    store.add(prefix + ".wk", xavier(d_w, d_w), group);
    store.add(prefix + ".wv", xavier(d_w, d_w), group);
    store.add(prefix + ".wr", Tensor::randn({2 * kappa + 1, d_w}, rng, 0.02), group);
    store.add(prefix + ".attn_gain", Tensor::full({d_w}, 1.0), group);
    store.add(prefix + ".ffn_w1", xavier(d_ff, d_w), group);
    store.add(prefix + ".ffn_w2", xavier(d_ff, d_w), group);
    store.add(prefix + ".ffn_w3", xavier(d_w, d_ff), group);
    store.add(prefix + ".ffn_gain", Tensor::full({d_w}, 1.0), group);
  }

  static SeqBlock bind(Tape& tape, ParameterStore& store, const std::string& prefix) {
    SeqBlock b;
    b.wq = tape.param(store.get(prefix + ".wq"));
    b.wk = tape.param(store.get(prefix + ".wk"));
    b.wv = tape.param(store.get(prefix + ".wv"));
    b.wr = tape.param(store.get(prefix + ".wr"));
    b.attn_gain = tape.param(store.get(prefix + ".attn_gain"));
    b.w1 = tape.param(store.get(prefix + ".ffn_w1"));
    b.w2 = tape.param(store.get(prefix + ".ffn_w2"));
    b.w3 = tape.param(store.get(prefix + ".ffn_w3"));
    b.ffn_gain = tape.param(store.get(prefix + ".ffn_gain"));
    return b;
  }
};

// Optional per-row attention summary for the inspect trace.
struct SeqAttnSummary {
  std::vector<std::vector<double>> rows;  // rows[i][j - window_lo(i)], head-averaged
};

// One application of the block. Attention is restricted to |i-j| <= kappa;
// edges beyond the window are absent, giving overlapping chunks rather than
// clipped distances.
inline Var seq_feedback(Tape& tape, const SeqBlock& blk, Var states, std::size_t h_seq,
                        std::size_t kappa, bool attention_enabled, const DropoutCtx& drop,
                        SeqAttnSummary* summary = nullptr) {
  Tensor sv = tape.val(states);
  std::size_t s = sv.shape()[0], d_w = sv.shape()[1];
  Var u = states;
  if (attention_enabled) {
    std::vector<std::size_t> qi, kj, ridx;
    for (std::size_t i = 0; i < s; ++i) {
      std::size_t lo = i > kappa ? i - kappa : 0;
      std::size_t hi = std::min(s - 1, i + kappa);
      for (std::size_t j = lo; j <= hi; ++j) {
        if (drop.active() && j != i && drop.rng->uniform() < drop.edge_p) continue;
        qi.push_back(i);
        kj.push_back(j);
        ridx.push_back(j + kappa - i);
      }
    }
    Var q = matmul(states, transpose(blk.wq));
    Var k = matmul(states, transpose(blk.wk));
    Var v = matmul(states, transpose(blk.wv));
    Var qe = embedding_lookup(q, qi);
    Var ke = embedding_lookup(k, kj);
    Var re = embedding_lookup(blk.wr, ridx);
    Var scores = scalar_mul(rowwise_block_sum(mul(mul(qe, re), ke), h_seq),
                            1.0 / std::sqrt(double(d_w)));
    Var alpha = segment_softmax_cols(scores, qi);
    if (summary) {
      Tensor av = tape.val(alpha);
      summary->rows.assign(s, {});
      for (std::size_t e = 0; e < qi.size(); ++e) {
        double mean = 0.0;
        for (std::size_t h = 0; h < h_seq; ++h) mean += av.get(e, h);
        summary->rows[qi[e]].push_back(mean / double(h_seq));
      }
    }
    Var messages = segment_sum_rows(scale_blocks(embedding_lookup(v, kj), alpha, h_seq), qi, s);
    if (drop.active() && drop.feature_p > 0.0)
      messages = dropout(messages, drop.feature_p, *drop.rng);
    u = rms_norm_rows(add(states, messages), blk.attn_gain);
  } else {
    u = rms_norm_rows(states, blk.attn_gain);
  }
  Var gated = mul(swish(matmul(u, transpose(blk.w1))), matmul(u, transpose(blk.w2)));
  Var ff = matmul(gated, transpose(blk.w3));
  if (drop.active() && drop.feature_p > 0.0) ff = dropout(ff, drop.feature_p, *drop.rng);
  return rms_norm_rows(add(u, ff), blk.ffn_gain);
}

// ---------------------------------------------------------------------------
// Heterogeneous node feedback
// ---------------------------------------------------------------------------

struct HetBlock {
  Var bottleneck;  // (H * d_n, d_w), head-stacked W_b
  Var attn_state;  // (H * d_n), state halves of the dot weights
  Var attn_node;   // (H, d_n), node halves of the dot weights
  Var up_proj;     // (d_w, d_n), head-stacked W_m
  Var gain;        // (d_w)

  static void add_params(ParameterStore& store, const std::string& prefix, std::size_t d_w,
                         std::size_t d_n, std::size_t h_het, Rng& rng) {
    auto xavier = [&](std::size_t rows, std::size_t cols) {
      double bound = std::sqrt(6.0 / double(rows + cols));
      Tensor t({rows, cols});
      for (auto& x : t.writable()) x = rng.uniform(-bound, bound);
      return t;
    };
    store.add(prefix + ".bottleneck", xavier(h_het * d_n, d_w));
    Tensor wa({h_het * d_n});
    for (auto& x : wa.writable()) x = rng.normal(0.0, 0.1);
    store.add(prefix + ".attn_state", std::move(wa));
    Tensor wn({h_het, d_n});
    for (auto& x : wn.writable()) x = rng.normal(0.0, 0.1);
    store.add(prefix + ".attn_node", std::move(wn));
    store.add(prefix + ".up_proj", xavier(d_w, d_n));
    store.add(prefix + ".gain", Tensor::full({d_w}, 1.0));
  }

  static HetBlock bind(Tape& tape, ParameterStore& store, const std::string& prefix) {
    HetBlock b;
    b.bottleneck = tape.param(store.get(prefix + ".bottleneck"));
    b.attn_state = tape.param(store.get(prefix + ".attn_state"));
    b.attn_node = tape.param(store.get(prefix + ".attn_node"));
    b.up_proj = tape.param(store.get(prefix + ".up_proj"));
    b.gain = tape.param(store.get(prefix + ".gain"));
    return b;
  }
};

// Per-word mean self-loop attention weight, for traces.
struct NodeAttnSummary {
  std::vector<std::pair<std::size_t, double>> self_weight;
};

// Feedback from the just-decoded nodes to their word states. Words with an
// empty neighborhood are not touched at all -- their rows pass through
// bit-exact, which protects completed trees. Updated words aggregate a
// self-loop message (their own state slice per head) with up-projected node
// messages, under leaky-relu scores normalized per head, then RMS-normalize.
inline Var node_feedback(Tape& tape, const HetBlock& blk, Var states,
                         const std::vector<std::size_t>& node_words, Var node_embeds,
                         std::size_t h_het, double slope, const DropoutCtx& drop,
                         NodeAttnSummary* summary = nullptr) {
  std::size_t n_nodes = node_words.size();
  if (n_nodes == 0) return states;

  // Words with at least one decoded node, in ascending order.
  std::vector<std::size_t> words;
  for (auto w : node_words)
    if (words.empty() || words.back() != w) words.push_back(w);
  std::map<std::size_t, std::size_t> local;  // word -> row in the gathered block
  for (std::size_t i = 0; i < words.size(); ++i) local[words[i]] = i;

  // Edge dropout removes node edges, never the self-loop.
  std::vector<std::size_t> kept;
  for (std::size_t e = 0; e < n_nodes; ++e) {
    if (drop.active() && drop.rng->uniform() < drop.edge_p) continue;
    kept.push_back(e);
  }

  Var hw = embedding_lookup(states, words);
  Var proj = matmul(hw, transpose(blk.bottleneck));                          // (W, H*d_n)
  Var self_scores = rowwise_block_sum(mul_rowwise(proj, blk.attn_state), h_het);  // (W, H)
  Var node_scores = matmul(node_embeds, transpose(blk.attn_node));           // (N, H)

  std::vector<std::size_t> kept_rows, kept_word_rows;
  for (auto e : kept) {
    kept_rows.push_back(e);
    kept_word_rows.push_back(local[node_words[e]]);
  }
  Var nb_scores = kept.empty()
                      ? node_scores  // unused, placeholder to keep the graph simple
                      : add(embedding_lookup(self_scores, kept_word_rows),
                            embedding_lookup(node_scores, kept_rows));

  // Segment layout: for each word, its self edge then its kept node edges.
  std::vector<std::pair<int, std::size_t>> sel;
  std::vector<std::size_t> seg;
  {
    std::size_t ke = 0;
    for (std::size_t wi = 0; wi < words.size(); ++wi) {
      sel.emplace_back(0, wi);
      seg.push_back(wi);
      while (ke < kept.size() && local[node_words[kept[ke]]] == wi) {
        sel.emplace_back(1, ke);
        seg.push_back(wi);
        ++ke;
      }
    }
  }

  Var scores = gather_rows_pair(self_scores, nb_scores, sel);
  Var alpha = segment_softmax_cols(leaky_relu(scores, slope), seg);
  if (summary) {
    Tensor av = tape.val(alpha);
    for (std::size_t r = 0; r < sel.size(); ++r) {
      if (sel[r].first != 0) continue;
      double mean = 0.0;
      for (std::size_t h = 0; h < h_het; ++h) mean += av.get(r, h);
      summary->self_weight.emplace_back(words[sel[r].second], mean / double(h_het));
    }
  }

  Var node_msgs = matmul(node_embeds, transpose(blk.up_proj));  // (N, d_w), head-sliced
  Var kept_msgs = kept.empty() ? node_msgs : embedding_lookup(node_msgs, kept_rows);
  Var edge_msgs = gather_rows_pair(hw, kept_msgs, sel);
  Var mixed = segment_sum_rows(scale_blocks(edge_msgs, alpha, h_het), seg, words.size());
  Var normed = rms_norm_rows(mixed, blk.gain);
  return overwrite_rows(states, words, normed);
}

// ---------------------------------------------------------------------------
// Decoder parameters and the decode loop
// ---------------------------------------------------------------------------

inline void add_decoder_params(ParameterStore& store, const DecodeConfig& cfg,
                               std::size_t n_symbols, Rng& rng) {
  validate(cfg);
  add_path_params(store, cfg.d_n, n_symbols, rng);
  double bound = std::sqrt(6.0 / double(cfg.d_n + cfg.d_w));
  Tensor wn({cfg.d_n, cfg.d_w});
  for (auto& x : wn.writable()) x = rng.uniform(-bound, bound);
  store.add("dec.node_proj", std::move(wn));
  HetBlock::add_params(store, "dec.nf", cfg.d_w, cfg.d_n, cfg.h_het, rng);
  SeqBlock::add_params(store, "dec.seq", cfg.d_w, cfg.ffn_dim(), cfg.kappa, rng);
}

// One step's view of the growing canvas, for diagnostics and rendering.
struct TraceFrame {
  std::size_t step = 0;
  Fringe fringe;
  std::vector<int> symbols;  // one per fringe entry
  NodeAttnSummary node_attn;
  SeqAttnSummary seq_attn;
  double completed_feedback_maxdiff = 0.0;  // must stay exactly 0
};

struct DecodeOutput {
  std::vector<CategoryTree> trees;
  Var logits;                        // (total decoded nodes, |S|)
  std::vector<int> targets;          // teacher-forced gold ids, aligned with rows
  std::vector<int> decoded;          // symbol written per row
  std::vector<FringeEntry> rows;     // (word, position) per row
  std::size_t steps = 0;
  std::size_t depth_cap_hits = 0;
  std::vector<TraceFrame> trace;
};

namespace detail {

inline CategoryTree tree_from_nodes(const std::map<std::uint64_t, int>& nodes,
                                    const SymbolTable& table, std::uint64_t pos) {
  int sym = nodes.at(pos);
  if (table.at(sym).arity == 0) return CategoryTree::leaf(sym);
  return CategoryTree::node(sym, tree_from_nodes(nodes, table, 2 * pos),
                            tree_from_nodes(nodes, table, 2 * pos + 1));
}

inline int argmax_symbol(const Tensor& logits, std::size_t row, const SymbolTable& table,
                         bool zeroary_only) {
  std::size_t C = logits.shape()[1];
  int best = -1;
  double best_v = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    if (zeroary_only && table.at(int(c)).arity != 0) continue;
    double v = logits.get(row, c);
    if (best < 0 || v > best_v) {
      best = int(c);
      best_v = v;
    }
  }
  return best;
}

}  // namespace detail

// The depth-recurrent loop: predict the fringe, reveal symbols, build the
// next fringe, then run node and sequential feedback, until no fringe
// remains. Feedback is skipped after the final prediction since nothing is
// left to predict. At max_depth the prediction is restricted to zeroary
// symbols, which guarantees termination in free mode.
inline DecodeOutput decode_canvas(Tape& tape, ParameterStore& store, const SymbolTable& table,
                                  const DecodeConfig& cfg, Var h0,
                                  const std::vector<CategoryTree>* gold, DecodeMode mode,
                                  const DropoutCtx& drop = {},
                                  std::map<std::uint64_t, Tensor>* frozen_paths = nullptr,
                                  bool want_trace = false) {
  validate(cfg);
  std::size_t n_words = tape.val(h0).shape()[0];
  if (mode == DecodeMode::teacher_forced) {
    if (!gold || gold->size() != n_words)
      throw ConfigError("teacher forcing requires one gold tree per word");
    for (const auto& t : *gold)
      if (t.depth() > cfg.max_depth)
        throw ConfigError("gold tree deeper than max_depth; raise the cap");
  }

  PathEmbedder paths(tape, store, frozen_paths);
  Var node_proj = tape.param(store.get("dec.node_proj"));
  HetBlock het = HetBlock::bind(tape, store, "dec.nf");
  SeqBlock seq = SeqBlock::bind(tape, store, "dec.seq");

  DecodeOutput out;
  std::vector<std::map<std::uint64_t, int>> nodes(n_words);
  Var states = h0;
  Fringe fringe = initial_fringe(n_words);
  std::vector<Var> step_logits;

  while (!fringe.empty()) {
    std::size_t tau = out.steps;
    // (a) project class weights onto the fringe
    std::vector<std::size_t> word_ids;
    std::vector<Position> positions;
    for (const auto& e : fringe) {
      word_ids.push_back(e.tree);
      positions.push_back(e.pos);
    }
    Var proj = matmul(embedding_lookup(states, word_ids), transpose(node_proj));
    Var gated = mul(paths.positional_rows(positions), proj);
    Var logits = matmul(gated, transpose(paths.symbol_table_var()));
    step_logits.push_back(logits);

    bool at_cap = int(tau) >= cfg.max_depth;
    Tensor logit_vals = tape.val(logits);
    std::vector<int> symbols(fringe.size());
    std::vector<int> arities(fringe.size());
    for (std::size_t i = 0; i < fringe.size(); ++i) {
      int sym;
      if (mode == DecodeMode::teacher_forced) {
        sym = symbol_at((*gold)[fringe[i].tree], fringe[i].pos);
      } else {
        sym = detail::argmax_symbol(logit_vals, i, table, at_cap);
        if (at_cap) ++out.depth_cap_hits;
      }
      symbols[i] = sym;
      arities[i] = table.at(sym).arity;
      nodes[fringe[i].tree][fringe[i].pos.k] = sym;
      out.rows.push_back(fringe[i]);
      out.decoded.push_back(sym);
      if (mode == DecodeMode::teacher_forced) out.targets.push_back(sym);
    }
    ++out.steps;

    Fringe next = fringe_successors(fringe, arities);
    TraceFrame frame;
    if (want_trace) {
      frame.step = tau;
      frame.fringe = fringe;
      frame.symbols = symbols;
    }

    if (!next.empty()) {
      // (b) many-to-one feedback from the decoded nodes
      Var pre = states;
      if (!cfg.disable_node_feedback) {
        Var node_embeds = paths.embed_nodes(symbols, positions);
        states = node_feedback(tape, het, states, word_ids, node_embeds, cfg.h_het,
                               cfg.leaky_slope, drop, want_trace ? &frame.node_attn : nullptr);
      }
      if (want_trace) {
        // Completed words must pass through feedback bit-exact.
        Tensor before = tape.val(pre), after = tape.val(states);
        std::vector<bool> active(n_words, false);
        for (auto w : word_ids) active[w] = true;
        for (std::size_t w = 0; w < n_words; ++w) {
          if (active[w]) continue;
          for (std::size_t c = 0; c < before.shape()[1]; ++c) {
            double d = std::fabs(before.get(w, c) - after.get(w, c));
            frame.completed_feedback_maxdiff = std::max(frame.completed_feedback_maxdiff, d);
          }
        }
      }
      // (c) many-to-many feedback along the sentence
      states = seq_feedback(tape, seq, states, cfg.h_seq, cfg.kappa,
                            !cfg.disable_state_feedback, drop,
                            want_trace ? &frame.seq_attn : nullptr);
    }
    if (want_trace) out.trace.push_back(std::move(frame));
    fringe = std::move(next);
  }

  out.logits = step_logits.size() == 1 ? step_logits[0] : concat_rows(step_logits);
  out.trees.reserve(n_words);
  for (std::size_t w = 0; w < n_words; ++w)
    out.trees.push_back(detail::tree_from_nodes(nodes[w], table, 1));
  return out;
}

}  // namespace hdcs
