#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hdcs/category.hpp"
#include "hdcs/errors.hpp"
#include "hdcs/formalism.hpp"
#include "hdcs/rng.hpp"

namespace hdcs {

// Data-level unit: a stretch of text (possibly several words) with one
// category assignment.
struct CorpusUnit {
  std::string text;
  std::string category;  // canonical surface form
};

// Word-level token after MWU expansion. Trailing words of a multi-word unit
// carry the [MWU] leaf instead of a real category.
struct WordToken {
  std::string word;
  CategoryTree tree;
  std::size_t unit = 0;  // index into the owning record's units
};

struct CorpusRecord {
  std::vector<CorpusUnit> units;
  std::vector<WordToken> words;
};

inline CategoryTree mwu_leaf() { return CategoryTree::leaf(0); }

inline bool is_mwu(const CategoryTree& t) { return t.arity() == 0 && t.symbol() == 0; }

// Canonical string used for frequency counting and tree comparison.
inline std::string category_key(const CategoryTree& t, Formalism f, const SymbolTable& table) {
  if (is_mwu(t)) return SymbolTable::kMwu;
  return print_category(t, f, table);
}

namespace detail {

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string join_ws(const std::vector<std::string>& words, std::size_t lo, std::size_t hi) {
  std::string out;
  for (std::size_t i = lo; i < hi; ++i) {
    if (i > lo) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace detail

// Expand a record's units to word tokens; the first word of each unit carries
// the category, every following word carries [MWU].
inline void expand_words(CorpusRecord& rec, const std::vector<CategoryTree>& trees) {
  rec.words.clear();
  for (std::size_t u = 0; u < rec.units.size(); ++u) {
    auto words = detail::split_ws(rec.units[u].text);
    for (std::size_t w = 0; w < words.size(); ++w) {
      rec.words.push_back(WordToken{words[w], w == 0 ? trees[u] : mwu_leaf(), u});
    }
  }
}

// Inverse of expansion given gold unit boundaries: [MWU]-tagged words merge
// leftward.
inline std::vector<CorpusUnit> merge_mwu_words(const CorpusRecord& rec, Formalism f,
                                               const SymbolTable& table) {
  std::vector<CorpusUnit> units;
  std::vector<std::string> texts;
  for (const auto& tok : rec.words) {
    if (is_mwu(tok.tree) && !units.empty()) {
      units.back().text += ' ' + tok.word;
    } else {
      units.push_back(CorpusUnit{tok.word, print_category(tok.tree, f, table)});
    }
  }
  return units;
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

struct LoadOptions {
  Formalism formalism = Formalism::ccg;
  bool strict = false;          // closed symbol table
  std::size_t error_budget = 0; // tolerated bad lines before aborting
};

struct LoadDiagnostic {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<CorpusRecord> records;
  std::vector<LoadDiagnostic> diagnostics;
};

// JSON-lines, one sentence per line:
//   {"units": [{"text": "New York", "category": "NP"}, ...]}
// Categories are re-printed to canonical form; bad lines are collected and
// the load aborts once they exceed the error budget.
inline LoadResult load_corpus(std::istream& in, SymbolTable& table, const LoadOptions& opt) {
  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  auto diagnose = [&](const std::string& msg) {
    result.diagnostics.push_back(LoadDiagnostic{line_no, msg});
    if (result.diagnostics.size() > opt.error_budget) {
      std::string detail;
      for (const auto& d : result.diagnostics)
        detail += "\n  line " + std::to_string(d.line) + ": " + d.message;
      throw CorpusError("corpus load exceeded error budget of " +
                        std::to_string(opt.error_budget) + detail);
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    bool blank = true;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
    if (blank) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("units") || !j["units"].is_array()) {
      diagnose("not a JSON object with a \"units\" array");
      continue;
    }
    CorpusRecord rec;
    std::vector<CategoryTree> trees;
    bool ok = true;
    for (const auto& ju : j["units"]) {
      if (!ju.is_object() || !ju.contains("text") || !ju.contains("category") ||
          !ju["text"].is_string() || !ju["category"].is_string()) {
        diagnose("unit must be {\"text\": str, \"category\": str}");
        ok = false;
        break;
      }
      std::string text = ju["text"].get<std::string>();
      if (detail::split_ws(text).empty()) {
        diagnose("unit text is empty");
        ok = false;
        break;
      }
      CategoryTree tree;
      try {
        tree = parse_category(ju["category"].get<std::string>(), opt.formalism, table, opt.strict);
      } catch (const Error& e) {
        diagnose(std::string("category \"") + ju["category"].get<std::string>() +
                 "\": " + e.what());
        ok = false;
        break;
      }
      rec.units.push_back(
          CorpusUnit{detail::join_ws(detail::split_ws(text), 0, detail::split_ws(text).size()),
                     print_category(tree, opt.formalism, table)});
      trees.push_back(tree);
    }
    if (!ok) continue;
    expand_words(rec, trees);
    result.records.push_back(std::move(rec));
  }
  return result;
}

inline LoadResult load_corpus_file(const std::string& path, SymbolTable& table,
                                   const LoadOptions& opt) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file: " + path);
  return load_corpus(in, table, opt);
}

inline std::string to_jsonl(const std::vector<CorpusRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    nlohmann::json units = nlohmann::json::array();
    for (const auto& u : rec.units) units.push_back({{"text", u.text}, {"category", u.category}});
    out += nlohmann::json{{"units", units}}.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

// Deterministic shuffle + split. Train and dev sizes are floors of their
// ratios; the remainder goes to test.
inline std::array<std::vector<CorpusRecord>, 3> split_corpus(
    const std::vector<CorpusRecord>& records, std::array<double, 3> ratios, std::uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed, "split");
  rng.shuffle(order);
  std::size_t n = records.size();
  std::size_t n_train = std::size_t(ratios[0] * double(n));
  std::size_t n_dev = std::size_t(ratios[1] * double(n));
  std::array<std::vector<CorpusRecord>, 3> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t bucket = i < n_train ? 0 : (i < n_train + n_dev ? 1 : 2);
    out[bucket].push_back(records[order[i]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frequency bins
// ---------------------------------------------------------------------------

enum class FreqBin { frequent = 0, uncommon = 1, rare = 2, unseen = 3 };

inline const char* to_string(FreqBin b) {
  switch (b) {
    case FreqBin::frequent: return "frequent";
    case FreqBin::uncommon: return "uncommon";
    case FreqBin::rare: return "rare";
    default: return "unseen";
  }
}

inline FreqBin bin_of_count(std::size_t count) {
  if (count >= 100) return FreqBin::frequent;
  if (count >= 10) return FreqBin::uncommon;
  if (count >= 1) return FreqBin::rare;
  return FreqBin::unseen;
}

// Occurrence count of every category in the training split, keyed by
// canonical surface string.
inline std::map<std::string, std::size_t> category_counts(
    const std::vector<CorpusRecord>& train, Formalism f, const SymbolTable& table) {
  std::map<std::string, std::size_t> counts;
  for (const auto& rec : train)
    for (const auto& tok : rec.words) ++counts[category_key(tok.tree, f, table)];
  return counts;
}

struct BinReport {
  std::array<std::size_t, 4> token_counts{};                 // per bin
  std::vector<std::vector<FreqBin>> labels;                  // per test record, per token
  std::map<std::string, std::size_t> train_counts;

  std::size_t total_tokens() const {
    return token_counts[0] + token_counts[1] + token_counts[2] + token_counts[3];
  }
};

// Every test token labeled with exactly one bin, from training counts only.
inline BinReport bin_tokens(const std::vector<CorpusRecord>& train,
                            const std::vector<CorpusRecord>& test, Formalism f,
                            const SymbolTable& table) {
  BinReport report;
  report.train_counts = category_counts(train, f, table);
  for (const auto& rec : test) {
    std::vector<FreqBin> row;
    for (const auto& tok : rec.words) {
      auto it = report.train_counts.find(category_key(tok.tree, f, table));
      FreqBin bin = bin_of_count(it == report.train_counts.end() ? 0 : it->second);
      ++report.token_counts[std::size_t(bin)];
      row.push_back(bin);
    }
    report.labels.push_back(std::move(row));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

struct SynthConfig {
  Formalism formalism = Formalism::ccg;
  std::size_t n_sentences = 100;
  std::size_t word_vocab = 200;
  std::size_t n_categories = 60;
  std::size_t atom_vocab = 8;   // zeroary inventory
  std::size_t op_vocab = 2;     // binary inventory (ccg is pinned to / and \)
  int max_depth = 3;
  double branch_prob = 0.45;
  double unary_prob = 0.25;     // tlg modality rate
  double zipf_exponent = 1.2;
  std::size_t min_len = 3;
  std::size_t max_len = 10;
  double mwu_prob = 0.0;
  // When set, a word's surface form spells out its category, giving a
  // learnable mapping whose unseen categories are still predictable.
  bool words_spell_categories = false;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::string> synth_binary_labels(const SynthConfig& cfg) {
  std::vector<std::string> ops;
  switch (cfg.formalism) {
    case Formalism::ccg:
      ops = {"/", "\\"};
      break;
    case Formalism::tlg:
      for (std::size_t m = 0; m * 2 < cfg.op_vocab; ++m) {
        ops.push_back("/" + std::to_string(m));
        ops.push_back("\\" + std::to_string(m));
      }
      break;
    case Formalism::aethel: {
      ops.emplace_back(surface::kArrow);
      static const char* deps[] = {"su", "obj1", "det", "mod", "body", "predc", "obj2", "app"};
      for (std::size_t i = 0; i + 1 < cfg.op_vocab && i < 16; ++i) {
        const char* dep = deps[i % 8];
        std::string name = std::string(dep) + (i >= 8 ? "x" : "");
        if (i % 2 == 0)
          ops.push_back(std::string(surface::kArrow) + std::string(surface::kDiamond) + name);
        else
          ops.push_back(std::string(surface::kBox) + name + std::string(surface::kArrow));
      }
      break;
    }
  }
  return ops;
}

// Random post-adapter tree (strictly binary; tlg modalities carry their
// artificial right slot). `force_depth` guarantees one spine of that length.
inline RawNode random_category_node(Rng& rng, const SynthConfig& cfg,
                                    const std::vector<std::string>& ops, int depth_left,
                                    int force_depth) {
  bool branch = depth_left > 0 && (force_depth > 0 || rng.uniform() < cfg.branch_prob);
  if (!branch) {
    return RawNode{"a" + std::to_string(rng.below(cfg.atom_vocab)), {}};
  }
  if (cfg.formalism == Formalism::tlg && rng.uniform() < cfg.unary_prob) {
    std::string label = (rng.bernoulli(0.5) ? std::string(surface::kDiamond)
                                            : std::string(surface::kBox)) +
                        std::to_string(rng.below(2));
    RawNode payload = random_category_node(rng, cfg, ops, depth_left - 1, force_depth - 1);
    return RawNode{std::move(label),
                   {std::move(payload), RawNode{std::string(surface::kArtTerminal), {}}}};
  }
  std::string op = ops[std::size_t(rng.below(ops.size()))];
  bool force_left = rng.bernoulli(0.5);
  RawNode l = random_category_node(rng, cfg, ops, depth_left - 1, force_left ? force_depth - 1 : 0);
  RawNode r =
      random_category_node(rng, cfg, ops, depth_left - 1, force_left ? 0 : force_depth - 1);
  return RawNode{std::move(op), {std::move(l), std::move(r)}};
}

}  // namespace detail

// Distinct random categories in canonical surface form (post-adapter trees
// rendered through the inverse adapters). Depths are spread over
// [0, max_depth] with the cap itself guaranteed to occur for max_depth <= count.
inline std::vector<std::string> random_category_inventory(const SynthConfig& cfg, Rng& rng,
                                                          std::size_t count) {
  auto ops = detail::synth_binary_labels(cfg);
  std::vector<std::string> inventory;
  std::map<std::string, bool> seen;
  std::size_t attempts = 0, max_attempts = count * 200 + 1000;
  while (inventory.size() < count && attempts++ < max_attempts) {
    int force = inventory.size() < std::size_t(cfg.max_depth)
                    ? int(inventory.size())
                    : int(rng.below(std::uint64_t(cfg.max_depth) + 1));
    RawNode node = detail::random_category_node(rng, cfg, ops, cfg.max_depth, force);
    std::string text = print_raw(node, cfg.formalism);
    if (!seen.count(text)) {
      seen[text] = true;
      inventory.push_back(std::move(text));
    }
  }
  return inventory;
}

namespace detail {

// Zipf sampler over ranks 1..n with weight r^-a.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double a) : cum_(n) {
    double total = 0.0;
    for (std::size_t r = 1; r <= n; ++r) {
      total += 1.0 / std::pow(double(r), a);
      cum_[r - 1] = total;
    }
    for (auto& c : cum_) c /= total;
  }
  std::size_t sample(Rng& rng) const {
    double u = rng.uniform();
    std::size_t lo = 0, hi = cum_.size();
    while (lo + 1 < hi) {
      std::size_t mid = (lo + hi) / 2;
      (cum_[mid - 1] <= u ? lo : hi) = mid;
    }
    return lo;  // 0-based rank
  }

 private:
  std::vector<double> cum_;
};

inline std::string spell_category(const std::string& category) {
  std::string word;
  std::string_view v = category;
  auto eat = [&](std::string_view tok, char repl) {
    if (v.substr(0, tok.size()) == tok) {
      if (repl) word += repl;
      v.remove_prefix(tok.size());
      return true;
    }
    return false;
  };
  while (!v.empty()) {
    if (eat(surface::kArrow, 'o') || eat(surface::kDiamond, 'd') || eat(surface::kBox, 'q') ||
        eat("(", 'l') || eat(")", 'r') || eat("/", 'f') || eat("\\", 'v') || eat(" ", 0) ||
        eat("_", 0) || eat("[", 0) || eat("]", 0) || eat(":", 0))
      continue;
    word += v.front();
    v.remove_prefix(1);
  }
  return word;
}

}  // namespace detail

// Sentences of random words over a Zipf-distributed inventory of random
// binary-tree categories; byte-identical output for equal seeds.
inline std::vector<CorpusRecord> generate_synthetic(const SynthConfig& cfg, SymbolTable& table) {
  Rng rng(cfg.seed, "synth");
  std::vector<std::string> inventory = random_category_inventory(cfg, rng, cfg.n_categories);
  if (inventory.empty()) throw ConfigError("category inventory came out empty");
  detail::ZipfSampler zipf(inventory.size(), cfg.zipf_exponent);
  std::vector<CorpusRecord> records;
  records.reserve(cfg.n_sentences);
  for (std::size_t s = 0; s < cfg.n_sentences; ++s) {
    std::size_t len = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
    CorpusRecord rec;
    std::vector<CategoryTree> trees;
    for (std::size_t i = 0; i < len; ++i) {
      const std::string& category = inventory[zipf.sample(rng)];
      std::string word = cfg.words_spell_categories
                             ? detail::spell_category(category)
                             : "w" + std::to_string(rng.below(cfg.word_vocab));
      std::string text = word;
      if (rng.uniform() < cfg.mwu_prob)
        text += " w" + std::to_string(rng.below(cfg.word_vocab));
      CategoryTree tree = parse_category(category, cfg.formalism, table);
      rec.units.push_back(CorpusUnit{text, print_category(tree, cfg.formalism, table)});
      trees.push_back(tree);
    }
    expand_words(rec, trees);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace hdcs
