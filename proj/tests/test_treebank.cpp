#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "hdcs/treebank.hpp"

using namespace hdcs;

static const char* kExampleJsonl =
    R"({"units":[{"text":"This","category":"NP"},{"text":"is","category":"(S[dcl]\\NP)/NP"},{"text":"an","category":"NP/N"},{"text":"example","category":"N"}]})"
    "\n";

TEST_CASE("loading a sentence expands units to words") {
  SymbolTable table;
  std::istringstream in(kExampleJsonl);
  LoadResult res = load_corpus(in, table, LoadOptions{Formalism::ccg});
  REQUIRE(res.records.size() == 1);
  CHECK(res.diagnostics.empty());
  const CorpusRecord& rec = res.records[0];
  CHECK(rec.units.size() == 4);
  REQUIRE(rec.words.size() == 4);
  CHECK(rec.words[0].word == "This");
  CHECK(rec.words[3].word == "example");
  CHECK(category_key(rec.words[1].tree, Formalism::ccg, table) == "(S[dcl]\\NP)/NP");
}

TEST_CASE("multi-word units carry the category on the first word only") {
  SymbolTable table;
  std::istringstream in(
      R"({"units":[{"text":"New York","category":"NP"},{"text":"sings","category":"S\\NP"}]})"
      "\n");
  LoadResult res = load_corpus(in, table, LoadOptions{Formalism::ccg});
  REQUIRE(res.records.size() == 1);
  const auto& words = res.records[0].words;
  REQUIRE(words.size() == 3);
  CHECK(words[0].word == "New");
  CHECK_FALSE(is_mwu(words[0].tree));
  CHECK(words[1].word == "York");
  CHECK(is_mwu(words[1].tree));
  CHECK(words[2].word == "sings");
  CHECK(words[0].unit == 0);
  CHECK(words[1].unit == 0);
  CHECK(words[2].unit == 1);
}

TEST_CASE("empty input loads an empty corpus without error") {
  SymbolTable table;
  std::istringstream in("");
  LoadResult res = load_corpus(in, table, LoadOptions{Formalism::ccg});
  CHECK(res.records.empty());
  CHECK(res.diagnostics.empty());
}

TEST_CASE("bad lines are diagnosed with line numbers within the error budget") {
  SymbolTable table;
  std::string data = kExampleJsonl;
  data += "{\"units\":[{\"text\":\"oops\",\"category\":\"NP/(\"}]}\n";
  data += kExampleJsonl;
  SECTION("budget 0 aborts") {
    std::istringstream in(data);
    CHECK_THROWS_AS(load_corpus(in, table, LoadOptions{Formalism::ccg, false, 0}), CorpusError);
  }
  SECTION("budget 1 skips the bad line and records a diagnostic") {
    std::istringstream in(data);
    LoadResult res = load_corpus(in, table, LoadOptions{Formalism::ccg, false, 1});
    CHECK(res.records.size() == 2);
    REQUIRE(res.diagnostics.size() == 1);
    CHECK(res.diagnostics[0].line == 2);
  }
}

TEST_CASE("mwu expansion is invertible given unit boundaries") {
  SymbolTable table;
  SynthConfig cfg;
  cfg.n_sentences = 40;
  cfg.mwu_prob = 0.3;
  cfg.seed = 11;
  auto records = generate_synthetic(cfg, table);
  for (const auto& rec : records) {
    auto merged = merge_mwu_words(rec, cfg.formalism, table);
    REQUIRE(merged.size() == rec.units.size());
    for (std::size_t u = 0; u < merged.size(); ++u) {
      CHECK(merged[u].text == rec.units[u].text);
      CHECK(merged[u].category == rec.units[u].category);
    }
  }
}

TEST_CASE("splits are deterministic under a fixed seed") {
  SymbolTable table;
  SynthConfig cfg;
  cfg.n_sentences = 10;
  cfg.seed = 3;
  auto records = generate_synthetic(cfg, table);
  auto s1 = split_corpus(records, {0.8, 0.1, 0.1}, 0);
  CHECK(s1[0].size() == 8);
  CHECK(s1[1].size() == 1);
  CHECK(s1[2].size() == 1);

  auto s2 = split_corpus(records, {0.8, 0.1, 0.1}, 0);
  for (int b = 0; b < 3; ++b) {
    REQUIRE(s1[b].size() == s2[b].size());
    for (std::size_t i = 0; i < s1[b].size(); ++i)
      CHECK(s1[b][i].words[0].word == s2[b][i].words[0].word);
  }
}

TEST_CASE("different seeds permute a large corpus differently") {
  SymbolTable table;
  SynthConfig cfg;
  cfg.n_sentences = 1000;
  cfg.seed = 5;
  auto records = generate_synthetic(cfg, table);
  auto a = split_corpus(records, {0.8, 0.1, 0.1}, 1);
  auto b = split_corpus(records, {0.8, 0.1, 0.1}, 2);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < a[0].size(); ++i)
    if (a[0][i].units[0].category != b[0][i].units[0].category ||
        a[0][i].words[0].word != b[0][i].words[0].word)
      ++differing;
  CHECK(differing > 0);
}

TEST_CASE("frequency bin boundaries") {
  CHECK(bin_of_count(100) == FreqBin::frequent);
  CHECK(bin_of_count(250) == FreqBin::frequent);
  CHECK(bin_of_count(99) == FreqBin::uncommon);
  CHECK(bin_of_count(10) == FreqBin::uncommon);
  CHECK(bin_of_count(9) == FreqBin::rare);
  CHECK(bin_of_count(1) == FreqBin::rare);
  CHECK(bin_of_count(0) == FreqBin::unseen);
}

static CorpusRecord single_word_record(SymbolTable& table, const std::string& word,
                                       const std::string& category) {
  CorpusRecord rec;
  CategoryTree tree = parse_category(category, Formalism::ccg, table);
  rec.units.push_back(CorpusUnit{word, print_category(tree, Formalism::ccg, table)});
  expand_words(rec, {tree});
  return rec;
}

TEST_CASE("bin_tokens labels every test token from training counts") {
  SymbolTable table;
  std::vector<CorpusRecord> train;
  for (int i = 0; i < 100; ++i) train.push_back(single_word_record(table, "w", "NP"));
  for (int i = 0; i < 5; ++i) train.push_back(single_word_record(table, "w", "N"));
  std::vector<CorpusRecord> test;
  test.push_back(single_word_record(table, "w", "NP"));    // frequent
  test.push_back(single_word_record(table, "w", "N"));     // rare
  test.push_back(single_word_record(table, "w", "N/N"));   // unseen
  BinReport report = bin_tokens(train, test, Formalism::ccg, table);
  CHECK(report.token_counts[std::size_t(FreqBin::frequent)] == 1);
  CHECK(report.token_counts[std::size_t(FreqBin::rare)] == 1);
  CHECK(report.token_counts[std::size_t(FreqBin::unseen)] == 1);
  CHECK(report.total_tokens() == 3);
  CHECK(report.labels[0][0] == FreqBin::frequent);
  CHECK(report.labels[1][0] == FreqBin::rare);
  CHECK(report.labels[2][0] == FreqBin::unseen);
}

TEST_CASE("a corpus whose categories each occur five times makes all test tokens rare") {
  SymbolTable table;
  std::vector<CorpusRecord> train, test;
  for (int c = 0; c < 4; ++c) {
    std::string cat = "A" + std::to_string(c);
    for (int i = 0; i < 5; ++i) train.push_back(single_word_record(table, "w", cat));
    test.push_back(single_word_record(table, "w", cat));
  }
  BinReport report = bin_tokens(train, test, Formalism::ccg, table);
  CHECK(report.token_counts[std::size_t(FreqBin::rare)] == report.total_tokens());
}

TEST_CASE("synthetic generation") {
  SECTION("max depth 0 gives atomic categories only") {
    SymbolTable table;
    SynthConfig cfg;
    cfg.max_depth = 0;
    cfg.n_sentences = 20;
    cfg.seed = 7;
    for (const auto& rec : generate_synthetic(cfg, table))
      for (const auto& tok : rec.words) CHECK(tok.tree.depth() == 0);
  }
  SECTION("fixed seeds give byte-identical corpora") {
    SynthConfig cfg;
    cfg.n_sentences = 50;
    cfg.seed = 9;
    SymbolTable t1, t2;
    CHECK(to_jsonl(generate_synthetic(cfg, t1)) == to_jsonl(generate_synthetic(cfg, t2)));
  }
  SECTION("zipf tail yields nonempty rare and unseen bins on a fresh draw") {
    SymbolTable table;
    SynthConfig cfg;
    cfg.n_categories = 2000;
    cfg.zipf_exponent = 1.2;
    cfg.n_sentences = 400;
    cfg.max_depth = 4;
    cfg.seed = 21;
    auto train = generate_synthetic(cfg, table);
    cfg.seed = 22;
    auto test = generate_synthetic(cfg, table);
    BinReport report = bin_tokens(train, test, cfg.formalism, table);
    CHECK(report.token_counts[std::size_t(FreqBin::rare)] > 0);
    CHECK(report.token_counts[std::size_t(FreqBin::unseen)] > 0);
  }
}

TEST_CASE("loading is idempotent") {
  SymbolTable table;
  SynthConfig cfg;
  cfg.n_sentences = 30;
  cfg.mwu_prob = 0.2;
  cfg.seed = 13;
  auto records = generate_synthetic(cfg, table);
  std::string first = to_jsonl(records);
  SymbolTable t2;
  std::istringstream in(first);
  auto loaded = load_corpus(in, t2, LoadOptions{cfg.formalism});
  CHECK(to_jsonl(loaded.records) == first);
}

TEST_CASE("print-parse round trip over generated inventories, all formalisms") {
  for (Formalism f : {Formalism::ccg, Formalism::tlg, Formalism::aethel}) {
    SynthConfig cfg;
    cfg.formalism = f;
    cfg.max_depth = 6;
    cfg.op_vocab = f == Formalism::ccg ? 2 : 6;
    Rng rng(99, "inventory");
    auto inventory = random_category_inventory(cfg, rng, 300);
    REQUIRE(inventory.size() == 300);
    SymbolTable table;
    for (const auto& s : inventory) {
      CategoryTree t = parse_category(s, f, table);
      std::string printed = print_category(t, f, table);
      CHECK(printed == s);
      CHECK(parse_category(printed, f, table) == t);
    }
  }
}

TEST_CASE("adapter round trips over generated inventories") {
  SECTION("tlg pseudo-binarization") {
    SynthConfig cfg;
    cfg.formalism = Formalism::tlg;
    cfg.max_depth = 7;
    cfg.op_vocab = 4;
    Rng rng(17, "inventory");
    for (const auto& s : random_category_inventory(cfg, rng, 500)) {
      RawNode raw = parse_raw(s, Formalism::tlg);
      RawNode bin = binarize_unary_tlg(raw);
      CHECK(debinarize_unary_tlg(bin) == raw);
    }
  }
  SECTION("aethel modality merge") {
    SynthConfig cfg;
    cfg.formalism = Formalism::aethel;
    cfg.max_depth = 7;
    cfg.op_vocab = 8;
    Rng rng(18, "inventory");
    for (const auto& s : random_category_inventory(cfg, rng, 500)) {
      RawNode raw = parse_raw(s, Formalism::aethel);
      RawNode merged = merge_modalities_aethel(raw);
      CHECK(unmerge_modalities_aethel(merged) == raw);
      std::function<void(const RawNode&)> assert_binary = [&](const RawNode& n) {
        CHECK(n.kids.size() != 1);
        for (const auto& k : n.kids) assert_binary(k);
      };
      assert_binary(merged);
    }
  }
}
