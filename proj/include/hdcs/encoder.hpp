#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "hdcs/checkpoint.hpp"
#include "hdcs/decoder.hpp"
#include "hdcs/errors.hpp"
#include "hdcs/params.hpp"
#include "hdcs/rng.hpp"
#include "hdcs/tape.hpp"
#include "hdcs/treebank.hpp"

namespace hdcs {

// Contiguous subword span per word; spans partition the subword sequence.
struct SubwordGrouping {
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (start, length)

  std::size_t total() const {
    return spans.empty() ? 0 : spans.back().first + spans.back().second;
  }

  void validate(std::size_t n_subwords) const {
    std::size_t expected = 0;
    for (const auto& [start, len] : spans) {
      if (start != expected || len == 0)
        throw SchemaError("subword spans must partition the sequence with nonempty groups");
      expected = start + len;
    }
    if (expected != n_subwords) throw SchemaError("subword spans do not cover the sequence");
  }

  std::vector<std::size_t> segment_ids() const {
    std::vector<std::size_t> seg;
    for (std::size_t w = 0; w < spans.size(); ++w)
      for (std::size_t i = 0; i < spans[w].second; ++i) seg.push_back(w);
    return seg;
  }
};

struct EncoderConfig {
  std::string kind = "stub";  // stub | file | service
  std::size_t layers = 2;
  std::size_t kappa = 8;
  std::size_t h_seq = 8;
  std::size_t pool_hidden = 0;  // 0 means d_w / 4
  std::size_t max_positions = 512;
  bool trigram_subwords = false;
  std::string source;  // vector file path or service URL

  std::size_t pool_dim(std::size_t d_w) const {
    return pool_hidden ? pool_hidden : std::max<std::size_t>(8, d_w / 4);
  }
};

// ---------------------------------------------------------------------------
// Stub tokenizer + vocabulary
// ---------------------------------------------------------------------------

// Whitespace words; optionally boundary-marked character trigrams so the
// pooling layer has real groups to aggregate. Id 0 is the OOV bucket.
class StubVocab {
 public:
  static std::vector<std::string> subword_units(const std::string& word, bool trigrams) {
    if (!trigrams) return {word};
    std::string padded = "^" + word + "$";
    if (padded.size() <= 3) return {padded};
    std::vector<std::string> units;
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) units.push_back(padded.substr(i, 3));
    return units;
  }

  static StubVocab build(const std::vector<CorpusRecord>& train, bool trigrams) {
    StubVocab v;
    v.trigrams_ = trigrams;
    for (const auto& rec : train)
      for (const auto& tok : rec.words)
        for (const auto& unit : subword_units(tok.word, trigrams))
          if (!v.index_.count(unit)) {
            v.index_.emplace(unit, v.tokens_.size());
            v.tokens_.push_back(unit);
          }
    return v;
  }

  std::size_t size() const { return tokens_.size() + 1; }  // +1 for OOV
  bool trigrams() const { return trigrams_; }

  std::size_t id_of(const std::string& unit) const {
    auto it = index_.find(unit);
    return it == index_.end() ? 0 : it->second + 1;
  }

  std::pair<std::vector<std::size_t>, SubwordGrouping> encode(
      const std::vector<std::string>& words) const {
    std::vector<std::size_t> ids;
    SubwordGrouping grouping;
    for (const auto& w : words) {
      auto units = subword_units(w, trigrams_);
      grouping.spans.emplace_back(ids.size(), units.size());
      for (const auto& u : units) ids.push_back(id_of(u));
    }
    return {ids, grouping};
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"trigrams", trigrams_}, {"tokens", tokens_}};
  }

  static StubVocab from_json(const nlohmann::json& j) {
    StubVocab v;
    v.trigrams_ = j.at("trigrams").get<bool>();
    v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_.emplace(v.tokens_[i], i);
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
  bool trigrams_ = false;
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

inline void add_encoder_params(ParameterStore& store, const EncoderConfig& cfg, std::size_t d_w,
                               std::size_t d_ff, std::size_t vocab_size, Rng& rng) {
  store.add("enc.embed", Tensor::randn({vocab_size, d_w}, rng, 0.02), LrGroup::encoder);
  store.add("enc.pos", Tensor::randn({cfg.max_positions, d_w}, rng, 0.02), LrGroup::encoder);
  for (std::size_t l = 0; l < cfg.layers; ++l)
    SeqBlock::add_params(store, "enc.l" + std::to_string(l), d_w, d_ff, cfg.kappa, rng,
                         LrGroup::encoder);
  std::size_t d_p = cfg.pool_dim(d_w);
  double bound = std::sqrt(6.0 / double(d_p + d_w));
  Tensor w1({d_p, d_w});
  for (auto& x : w1.writable()) x = rng.uniform(-bound, bound);
  store.add("enc.pool.w1", std::move(w1), LrGroup::encoder);
  store.add("enc.pool.b1", Tensor::zeros({d_p}), LrGroup::encoder);
  Tensor w2({1, d_p});
  for (auto& x : w2.writable()) x = rng.normal(0.0, 0.1);
  store.add("enc.pool.w2", std::move(w2), LrGroup::encoder);
}

// ---------------------------------------------------------------------------
// Pooling and encoding
// ---------------------------------------------------------------------------

// Cluster-wide attentive pooling: a shallow feed-forward scorer projects each
// subword vector to a scalar, scores softmax within their group, and the
// group's vectors are summed under those weights.
inline Var attentive_pool(Tape& tape, ParameterStore& store, Var subwords,
                          const SubwordGrouping& grouping, double leaky_slope = 0.2) {
  grouping.validate(tape.val(subwords).shape()[0]);
  Var w1 = tape.param(store.get("enc.pool.w1"));
  Var b1 = tape.param(store.get("enc.pool.b1"));
  Var w2 = tape.param(store.get("enc.pool.w2"));
  Var hidden = leaky_relu(add_rowwise(matmul(subwords, transpose(w1)), b1), leaky_slope);
  Var scores = matmul(hidden, transpose(w2));  // (T, 1)
  auto seg = grouping.segment_ids();
  Var alpha = segment_softmax_cols(scores, seg);
  return segment_sum_rows(scale_blocks(subwords, alpha, 1), seg, grouping.spans.size());
}

// Trainable stand-in encoder: token + absolute position embeddings through L
// windowed self-attention blocks.
inline Var stub_encode(Tape& tape, ParameterStore& store, const EncoderConfig& cfg,
                       const std::vector<std::size_t>& ids, const DropoutCtx& drop = {}) {
  Var embed = tape.param(store.get("enc.embed"));
  Var pos = tape.param(store.get("enc.pos"));
  std::vector<std::size_t> pos_ids(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) pos_ids[i] = std::min(i, cfg.max_positions - 1);
  Var x = add(embedding_lookup(embed, ids), embedding_lookup(pos, pos_ids));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    SeqBlock blk = SeqBlock::bind(tape, store, "enc.l" + std::to_string(l));
    x = seq_feedback(tape, blk, x, cfg.h_seq, cfg.kappa, true, drop);
  }
  return x;
}

// Stub pipeline: tokenize, encode, pool. Rows equal the word count.
inline Var encode_words_stub(Tape& tape, ParameterStore& store, const EncoderConfig& cfg,
                             const StubVocab& vocab, const std::vector<std::string>& words,
                             const DropoutCtx& drop = {}) {
  auto [ids, grouping] = vocab.encode(words);
  Var sub = stub_encode(tape, store, cfg, ids, drop);
  return attentive_pool(tape, store, sub, grouping);
}

// ---------------------------------------------------------------------------
// External vectors: file and service ingestion
// ---------------------------------------------------------------------------

// One sentence's worth of externally produced subword vectors.
struct SentenceVectors {
  Tensor subwords;  // (n_subwords, d_w)
  SubwordGrouping grouping;
};

inline void save_vector_file(std::ostream& os, const std::vector<SentenceVectors>& sentences,
                             std::size_t d_w) {
  nlohmann::json manifest;
  manifest["kind"] = "vectors";
  manifest["dtype"] = "f64";
  manifest["d_w"] = d_w;
  nlohmann::json meta = nlohmann::json::array();
  for (const auto& s : sentences) {
    nlohmann::json spans = nlohmann::json::array();
    for (auto& [start, len] : s.grouping.spans) spans.push_back({start, len});
    meta.push_back({{"subwords", s.subwords.shape()[0]}, {"spans", spans}});
  }
  manifest["sentences"] = meta;
  blob::write_header(os, manifest);
  for (const auto& s : sentences) blob::write_array(os, s.subwords.vec(), false);
}

inline std::vector<SentenceVectors> load_vector_file(std::istream& is, std::size_t expect_d_w) {
  nlohmann::json manifest = blob::read_header(is);
  if (manifest.value("kind", "") != "vectors") throw SchemaError("container is not a vector file");
  std::size_t d_w = manifest.at("d_w").get<std::size_t>();
  if (d_w != expect_d_w) throw DimensionMismatch(expect_d_w, d_w);
  bool f32 = manifest.value("dtype", "f64") == "f32";
  std::vector<SentenceVectors> out;
  for (const auto& meta : manifest.at("sentences")) {
    SentenceVectors sv;
    std::size_t n = meta.at("subwords").get<std::size_t>();
    sv.subwords = Tensor({n, d_w}, blob::read_array(is, n * d_w, f32));
    for (const auto& span : meta.at("spans"))
      sv.grouping.spans.emplace_back(span[0].get<std::size_t>(), span[1].get<std::size_t>());
    sv.grouping.validate(n);
    out.push_back(std::move(sv));
  }
  return out;
}

inline std::vector<SentenceVectors> load_vector_file(const std::string& path,
                                                     std::size_t expect_d_w) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CorpusError("cannot read vector file: " + path);
  return load_vector_file(is, expect_d_w);
}

// Remote encoder protocol (client in hdcs/service_client.hpp): POST JSON
// {"sentences": [[word, ...], ...]}; the response carries per-subword vectors
// and word spans:
//   {"d_w": 8, "sentences": [{"vectors": [[...], ...], "spans": [[0,2], ...]}]}
inline std::vector<SentenceVectors> parse_service_response(const std::string& body,
                                                           std::size_t expect_d_w,
                                                           std::size_t expect_sentences) {
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("d_w") || !j.contains("sentences"))
    throw SchemaError("service response must be {\"d_w\": int, \"sentences\": [...]}");
  std::size_t d_w = j.at("d_w").get<std::size_t>();
  if (d_w != expect_d_w) throw DimensionMismatch(expect_d_w, d_w);
  if (j.at("sentences").size() != expect_sentences)
    throw SchemaError("service returned wrong sentence count");
  std::vector<SentenceVectors> out;
  for (const auto& sj : j.at("sentences")) {
    if (!sj.contains("vectors") || !sj.contains("spans"))
      throw SchemaError("sentence entry must carry vectors and spans");
    SentenceVectors sv;
    std::size_t n = sj.at("vectors").size();
    sv.subwords = Tensor({n, d_w});
    for (std::size_t r = 0; r < n; ++r) {
      const auto& row = sj.at("vectors")[r];
      if (row.size() != d_w) throw DimensionMismatch(d_w, row.size());
      for (std::size_t c = 0; c < d_w; ++c) sv.subwords.at(r, c) = row[c].get<double>();
    }
    for (const auto& span : sj.at("spans"))
      sv.grouping.spans.emplace_back(span[0].get<std::size_t>(), span[1].get<std::size_t>());
    sv.grouping.validate(n);
    out.push_back(std::move(sv));
  }
  return out;
}

// Pool pre-computed subword vectors into word states; the vectors are fixed
// inputs (no gradient past them), the pooling scorer still trains.
inline Var encode_words_external(Tape& tape, ParameterStore& store, const SentenceVectors& sv,
                                 std::size_t n_words) {
  if (sv.grouping.spans.size() != n_words)
    throw SchemaError("vector grouping covers " + std::to_string(sv.grouping.spans.size()) +
                      " words, sentence has " + std::to_string(n_words));
  Var sub = tape.leaf(sv.subwords);
  return attentive_pool(tape, store, sub, sv.grouping);
}

}  // namespace hdcs
