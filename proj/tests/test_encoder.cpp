#include <catch2/catch_amalgamated.hpp>

#include <sstream>
#include <thread>

#include "hdcs/encoder.hpp"
#include "hdcs/service_client.hpp"
#include "test_util.hpp"

using namespace hdcs;

namespace {

ParameterStore pooling_store(std::size_t d_w, std::uint64_t seed) {
  ParameterStore store;
  EncoderConfig cfg;
  cfg.layers = 0;
  Rng rng(seed, "init");
  add_encoder_params(store, cfg, d_w, 2 * d_w, 4, rng);
  return store;
}

}  // namespace

TEST_CASE("attentive pooling") {
  auto store = pooling_store(6, 1);
  SECTION("a singleton group returns its lone vector unchanged") {
    Tape tape(false);
    Rng rng(2);
    Tensor x = Tensor::randn({1, 6}, rng);
    Var pooled = attentive_pool(tape, store, tape.leaf(x), SubwordGrouping{{{0, 1}}});
    CHECK(testutil::max_abs_diff(tape.val(pooled), x) == 0.0);
  }
  SECTION("identical subword vectors pool to themselves") {
    Tape tape(false);
    Tensor x({2, 6});
    for (std::size_t c = 0; c < 6; ++c) x.at(0, c) = x.at(1, c) = 0.3 * double(c) - 1.0;
    Var pooled = attentive_pool(tape, store, tape.leaf(x), SubwordGrouping{{{0, 2}}});
    Tensor pv = tape.val(pooled);
    for (std::size_t c = 0; c < 6; ++c)
      CHECK(pv.get(0, c) == Catch::Approx(x.get(0, c)).epsilon(1e-12));
  }
  SECTION("pooling is equivariant to permuting whole groups") {
    Tape tape(false);
    Rng rng(3);
    Tensor x = Tensor::randn({5, 6}, rng);
    // groups: [0,2) and [2,5)
    Var a = attentive_pool(tape, store, tape.leaf(x), SubwordGrouping{{{0, 2}, {2, 3}}});
    Tensor swapped({5, 6});
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 6; ++c) swapped.at(r, c) = x.get(r + 2, c);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 6; ++c) swapped.at(r + 3, c) = x.get(r, c);
    Var b = attentive_pool(tape, store, tape.leaf(swapped), SubwordGrouping{{{0, 3}, {3, 2}}});
    Tensor av = tape.val(a), bv = tape.val(b);
    for (std::size_t c = 0; c < 6; ++c) {
      CHECK(av.get(0, c) == Catch::Approx(bv.get(1, c)).epsilon(1e-12));
      CHECK(av.get(1, c) == Catch::Approx(bv.get(0, c)).epsilon(1e-12));
    }
  }
  SECTION("spans must partition the sequence") {
    Tape tape(false);
    Rng rng(4);
    Var x = tape.leaf(Tensor::randn({3, 6}, rng));
    CHECK_THROWS_AS(attentive_pool(tape, store, x, SubwordGrouping{{{0, 1}, {2, 1}}}),
                    SchemaError);
    CHECK_THROWS_AS(attentive_pool(tape, store, x, SubwordGrouping{{{0, 3}, {3, 0}}}),
                    SchemaError);
  }
}

TEST_CASE("stub tokenizer produces trigram groups") {
  auto units = StubVocab::subword_units("this", true);
  CHECK(units == std::vector<std::string>{"^th", "thi", "his", "is$"});
  CHECK(StubVocab::subword_units("a", true) == std::vector<std::string>{"^a$"});
  CHECK(StubVocab::subword_units("word", false) == std::vector<std::string>{"word"});
}

TEST_CASE("stub vocabulary round-trips through json and buckets unknowns") {
  CorpusRecord rec;
  rec.units = {{"aa bb", "X"}, {"cc", "X"}};
  rec.words = {{"aa", CategoryTree::leaf(0), 0},
               {"bb", CategoryTree::leaf(0), 0},
               {"cc", CategoryTree::leaf(0), 1}};
  StubVocab v = StubVocab::build({rec}, false);
  CHECK(v.size() == 4);  // three tokens + OOV
  CHECK(v.id_of("aa") != 0);
  CHECK(v.id_of("zz") == 0);
  StubVocab v2 = StubVocab::from_json(v.to_json());
  CHECK(v2.id_of("cc") == v.id_of("cc"));
}

TEST_CASE("zero-layer stub encoding is embeddings plus positions") {
  EncoderConfig cfg;
  cfg.layers = 0;
  cfg.max_positions = 8;
  ParameterStore store;
  Rng rng(5, "init");
  add_encoder_params(store, cfg, 6, 12, 10, rng);
  // zero the position table so repeated tokens give equal rows
  for (auto& x : store.get("enc.pos").value.writable()) x = 0.0;
  Tape tape(false);
  Var x = stub_encode(tape, store, cfg, {3, 3, 4});
  Tensor xv = tape.val(x);
  CHECK(xv.shape() == std::vector<std::size_t>{3, 6});
  for (std::size_t c = 0; c < 6; ++c) CHECK(xv.get(0, c) == xv.get(1, c));
}

TEST_CASE("vector files round-trip stub output bit-exactly") {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.kappa = 2;
  cfg.h_seq = 2;
  cfg.max_positions = 16;
  ParameterStore store;
  Rng rng(6, "init");
  const std::size_t d_w = 8;
  add_encoder_params(store, cfg, d_w, 16, 20, rng);

  std::vector<std::string> words{"one", "two", "three"};
  StubVocab vocab;
  {
    CorpusRecord rec;
    rec.units = {{"one two three", "X"}};
    rec.words = {{"one", CategoryTree::leaf(0), 0},
                 {"two", CategoryTree::leaf(0), 0},
                 {"three", CategoryTree::leaf(0), 0}};
    vocab = StubVocab::build({rec}, true);
  }

  auto [ids, grouping] = vocab.encode(words);
  std::vector<double> direct_h0;
  SentenceVectors sv;
  {
    Tape tape(false);
    Var sub = stub_encode(tape, store, cfg, ids);
    sv.subwords = tape.val(sub);
    sv.grouping = grouping;
    direct_h0 = tape.val(attentive_pool(tape, store, sub, grouping)).vec();
  }
  std::stringstream buf;
  save_vector_file(buf, {sv}, d_w);
  auto loaded = load_vector_file(buf, d_w);
  REQUIRE(loaded.size() == 1);
  Tape tape(false);
  Var h0 = encode_words_external(tape, store, loaded[0], words.size());
  CHECK(tape.val(h0).vec() == direct_h0);
}

TEST_CASE("vector files reject a mismatched width") {
  SentenceVectors sv;
  sv.subwords = Tensor({2, 4});
  sv.grouping.spans = {{0, 2}};
  std::stringstream buf;
  save_vector_file(buf, {sv}, 4);
  try {
    load_vector_file(buf, 8);
    FAIL("expected DimensionMismatch");
  } catch (const DimensionMismatch& e) {
    CHECK(e.expected == 8);
    CHECK(e.actual == 4);
  }
}

TEST_CASE("service responses are schema-checked") {
  SECTION("wrong dimension names expected and actual") {
    std::string body = R"({"d_w": 4, "sentences": [{"vectors": [[1,2,3,4]], "spans": [[0,1]]}]})";
    try {
      parse_service_response(body, 8, 1);
      FAIL("expected DimensionMismatch");
    } catch (const DimensionMismatch& e) {
      CHECK(e.expected == 8);
      CHECK(e.actual == 4);
      CHECK(std::string(e.what()).find("expected 8") != std::string::npos);
      CHECK(std::string(e.what()).find("got 4") != std::string::npos);
    }
  }
  SECTION("malformed payloads raise SchemaError") {
    CHECK_THROWS_AS(parse_service_response("not json", 8, 1), SchemaError);
    CHECK_THROWS_AS(parse_service_response(R"({"d_w": 8})", 8, 1), SchemaError);
    CHECK_THROWS_AS(
        parse_service_response(R"({"d_w": 8, "sentences": [{"vectors": []}]})", 8, 1),
        SchemaError);
  }
}

TEST_CASE("vectors can be fetched from a live encoder service") {
  const std::size_t d_w = 4;
  httplib::Server srv;
  srv.Post("/encode", [&](const httplib::Request& req, httplib::Response& res) {
    auto j = nlohmann::json::parse(req.body);
    nlohmann::json sentences = nlohmann::json::array();
    for (const auto& sent : j.at("sentences")) {
      nlohmann::json vectors = nlohmann::json::array();
      nlohmann::json spans = nlohmann::json::array();
      std::size_t start = 0;
      for (const auto& word : sent) {
        std::string w = word.get<std::string>();
        vectors.push_back({double(w.size()), 1.0, 0.0, -1.0});
        spans.push_back({start, 1});
        start += 1;
      }
      sentences.push_back({{"vectors", vectors}, {"spans", spans}});
    }
    res.set_content(nlohmann::json{{"d_w", d_w}, {"sentences", sentences}}.dump(),
                    "application/json");
  });
  int port = srv.bind_to_any_port("127.0.0.1");
  std::thread server([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  auto got = fetch_vectors_http("http://127.0.0.1:" + std::to_string(port) + "/encode",
                                {{"hi", "there"}}, d_w);
  REQUIRE(got.size() == 1);
  CHECK(got[0].subwords.shape() == std::vector<std::size_t>{2, 4});
  CHECK(got[0].subwords.get(0, 0) == 2.0);
  CHECK(got[0].subwords.get(1, 0) == 5.0);

  srv.stop();
  server.join();

  CHECK_THROWS_AS(fetch_vectors_http("http://127.0.0.1:1/encode", {{"x"}}, d_w, 2, 1),
                  TransportError);
}

TEST_CASE("external vectors demand a grouping that matches the sentence") {
  auto store = pooling_store(6, 9);
  SentenceVectors sv;
  Rng rng(10);
  sv.subwords = Tensor::randn({3, 6}, rng);
  sv.grouping.spans = {{0, 2}, {2, 1}};
  Tape tape(false);
  CHECK_NOTHROW(encode_words_external(tape, store, sv, 2));
  CHECK_THROWS_AS(encode_words_external(tape, store, sv, 3), SchemaError);
}
