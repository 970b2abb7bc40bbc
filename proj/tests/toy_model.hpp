#pragma once

// Tiny two-word model used by the end-to-end gradient checks and the
// acceptance suite: stub encoder into the depth-recurrent decoder, with one
// depth-2 gold tree and one atom.

#include <string>
#include <vector>

#include "hdcs/decoder.hpp"
#include "hdcs/encoder.hpp"
#include "hdcs/formalism.hpp"
#include "hdcs/treebank.hpp"

namespace toy {

struct ToyProblem {
  hdcs::SymbolTable table;
  hdcs::ParameterStore store;
  hdcs::DecodeConfig cfg;
  hdcs::EncoderConfig enc;
  hdcs::StubVocab vocab;
  std::vector<std::string> words{"alpha", "beta"};
  std::vector<hdcs::CategoryTree> gold;

  explicit ToyProblem(std::uint64_t seed) {
    using namespace hdcs;
    cfg.d_n = 4;
    cfg.d_w = 8;
    cfg.h_het = 2;
    cfg.h_seq = 2;
    cfg.kappa = 2;
    cfg.d_ff = 16;
    cfg.max_depth = 8;
    enc.layers = 1;
    enc.kappa = 2;
    enc.h_seq = 2;
    enc.max_positions = 4;
    gold.push_back(parse_category("(A\\B)/C", Formalism::ccg, table));
    gold.push_back(parse_category("A", Formalism::ccg, table));

    CorpusRecord rec;
    rec.units = {{"alpha", "A"}, {"beta", "A"}};
    expand_words(rec, {gold[1], gold[1]});
    vocab = StubVocab::build({rec}, false);

    Rng rng(seed, "init");
    add_decoder_params(store, cfg, table.size(), rng);
    add_encoder_params(store, enc, cfg.d_w, cfg.ffn_dim(), vocab.size(), rng);
  }

  // Teacher-forced loss; gradients accumulate into the store when recording.
  double loss(bool record) {
    using namespace hdcs;
    Tape tape(record);
    Var h0 = encode_words_stub(tape, store, enc, vocab, words);
    DecodeOutput out = decode_canvas(tape, store, table, cfg, h0, &gold,
                                     DecodeMode::teacher_forced);
    Var l = label_smoothed_nll(out.logits, out.targets, 0.1);
    if (record) tape.backward(l);
    return tape.val(l).item();
  }
};

struct E2eGradReport {
  double max_rel_err = 0.0;
  std::string worst_param;
};

// Central finite differences over every parameter element (strided when the
// tensor is large) against the analytic gradient of the teacher-forced loss.
inline E2eGradReport e2e_gradcheck(std::uint64_t seed, double h = 1e-5) {
  ToyProblem toy(seed);
  toy.store.zero_grads();
  toy.loss(true);
  E2eGradReport report;
  for (const auto& name : toy.store.names()) {
    hdcs::Parameter& p = toy.store.get(name);
    std::vector<double> analytic = p.grad.vec();
    std::size_t stride = p.value.numel() > 256 ? 7 : 1;
    for (std::size_t e = 0; e < p.value.numel(); e += stride) {
      double orig = p.value[e];
      p.value.at(e) = orig + h;
      double up = toy.loss(false);
      p.value.at(e) = orig - h;
      double down = toy.loss(false);
      p.value.at(e) = orig;
      double numeric = (up - down) / (2.0 * h);
      double denom = std::max({std::fabs(numeric), std::fabs(analytic[e]), 1.0});
      double err = std::fabs(numeric - analytic[e]) / denom;
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_param = name;
      }
    }
  }
  return report;
}

}  // namespace toy
