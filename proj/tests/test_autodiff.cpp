#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hdcs/gradcheck.hpp"
#include "hdcs/tape.hpp"
#include "hdcs/tensor.hpp"
#include "test_util.hpp"

using namespace hdcs;

TEST_CASE("softmax of a single element is 1") {
  Tape t;
  Var x = t.leaf(Tensor({1}, {3.7}));
  CHECK(t.val(softmax_rows(x))[0] == 1.0);
}

TEST_CASE("softmax rows sum to 1") {
  Rng rng(7);
  Tape t;
  Var x = t.leaf(Tensor::randn({6, 9}, rng, 3.0));
  const Tensor& p = t.val(softmax_rows(x));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) s += p.get(r, c);
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("rms_norm of a constant vector gives its sign under unit gain") {
  Tape t;
  Var gain = t.leaf(Tensor::full({4}, 1.0));
  Var pos = rms_norm_rows(t.leaf(Tensor::full({4}, 2.5)), gain);
  Var neg = rms_norm_rows(t.leaf(Tensor::full({4}, -0.3)), gain);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(t.val(pos)[i] == Catch::Approx(1.0).margin(1e-9));
    CHECK(t.val(neg)[i] == Catch::Approx(-1.0).margin(1e-9));
  }
}

TEST_CASE("label-smoothed NLL analytic values") {
  SECTION("near-certain correct logits with eps 0 give near-zero loss") {
    Tape t;
    Var logits = t.leaf(Tensor({2, 3}, {30.0, 0.0, 0.0, 0.0, 30.0, 0.0}));
    CHECK(t.val(label_smoothed_nll(logits, {0, 1}, 0.0)).item() < 1e-9);
  }
  SECTION("uniform logits give ln C for any eps") {
    Tape t;
    Var logits = t.leaf(Tensor::zeros({4, 7}));
    CHECK(t.val(label_smoothed_nll(logits, {0, 1, 2, 3}, 0.0)).item() ==
          Catch::Approx(std::log(7.0)).epsilon(1e-12));
    CHECK(t.val(label_smoothed_nll(logits, {0, 1, 2, 3}, 0.3)).item() ==
          Catch::Approx(std::log(7.0)).epsilon(1e-12));
  }
}

TEST_CASE("shape errors carry the op name and shapes") {
  Tape t;
  Var a = t.leaf(Tensor::zeros({2, 3}));
  Var b = t.leaf(Tensor::zeros({2, 2}));
  try {
    add(a, b);
    FAIL("expected ShapeMismatch");
  } catch (const ShapeMismatch& e) {
    std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("(2,3)") != std::string::npos);
  }
}

TEST_CASE("finite-difference check passes for every primitive op") {
  auto results = run_gradcheck_suite(1234, 1e-6);
  for (const auto& r : results) {
    INFO(r.op << " max rel err " << r.max_rel_err);
    CHECK(r.pass);
  }
}

TEST_CASE("matrix exponential of zero is the identity") {
  Tape t;
  Var p = orthogonal_from_skew(t.leaf(Tensor::zeros({5, 5})));
  CHECK(testutil::max_abs_diff(t.val(p), eye(5)) == 0.0);
}

TEST_CASE("orthogonal_from_skew produces special-orthogonal matrices") {
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    Tape t;
    Var p = orthogonal_from_skew(t.leaf(Tensor::randn({16, 16}, rng)));
    CHECK(testutil::orthogonality_defect(t.val(p)) < 1e-8);
    CHECK(std::fabs(testutil::determinant(t.val(p)) - 1.0) < 1e-6);
  }
}

TEST_CASE("dropout") {
  SECTION("p = 0 is the identity") {
    Tape t;
    Rng rng(1);
    Var x = t.leaf(Tensor::full({3, 3}, 2.0));
    Var y = dropout(x, 0.0, rng);
    CHECK(y.idx == x.idx);
  }
  SECTION("empirical drop rate is p within 0.01 over 1e5 elements") {
    Tape t;
    Rng rng(99, "dropout");
    Var x = t.leaf(Tensor::full({100000}, 1.0));
    const Tensor& y = t.val(dropout(x, 0.2, rng));
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) {
      if (y[i] == 0.0)
        ++dropped;
      else
        CHECK(y[i] == Catch::Approx(1.0 / 0.8).epsilon(1e-12));
    }
    double rate = double(dropped) / double(y.numel());
    CHECK(rate > 0.19);
    CHECK(rate < 0.21);
  }
}

TEST_CASE("backward accumulates into bound parameters and flushes on demand") {
  ParameterStore store;
  store.add("w", Tensor({2}, {1.0, 2.0}));
  Tape t;
  Var w = t.param(store.get("w"));
  Var loss = reduce_sum(mul(w, w));
  t.backward(loss);
  CHECK(store.get("w").grad[0] == Catch::Approx(2.0));
  CHECK(store.get("w").grad[1] == Catch::Approx(4.0));
}
