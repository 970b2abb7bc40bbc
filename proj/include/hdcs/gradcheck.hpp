#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hdcs/rng.hpp"
#include "hdcs/tape.hpp"
#include "hdcs/tensor.hpp"

namespace hdcs {

struct GradCheckResult {
  std::string op;
  double max_rel_err = 0.0;
  bool pass = false;
};

namespace gradcheck_detail {

// A scenario owns its inputs and rebuilds the forward pass on demand, so the
// numeric side can perturb elements and rerun.
struct Scenario {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Var(Tape&, const std::vector<Var>&)> build;
};

// |analytic - numeric| relative to the larger magnitude, floored at 1 so
// near-zero gradients are compared absolutely.
inline double rel_err(double a, double n) {
  double denom = std::max({std::fabs(a), std::fabs(n), 1.0});
  return std::fabs(a - n) / denom;
}

inline double eval_loss(const Scenario& sc, const std::vector<Tensor>& inputs) {
  Tape tape(false);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) vars.push_back(tape.leaf(in));
  return tape.val(sc.build(tape, vars)).item();
}

inline GradCheckResult check(const Scenario& sc, double tol, double h = 1e-5) {
  GradCheckResult res;
  res.op = sc.name;
  Tape tape(true);
  std::vector<Var> vars;
  for (const auto& in : sc.inputs) vars.push_back(tape.leaf(in.clone(), true));
  Var loss = sc.build(tape, vars);
  tape.backward(loss);
  for (std::size_t i = 0; i < sc.inputs.size(); ++i) {
    const Tensor& analytic = tape.grad(vars[i]);
    for (std::size_t e = 0; e < sc.inputs[i].numel(); ++e) {
      std::vector<Tensor> plus, minus;
      for (std::size_t k = 0; k < sc.inputs.size(); ++k) {
        plus.push_back(sc.inputs[k].clone());
        minus.push_back(sc.inputs[k].clone());
      }
      plus[i].at(e) += h;
      minus[i].at(e) -= h;
      double numeric = (eval_loss(sc, plus) - eval_loss(sc, minus)) / (2.0 * h);
      res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[e], numeric));
    }
  }
  res.pass = res.max_rel_err <= tol;
  return res;
}

// Weighted sum of an op's output, so every output element feeds the loss.
inline Var weighted_sum(Tape& t, Var out, std::uint64_t seed) {
  const Tensor& v = t.val(out);
  Rng rng(seed, "gradcheck-weights");
  Tensor w(v.shape());
  for (auto& x : w.writable()) x = rng.uniform(-1.0, 1.0);
  return reduce_sum(mul(out, t.leaf(w)));
}

}  // namespace gradcheck_detail

// Finite-difference checks for every primitive op, on small random inputs.
// Returns one row per op with its max relative error against central
// differences at h = 1e-5.
inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double tol = 1e-6) {
  using gradcheck_detail::Scenario;
  using gradcheck_detail::weighted_sum;
  Rng rng(seed, "gradcheck-inputs");
  auto randt = [&](std::vector<std::size_t> shape) { return Tensor::randn(shape, rng); };
  auto positive = [&](std::vector<std::size_t> shape) {
    Tensor t = Tensor::randn(shape, rng);
    for (auto& x : t.writable()) x = std::fabs(x) + 0.5;
    return t;
  };

  std::vector<Scenario> scenarios;
  auto add_sc = [&](std::string name, std::vector<Tensor> inputs,
                    std::function<Var(Tape&, const std::vector<Var>&)> fn) {
    scenarios.push_back(Scenario{std::move(name), std::move(inputs), std::move(fn)});
  };

  add_sc("add", {randt({5, 4}), randt({5, 4})},
         [seed](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, add(v[0], v[1]), seed); });
  add_sc("sub", {randt({5, 4}), randt({5, 4})},
         [seed](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, sub(v[0], v[1]), seed); });
  add_sc("mul", {randt({5, 4}), randt({5, 4})},
         [seed](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, mul(v[0], v[1]), seed); });
  add_sc("scalar_mul", {randt({5, 4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, scalar_mul(v[0], -1.7), seed);
  });
  add_sc("matmul", {randt({5, 4}), randt({4, 3})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, matmul(v[0], v[1]), seed);
  });
  add_sc("matvec", {randt({5, 4}), randt({4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, matvec(v[0], v[1]), seed);
  });
  add_sc("transpose", {randt({5, 4})},
         [seed](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, transpose(v[0]), seed); });
  add_sc("mul_rowwise", {randt({5, 4}), randt({4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, mul_rowwise(v[0], v[1]), seed);
  });
  add_sc("add_rowwise", {randt({5, 4}), randt({4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, add_rowwise(v[0], v[1]), seed);
  });
  add_sc("leaky_relu", {randt({5, 4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, leaky_relu(v[0], 0.2), seed);
  });
  add_sc("swish", {randt({5, 4})},
         [seed](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, swish(v[0]), seed); });
  add_sc("exp", {randt({5, 4})},
         [seed](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, exp_(v[0]), seed); });
  add_sc("log", {positive({5, 4})},
         [seed](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, log_(v[0]), seed); });
  add_sc("softmax", {randt({5, 4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, softmax_rows(v[0]), seed);
  });
  add_sc("rms_norm", {randt({5, 4}), positive({4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, rms_norm_rows(v[0], v[1]), seed);
  });
  add_sc("embedding_lookup", {randt({6, 4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, embedding_lookup(v[0], {3, 0, 3, 5, 1}), seed);
  });
  add_sc("concat", {randt({2, 4}), randt({4}), randt({3, 4})},
         [seed](Tape& t, const std::vector<Var>& v) {
           return weighted_sum(t, concat_rows({v[0], v[1], v[2]}), seed);
         });
  add_sc("slice_rows", {randt({5, 4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, slice_rows(v[0], 1, 4), seed);
  });
  add_sc("slice_cols", {randt({5, 4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, slice_cols(v[0], 1, 3), seed);
  });
  add_sc("gather_rows_pair", {randt({3, 4}), randt({2, 4})},
         [seed](Tape& t, const std::vector<Var>& v) {
           std::vector<std::pair<int, std::size_t>> sel{{0, 1}, {1, 0}, {0, 2}, {1, 1}, {0, 1}};
           return weighted_sum(t, gather_rows_pair(v[0], v[1], sel), seed);
         });
  add_sc("overwrite_rows", {randt({5, 4}), randt({2, 4})},
         [seed](Tape& t, const std::vector<Var>& v) {
           return weighted_sum(t, overwrite_rows(v[0], {1, 3}, v[1]), seed);
         });
  add_sc("reduce_sum", {randt({5, 4})},
         [](Tape&, const std::vector<Var>& v) { return reduce_sum(v[0]); });
  add_sc("reduce_mean", {randt({5, 4})},
         [](Tape&, const std::vector<Var>& v) { return reduce_mean(v[0]); });
  add_sc("rowwise_sum", {randt({5, 4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, rowwise_sum(v[0]), seed);
  });
  add_sc("rowwise_block_sum", {randt({5, 4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, rowwise_block_sum(v[0], 2), seed);
  });
  add_sc("segment_softmax", {randt({6, 2})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, segment_softmax_cols(v[0], {0, 0, 0, 1, 2, 2}), seed);
  });
  add_sc("scale_blocks", {randt({5, 4}), randt({5, 2})},
         [seed](Tape& t, const std::vector<Var>& v) {
           return weighted_sum(t, scale_blocks(v[0], v[1], 2), seed);
         });
  add_sc("segment_sum", {randt({6, 4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, segment_sum_rows(v[0], {0, 0, 1, 1, 1, 3}, 4), seed);
  });
  add_sc("dropout", {randt({5, 4})}, [seed](Tape& t, const std::vector<Var>& v) {
    Rng mask_rng(seed, "gradcheck-dropout");
    return weighted_sum(t, dropout(v[0], 0.3, mask_rng), seed);
  });
  add_sc("label_smoothed_nll", {randt({5, 4})}, [](Tape&, const std::vector<Var>& v) {
    return label_smoothed_nll(v[0], {1, 0, 3, 2, 2}, 0.1);
  });
  add_sc("orthogonal_from_skew", {randt({4, 4})}, [seed](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, orthogonal_from_skew(v[0]), seed);
  });

  std::vector<GradCheckResult> results;
  results.reserve(scenarios.size());
  for (const auto& sc : scenarios) results.push_back(gradcheck_detail::check(sc, tol));
  return results;
}

}  // namespace hdcs
