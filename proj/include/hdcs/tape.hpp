#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hdcs/errors.hpp"
#include "hdcs/params.hpp"
#include "hdcs/rng.hpp"
#include "hdcs/tensor.hpp"

namespace hdcs {

class Tape;

// Handle into a tape node. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t idx = 0;
  bool valid() const { return tape != nullptr; }
};

// Reverse-mode computation graph. Nodes are appended in topological order
// during the forward pass; backward() sweeps them in reverse, accumulating
// gradients in a fixed order so repeated runs are bit-identical.
//
// One tape per training step (or per decoded batch); inference disables
// recording to skip closure bookkeeping.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var leaf(Tensor value, bool needs_grad = false) {
    nodes_.push_back(Node{std::move(value), Tensor(), recording_ && needs_grad, nullptr, nullptr});
    return Var{this, std::uint32_t(nodes_.size() - 1)};
  }

  // Leaf sharing the parameter's storage; after backward() the accumulated
  // gradient is flushed into the parameter's grad buffer.
  Var param(Parameter& p) {
    nodes_.push_back(Node{p.value, Tensor(), recording_ && p.trainable, nullptr, &p});
    return Var{this, std::uint32_t(nodes_.size() - 1)};
  }

  Var make(Tensor value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Tensor(), recording_ && needs_grad, nullptr, nullptr});
    return Var{this, std::uint32_t(nodes_.size() - 1)};
  }

  void set_back(std::uint32_t idx, std::function<void()> fn) {
    if (nodes_[idx].needs_grad) nodes_[idx].back = std::move(fn);
  }

  // By value: node storage reallocates as the graph grows, so references into
  // it must not outlive the next op. Tensor copies share their buffer.
  Tensor val(Var v) const { return nodes_[v.idx].value; }
  std::size_t size() const { return nodes_.size(); }

  bool wants(std::uint32_t idx) const { return nodes_[idx].needs_grad; }
  bool wants(Var v) const { return wants(v.idx); }

  Tensor& grad_buf(std::uint32_t idx) {
    Node& n = nodes_[idx];
    if (n.grad.numel() == 0 && n.value.numel() != 0) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
  }
  Tensor grad(Var v) { return grad_buf(v.idx); }

  // Reverse sweep from a scalar loss; flushes parameter gradients.
  void backward(Var loss) {
    if (loss.tape != this) throw ShapeMismatch("backward: var from another tape");
    if (val(loss).numel() != 1) throw ShapeMismatch("backward: loss must be scalar");
    grad_buf(loss.idx).writable()[0] += 1.0;
    for (std::uint32_t i = loss.idx + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.back && n.grad.numel() != 0) n.back();
    }
    for (auto& n : nodes_) {
      if (n.bound && n.needs_grad && n.grad.numel() != 0) {
        auto& dst = n.bound->grad.writable();
        const auto& src = n.grad.vec();
        for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void()> back;
    Parameter* bound = nullptr;
  };
  std::vector<Node> nodes_;
  bool recording_;
};

namespace detail {

inline void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw ShapeMismatch(std::string(op) + ": " + what);
}

inline std::string shapes2(const Tensor& a, const Tensor& b) {
  return a.shape_str() + " vs " + b.shape_str();
}

// Rank-1 tensors act as a single row where a matrix is expected.
inline std::size_t row_count(const Tensor& t) { return t.rank() <= 1 ? 1 : t.shape()[0]; }
inline std::size_t col_count(const Tensor& t) {
  return t.rank() == 0 ? 1 : t.shape()[t.rank() - 1];
}

}  // namespace detail

inline Tensor eye(std::size_t d) {
  Tensor t({d, d});
  for (std::size_t i = 0; i < d; ++i) t.at(i, i) = 1.0;
  return t;
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor &av = t.val(a), &bv = t.val(b);
  detail::require(av.same_shape(bv), "add", detail::shapes2(av, bv));
  Tensor out(av.shape());
  auto& o = out.writable();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  Var r = t.make(std::move(out), t.wants(a) || t.wants(b));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, bi = b.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, bi, ri] {
    const Tensor& g = tp->grad_buf(ri);
    if (tp->wants(ai)) {
      auto& ga = tp->grad_buf(ai).writable();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (tp->wants(bi)) {
      auto& gb = tp->grad_buf(bi).writable();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i];
    }
  });
  return r;
}

inline Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor &av = t.val(a), &bv = t.val(b);
  detail::require(av.same_shape(bv), "sub", detail::shapes2(av, bv));
  Tensor out(av.shape());
  auto& o = out.writable();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
  Var r = t.make(std::move(out), t.wants(a) || t.wants(b));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, bi = b.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, bi, ri] {
    const Tensor& g = tp->grad_buf(ri);
    if (tp->wants(ai)) {
      auto& ga = tp->grad_buf(ai).writable();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (tp->wants(bi)) {
      auto& gb = tp->grad_buf(bi).writable();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
  return r;
}

inline Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor &av = t.val(a), &bv = t.val(b);
  detail::require(av.same_shape(bv), "mul", detail::shapes2(av, bv));
  Tensor out(av.shape());
  auto& o = out.writable();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  Var r = t.make(std::move(out), t.wants(a) || t.wants(b));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, bi = b.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, bi, ri] {
    const Tensor& g = tp->grad_buf(ri);
    const Tensor &av = tp->val(Var{tp, ai}), &bv = tp->val(Var{tp, bi});
    if (tp->wants(ai)) {
      auto& ga = tp->grad_buf(ai).writable();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp->wants(bi)) {
      auto& gb = tp->grad_buf(bi).writable();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
  return r;
}

inline Var scalar_mul(Var a, double c) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  Tensor out(av.shape());
  auto& o = out.writable();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * c;
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri, c] {
    const Tensor& g = tp->grad_buf(ri);
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * c;
  });
  return r;
}

inline Var leaky_relu(Var a, double slope = 0.2) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  Tensor out(av.shape());
  auto& o = out.writable();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] > 0.0 ? av[i] : slope * av[i];
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri, slope] {
    const Tensor& g = tp->grad_buf(ri);
    const Tensor& av = tp->val(Var{tp, ai});
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * (av[i] > 0.0 ? 1.0 : slope);
  });
  return r;
}

// swish_1(x) = x * sigmoid(x)
inline Var swish(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  Tensor out(av.shape());
  auto& o = out.writable();
  for (std::size_t i = 0; i < o.size(); ++i) {
    double s = 1.0 / (1.0 + std::exp(-av[i]));
    o[i] = av[i] * s;
  }
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri] {
    const Tensor& g = tp->grad_buf(ri);
    const Tensor& av = tp->val(Var{tp, ai});
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-av[i]));
      ga[i] += g[i] * s * (1.0 + av[i] * (1.0 - s));
    }
  });
  return r;
}

inline Var exp_(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  Tensor out(av.shape());
  auto& o = out.writable();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(av[i]);
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri] {
    const Tensor& g = tp->grad_buf(ri);
    const Tensor& ov = tp->val(Var{tp, ri});
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * ov[i];
  });
  return r;
}

inline Var log_(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  Tensor out(av.shape());
  auto& o = out.writable();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::log(av[i]);
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri] {
    const Tensor& g = tp->grad_buf(ri);
    const Tensor& av = tp->val(Var{tp, ai});
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] / av[i];
  });
  return r;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor &av = t.val(a), &bv = t.val(b);
  detail::require(av.rank() == 2 && bv.rank() == 2 && av.shape()[1] == bv.shape()[0], "matmul",
                  detail::shapes2(av, bv));
  std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  Tensor out({m, n});
  auto& o = out.writable();
  const double *A = av.data(), *B = bv.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      double* orow = o.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  Var r = t.make(std::move(out), t.wants(a) || t.wants(b));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, bi = b.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, bi, ri, m, k, n] {
    const Tensor& g = tp->grad_buf(ri);
    const Tensor &av = tp->val(Var{tp, ai}), &bv = tp->val(Var{tp, bi});
    const double *G = g.data(), *A = av.data(), *B = bv.data();
    if (tp->wants(ai)) {
      auto& ga = tp->grad_buf(ai).writable();
      // ga += g * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double *grow = G + i * n, *brow = B + p * n;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          ga[i * k + p] += s;
        }
    }
    if (tp->wants(bi)) {
      auto& gb = tp->grad_buf(bi).writable();
      // gb += A^T * g
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i) {
          double aip = A[i * k + p];
          if (aip == 0.0) continue;
          const double* grow = G + i * n;
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
    }
  });
  return r;
}

inline Var matvec(Var a, Var x) {
  Tape& t = *a.tape;
  const Tensor &av = t.val(a), &xv = t.val(x);
  detail::require(av.rank() == 2 && xv.rank() == 1 && av.shape()[1] == xv.shape()[0], "matvec",
                  detail::shapes2(av, xv));
  std::size_t m = av.shape()[0], k = av.shape()[1];
  Tensor out({m});
  auto& o = out.writable();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += av[i * k + p] * xv[p];
    o[i] = s;
  }
  Var r = t.make(std::move(out), t.wants(a) || t.wants(x));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, xi = x.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, xi, ri, m, k] {
    const Tensor& g = tp->grad_buf(ri);
    const Tensor &av = tp->val(Var{tp, ai}), &xv = tp->val(Var{tp, xi});
    if (tp->wants(ai)) {
      auto& ga = tp->grad_buf(ai).writable();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += g[i] * xv[p];
    }
    if (tp->wants(xi)) {
      auto& gx = tp->grad_buf(xi).writable();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) gx[p] += g[i] * av[i * k + p];
    }
  });
  return r;
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  detail::require(av.rank() == 2, "transpose", "rank-2 required, got " + av.shape_str());
  std::size_t m = av.shape()[0], n = av.shape()[1];
  Tensor out({n, m});
  auto& o = out.writable();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[j * m + i] = av[i * n + j];
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri, m, n] {
    const Tensor& g = tp->grad_buf(ri);
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
  return r;
}

// Each row of a multiplied elementwise by v.
inline Var mul_rowwise(Var a, Var v) {
  Tape& t = *a.tape;
  const Tensor &av = t.val(a), &vv = t.val(v);
  detail::require(av.rank() == 2 && vv.rank() == 1 && av.shape()[1] == vv.shape()[0],
                  "mul_rowwise", detail::shapes2(av, vv));
  std::size_t m = av.shape()[0], n = av.shape()[1];
  Tensor out({m, n});
  auto& o = out.writable();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = av[i * n + j] * vv[j];
  Var r = t.make(std::move(out), t.wants(a) || t.wants(v));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, vi = v.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, vi, ri, m, n] {
    const Tensor& g = tp->grad_buf(ri);
    const Tensor &av = tp->val(Var{tp, ai}), &vv = tp->val(Var{tp, vi});
    if (tp->wants(ai)) {
      auto& ga = tp->grad_buf(ai).writable();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] * vv[j];
    }
    if (tp->wants(vi)) {
      auto& gv = tp->grad_buf(vi).writable();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j] * av[i * n + j];
    }
  });
  return r;
}

// v added to each row of a.
inline Var add_rowwise(Var a, Var v) {
  Tape& t = *a.tape;
  const Tensor &av = t.val(a), &vv = t.val(v);
  detail::require(av.rank() == 2 && vv.rank() == 1 && av.shape()[1] == vv.shape()[0],
                  "add_rowwise", detail::shapes2(av, vv));
  std::size_t m = av.shape()[0], n = av.shape()[1];
  Tensor out({m, n});
  auto& o = out.writable();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = av[i * n + j] + vv[j];
  Var r = t.make(std::move(out), t.wants(a) || t.wants(v));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, vi = v.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, vi, ri, m, n] {
    const Tensor& g = tp->grad_buf(ri);
    if (tp->wants(ai)) {
      auto& ga = tp->grad_buf(ai).writable();
      for (std::size_t i = 0; i < m * n; ++i) ga[i] += g[i];
    }
    if (tp->wants(vi)) {
      auto& gv = tp->grad_buf(vi).writable();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
    }
  });
  return r;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Stable softmax along the last axis (rank-1: the whole vector is one row).
inline Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  detail::require(av.rank() >= 1 && av.rank() <= 2, "softmax", "rank-1/2 required");
  std::size_t m = detail::row_count(av), n = detail::col_count(av);
  Tensor out(av.shape());
  auto& o = out.writable();
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = av.data() + i * n;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[i * n + j] = std::exp(x[j] - mx);
      z += o[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] /= z;
  }
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri, m, n] {
    const Tensor& g = tp->grad_buf(ri);
    const Tensor& p = tp->val(Var{tp, ri});
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * p[i * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += p[i * n + j] * (g[i * n + j] - dot);
    }
  });
  return r;
}

// RMS normalization along the last axis with a learned gain.
inline Var rms_norm_rows(Var a, Var gain, double eps = 1e-12) {
  Tape& t = *a.tape;
  const Tensor &av = t.val(a), &gv = t.val(gain);
  detail::require(gv.rank() == 1 && detail::col_count(av) == gv.shape()[0], "rms_norm",
                  detail::shapes2(av, gv));
  std::size_t m = detail::row_count(av), n = detail::col_count(av);
  Tensor out(av.shape());
  auto& o = out.writable();
  for (std::size_t i = 0; i < m; ++i) {
    double ms = 0.0;
    for (std::size_t j = 0; j < n; ++j) ms += av[i * n + j] * av[i * n + j];
    double rinv = 1.0 / std::sqrt(ms / double(n) + eps);
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = gv[j] * av[i * n + j] * rinv;
  }
  Var r = t.make(std::move(out), t.wants(a) || t.wants(gain));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, gi = gain.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, gi, ri, m, n, eps] {
    const Tensor& g = tp->grad_buf(ri);
    const Tensor &av = tp->val(Var{tp, ai}), &gv = tp->val(Var{tp, gi});
    for (std::size_t i = 0; i < m; ++i) {
      double ms = 0.0;
      for (std::size_t j = 0; j < n; ++j) ms += av[i * n + j] * av[i * n + j];
      double r2 = ms / double(n) + eps;
      double rinv = 1.0 / std::sqrt(r2);
      if (tp->wants(ai)) {
        double dot = 0.0;  // sum_j u_j * gain_j * x_j
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * gv[j] * av[i * n + j];
        auto& ga = tp->grad_buf(ai).writable();
        for (std::size_t j = 0; j < n; ++j)
          ga[i * n + j] +=
              rinv * (g[i * n + j] * gv[j] - av[i * n + j] * dot / (double(n) * r2));
      }
      if (tp->wants(gi)) {
        auto& gg = tp->grad_buf(gi).writable();
        for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * av[i * n + j] * rinv;
      }
    }
  });
  return r;
}

// ---------------------------------------------------------------------------
// Gather / scatter / layout ops
// ---------------------------------------------------------------------------

// Rows of `table` selected by index; also serves as the embedding lookup.
inline Var embedding_lookup(Var table, const std::vector<std::size_t>& ids) {
  Tape& t = *table.tape;
  const Tensor& tv = t.val(table);
  detail::require(tv.rank() == 2, "embedding_lookup", "table must be rank-2");
  std::size_t V = tv.shape()[0], d = tv.shape()[1];
  for (auto id : ids)
    detail::require(id < V, "embedding_lookup",
                    "index " + std::to_string(id) + " out of range " + std::to_string(V));
  Tensor out({ids.size(), d});
  auto& o = out.writable();
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (std::size_t c = 0; c < d; ++c) o[r * d + c] = tv[ids[r] * d + c];
  Var r = t.make(std::move(out), t.wants(table));
  Tape* tp = &t;
  std::uint32_t ti = table.idx, ri = r.idx;
  t.set_back(ri, [tp, ti, ri, ids, d] {
    const Tensor& g = tp->grad_buf(ri);
    auto& gt = tp->grad_buf(ti).writable();
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) gt[ids[r] * d + c] += g[r * d + c];
  });
  return r;
}

// Stack inputs as rows; rank-1 inputs contribute one row each.
inline Var concat_rows(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_rows", "no inputs");
  Tape& t = *parts[0].tape;
  std::size_t n = detail::col_count(t.val(parts[0]));
  std::size_t rows = 0;
  bool ng = false;
  for (auto p : parts) {
    const Tensor& pv = t.val(p);
    detail::require(detail::col_count(pv) == n, "concat_rows", "column mismatch");
    rows += detail::row_count(pv);
    ng = ng || t.wants(p);
  }
  Tensor out({rows, n});
  auto& o = out.writable();
  std::size_t r0 = 0;
  std::vector<std::pair<std::uint32_t, std::size_t>> spans;  // (node, row offset)
  for (auto p : parts) {
    const Tensor& pv = t.val(p);
    std::size_t pr = detail::row_count(pv);
    for (std::size_t i = 0; i < pr * n; ++i) o[r0 * n + i] = pv[i];
    spans.emplace_back(p.idx, r0);
    r0 += pr;
  }
  Var r = t.make(std::move(out), ng);
  Tape* tp = &t;
  std::uint32_t ri = r.idx;
  t.set_back(ri, [tp, ri, spans, n] {
    const Tensor& g = tp->grad_buf(ri);
    for (auto& [pi, off] : spans) {
      if (!tp->wants(pi)) continue;
      auto& gp = tp->grad_buf(pi).writable();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off * n + i];
    }
  });
  return r;
}

inline Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  detail::require(av.rank() == 2 && r0 <= r1 && r1 <= av.shape()[0], "slice_rows", "bad range");
  std::size_t n = av.shape()[1];
  Tensor out({r1 - r0, n});
  auto& o = out.writable();
  for (std::size_t i = 0; i < (r1 - r0) * n; ++i) o[i] = av[r0 * n + i];
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri, r0, r1, n] {
    const Tensor& g = tp->grad_buf(ri);
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t i = 0; i < (r1 - r0) * n; ++i) ga[r0 * n + i] += g[i];
  });
  return r;
}

inline Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  detail::require(av.rank() >= 1 && av.rank() <= 2, "slice_cols", "rank-1/2 required");
  std::size_t m = detail::row_count(av), n = detail::col_count(av);
  detail::require(c0 <= c1 && c1 <= n, "slice_cols", "bad range");
  std::size_t w = c1 - c0;
  Tensor out(av.rank() == 1 ? std::vector<std::size_t>{w} : std::vector<std::size_t>{m, w});
  auto& o = out.writable();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) o[i * w + j] = av[i * n + c0 + j];
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri, m, n, c0, w] {
    const Tensor& g = tp->grad_buf(ri);
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * n + c0 + j] += g[i * w + j];
  });
  return r;
}

// Row j of the output taken from A (sel[j].first == 0) or B (== 1).
inline Var gather_rows_pair(Var a, Var b, const std::vector<std::pair<int, std::size_t>>& sel) {
  Tape& t = *a.tape;
  const Tensor &av = t.val(a), &bv = t.val(b);
  detail::require(av.rank() == 2 && bv.rank() == 2 && av.shape()[1] == bv.shape()[1],
                  "gather_rows_pair", detail::shapes2(av, bv));
  std::size_t n = av.shape()[1];
  Tensor out({sel.size(), n});
  auto& o = out.writable();
  for (std::size_t j = 0; j < sel.size(); ++j) {
    const Tensor& src = sel[j].first == 0 ? av : bv;
    detail::require(sel[j].second < src.shape()[0], "gather_rows_pair", "row out of range");
    for (std::size_t c = 0; c < n; ++c) o[j * n + c] = src[sel[j].second * n + c];
  }
  Var r = t.make(std::move(out), t.wants(a) || t.wants(b));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, bi = b.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, bi, ri, sel, n] {
    const Tensor& g = tp->grad_buf(ri);
    for (std::size_t j = 0; j < sel.size(); ++j) {
      std::uint32_t dst = sel[j].first == 0 ? ai : bi;
      if (!tp->wants(dst)) continue;
      auto& gd = tp->grad_buf(dst).writable();
      for (std::size_t c = 0; c < n; ++c) gd[sel[j].second * n + c] += g[j * n + c];
    }
  });
  return r;
}

// Copy of `base` with rows[idx[j]] replaced by rows of `repl`. Indices must
// be distinct; untouched rows pass gradients straight through, which is what
// keeps completed words bit-exact under feedback.
inline Var overwrite_rows(Var base, const std::vector<std::size_t>& idx, Var repl) {
  Tape& t = *base.tape;
  const Tensor &bv = t.val(base), &rv = t.val(repl);
  detail::require(bv.rank() == 2 && rv.rank() == 2 && bv.shape()[1] == rv.shape()[1] &&
                      rv.shape()[0] == idx.size(),
                  "overwrite_rows", detail::shapes2(bv, rv));
  std::size_t n = bv.shape()[1];
  std::size_t rows = bv.shape()[0];
  Tensor out = bv.clone();
  auto& o = out.writable();
  for (std::size_t j = 0; j < idx.size(); ++j) {
    detail::require(idx[j] < rows, "overwrite_rows", "row out of range");
    for (std::size_t c = 0; c < n; ++c) o[idx[j] * n + c] = rv[j * n + c];
  }
  Var r = t.make(std::move(out), t.wants(base) || t.wants(repl));
  Tape* tp = &t;
  std::uint32_t bi = base.idx, pi = repl.idx, ri = r.idx;
  t.set_back(ri, [tp, bi, pi, ri, idx, rows, n] {
    const Tensor& g = tp->grad_buf(ri);
    std::vector<bool> touched(rows, false);
    for (auto i : idx) touched[i] = true;
    if (tp->wants(bi)) {
      auto& gb = tp->grad_buf(bi).writable();
      for (std::size_t i = 0; i < rows; ++i) {
        if (touched[i]) continue;
        for (std::size_t c = 0; c < n; ++c) gb[i * n + c] += g[i * n + c];
      }
    }
    if (tp->wants(pi)) {
      auto& gp = tp->grad_buf(pi).writable();
      for (std::size_t j = 0; j < idx.size(); ++j)
        for (std::size_t c = 0; c < n; ++c) gp[j * n + c] += g[idx[j] * n + c];
    }
  });
  return r;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var reduce_sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  double s = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) s += av[i];
  Var r = t.make(Tensor::scalar(s), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri] {
    double g = tp->grad_buf(ri)[0];
    auto& ga = tp->grad_buf(ai).writable();
    for (auto& x : ga) x += g;
  });
  return r;
}

inline Var reduce_mean(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  double s = 0.0;
  std::size_t cnt = av.numel();
  for (std::size_t i = 0; i < cnt; ++i) s += av[i];
  Var r = t.make(Tensor::scalar(s / double(cnt)), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri, cnt] {
    double g = tp->grad_buf(ri)[0] / double(cnt);
    auto& ga = tp->grad_buf(ai).writable();
    for (auto& x : ga) x += g;
  });
  return r;
}

inline Var rowwise_sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  detail::require(av.rank() == 2, "rowwise_sum", "rank-2 required");
  std::size_t m = av.shape()[0], n = av.shape()[1];
  Tensor out({m});
  auto& o = out.writable();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i] += av[i * n + j];
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri, m, n] {
    const Tensor& g = tp->grad_buf(ri);
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i];
  });
  return r;
}

// Sum each of H contiguous column blocks; used to reduce per-head features
// to per-head scores in one shot.
inline Var rowwise_block_sum(Var a, std::size_t heads) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  detail::require(av.rank() == 2 && heads > 0 && av.shape()[1] % heads == 0, "rowwise_block_sum",
                  "columns " + std::to_string(av.shape()[1]) + " not divisible by " +
                      std::to_string(heads) + " heads");
  std::size_t m = av.shape()[0], n = av.shape()[1], w = n / heads;
  Tensor out({m, heads});
  auto& o = out.writable();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t h = 0; h < heads; ++h) {
      double s = 0.0;
      for (std::size_t j = 0; j < w; ++j) s += av[i * n + h * w + j];
      o[i * heads + h] = s;
    }
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri, m, n, heads, w] {
    const Tensor& g = tp->grad_buf(ri);
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < w; ++j) ga[i * n + h * w + j] += g[i * heads + h];
  });
  return r;
}

// Softmax down each column, independently within runs of equal segment id.
// Segment ids must be non-decreasing (edge lists are built sorted).
inline Var segment_softmax_cols(Var a, const std::vector<std::size_t>& seg) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  detail::require(av.rank() == 2 && seg.size() == av.shape()[0], "segment_softmax",
                  "one segment id per row required");
  for (std::size_t i = 1; i < seg.size(); ++i)
    detail::require(seg[i - 1] <= seg[i], "segment_softmax", "segment ids must be sorted");
  std::size_t m = av.shape()[0], n = av.shape()[1];
  Tensor out({m, n});
  auto& o = out.writable();
  for (std::size_t lo = 0; lo < m;) {
    std::size_t hi = lo;
    while (hi < m && seg[hi] == seg[lo]) ++hi;
    for (std::size_t c = 0; c < n; ++c) {
      double mx = av[lo * n + c];
      for (std::size_t i = lo; i < hi; ++i) mx = std::max(mx, av[i * n + c]);
      double z = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        o[i * n + c] = std::exp(av[i * n + c] - mx);
        z += o[i * n + c];
      }
      for (std::size_t i = lo; i < hi; ++i) o[i * n + c] /= z;
    }
    lo = hi;
  }
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri, seg, m, n] {
    const Tensor& g = tp->grad_buf(ri);
    const Tensor& p = tp->val(Var{tp, ri});
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t lo = 0; lo < m;) {
      std::size_t hi = lo;
      while (hi < m && seg[hi] == seg[lo]) ++hi;
      for (std::size_t c = 0; c < n; ++c) {
        double dot = 0.0;
        for (std::size_t i = lo; i < hi; ++i) dot += g[i * n + c] * p[i * n + c];
        for (std::size_t i = lo; i < hi; ++i)
          ga[i * n + c] += p[i * n + c] * (g[i * n + c] - dot);
      }
      lo = hi;
    }
  });
  return r;
}

// Column block h of row e scaled by weights[e, h]; the per-head attention
// weighting with heads laid out as contiguous column blocks.
inline Var scale_blocks(Var m_, Var weights, std::size_t heads) {
  Tape& t = *m_.tape;
  const Tensor &mv = t.val(m_), &wv = t.val(weights);
  detail::require(mv.rank() == 2 && wv.rank() == 2 && mv.shape()[0] == wv.shape()[0] &&
                      wv.shape()[1] == heads && mv.shape()[1] % heads == 0,
                  "scale_blocks", detail::shapes2(mv, wv));
  std::size_t m = mv.shape()[0], n = mv.shape()[1], w = n / heads;
  Tensor out({m, n});
  auto& o = out.writable();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t j = 0; j < w; ++j)
        o[i * n + h * w + j] = mv[i * n + h * w + j] * wv[i * heads + h];
  Var r = t.make(std::move(out), t.wants(m_) || t.wants(weights));
  Tape* tp = &t;
  std::uint32_t mi = m_.idx, wi = weights.idx, ri = r.idx;
  t.set_back(ri, [tp, mi, wi, ri, m, n, heads, w] {
    const Tensor& g = tp->grad_buf(ri);
    const Tensor &mv = tp->val(Var{tp, mi}), &wv = tp->val(Var{tp, wi});
    if (tp->wants(mi)) {
      auto& gm = tp->grad_buf(mi).writable();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t j = 0; j < w; ++j)
            gm[i * n + h * w + j] += g[i * n + h * w + j] * wv[i * heads + h];
    }
    if (tp->wants(wi)) {
      auto& gw = tp->grad_buf(wi).writable();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t h = 0; h < heads; ++h) {
          double s = 0.0;
          for (std::size_t j = 0; j < w; ++j)
            s += g[i * n + h * w + j] * mv[i * n + h * w + j];
          gw[i * heads + h] += s;
        }
    }
  });
  return r;
}

// Rows summed into out[seg[e]]; the aggregation half of attention.
inline Var segment_sum_rows(Var a, const std::vector<std::size_t>& seg, std::size_t n_out) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  detail::require(av.rank() == 2 && seg.size() == av.shape()[0], "segment_sum",
                  "one segment id per row required");
  std::size_t m = av.shape()[0], n = av.shape()[1];
  for (auto s : seg) detail::require(s < n_out, "segment_sum", "segment id out of range");
  Tensor out({n_out, n});
  auto& o = out.writable();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < n; ++c) o[seg[i] * n + c] += av[i * n + c];
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri, seg, m, n] {
    const Tensor& g = tp->grad_buf(ri);
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < n; ++c) ga[i * n + c] += g[seg[i] * n + c];
  });
  return r;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

// Inverted dropout: kept entries scaled by 1/(1-p). Call only in train mode;
// evaluation is the identity and should skip the op entirely.
inline Var dropout(Var a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  detail::require(p < 1.0, "dropout", "p must be < 1");
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  std::vector<double> mask(av.numel());
  double scale = 1.0 / (1.0 - p);
  for (auto& x : mask) x = rng.uniform() < p ? 0.0 : scale;
  Tensor out(av.shape());
  auto& o = out.writable();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * mask[i];
  Var r = t.make(std::move(out), t.wants(a));
  Tape* tp = &t;
  std::uint32_t ai = a.idx, ri = r.idx;
  t.set_back(ri, [tp, ai, ri, mask] {
    const Tensor& g = tp->grad_buf(ri);
    auto& ga = tp->grad_buf(ai).writable();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * mask[i];
  });
  return r;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Mean over rows of (1-eps) * NLL(target) + eps * mean over classes of NLL.
inline Var label_smoothed_nll(Var logits, const std::vector<int>& targets, double eps) {
  Tape& t = *logits.tape;
  const Tensor& lv = t.val(logits);
  detail::require(lv.rank() == 2 && targets.size() == lv.shape()[0], "label_smoothed_nll",
                  "one target per row required");
  detail::require(eps >= 0.0 && eps < 1.0, "label_smoothed_nll", "eps must be in [0,1)");
  std::size_t m = lv.shape()[0], C = lv.shape()[1];
  for (auto tgt : targets)
    detail::require(tgt >= 0 && std::size_t(tgt) < C, "label_smoothed_nll", "target out of range");
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = lv.data() + i * C;
    double mx = x[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(x[c] - mx);
    double lse = mx + std::log(z);
    double sum_logp = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum_logp += x[c] - lse;
    total += (1.0 - eps) * (lse - x[targets[i]]) + eps * (-sum_logp / double(C));
  }
  Var r = t.make(Tensor::scalar(total / double(m)), t.wants(logits));
  Tape* tp = &t;
  std::uint32_t li = logits.idx, ri = r.idx;
  t.set_back(ri, [tp, li, ri, targets, m, C, eps] {
    double g = tp->grad_buf(ri)[0] / double(m);
    const Tensor& lv = tp->val(Var{tp, li});
    auto& gl = tp->grad_buf(li).writable();
    for (std::size_t i = 0; i < m; ++i) {
      const double* x = lv.data() + i * C;
      double mx = x[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, x[c]);
      double z = 0.0;
      for (std::size_t c = 0; c < C; ++c) z += std::exp(x[c] - mx);
      for (std::size_t c = 0; c < C; ++c) {
        double p = std::exp(x[c] - mx) / z;
        double target_mass = (std::size_t(targets[i]) == c ? 1.0 - eps : 0.0) + eps / double(C);
        gl[i * C + c] += g * (p - target_mass);
      }
    }
  });
  return r;
}

// ---------------------------------------------------------------------------
// Matrix exponential / orthogonal parameterization
// ---------------------------------------------------------------------------

// expm by scaling-and-squaring with a degree-16 Taylor core (truncation error
// far below 1e-10 once the scaled norm is <= 0.5). Differentiates through the
// unrolled product graph.
inline Var expm(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  detail::require(av.rank() == 2 && av.shape()[0] == av.shape()[1], "expm", "square required");
  std::size_t d = av.shape()[0];
  double fro = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) fro += av[i] * av[i];
  fro = std::sqrt(fro);
  int s = 0;
  if (fro > 0.5) s = int(std::ceil(std::log2(fro / 0.5)));
  Var x = s > 0 ? scalar_mul(a, std::ldexp(1.0, -s)) : a;
  Var id = t.leaf(eye(d));
  Var e = id;
  for (int j = 16; j >= 1; --j) e = add(id, scalar_mul(matmul(x, e), 1.0 / double(j)));
  for (int i = 0; i < s; ++i) e = matmul(e, e);
  return e;
}

// expm(B - B^T): special-orthogonal for any finite base.
inline Var orthogonal_from_skew(Var base) {
  return expm(sub(base, transpose(base)));
}

}  // namespace hdcs
