#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hdcs/errors.hpp"
#include "hdcs/rng.hpp"

namespace hdcs {

// Dense row-major array of 64-bit floats. Copies share storage; every op
// allocates a fresh buffer for its output, so shared buffers are never
// written through. Rank 0 is a scalar, rank 1 a vector, rank 2 a matrix.
class Tensor {
 public:
  Tensor() : store_(std::make_shared<std::vector<double>>()) {}

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)),
        store_(std::make_shared<std::vector<double>>(numel_of(shape_), 0.0)) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)),
        store_(std::make_shared<std::vector<double>>(std::move(data))) {
    if (store_->size() != numel_of(shape_))
      throw ShapeMismatch("tensor: data length " + std::to_string(store_->size()) +
                          " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.writable()) x = v;
    return t;
  }
  static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (auto& x : t.writable()) x = rng.normal(0.0, stddev);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return store_->size(); }
  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? (shape_.empty() ? 1 : shape_[0]) : shape_[1]; }

  const double* data() const { return store_->data(); }
  const double& operator[](std::size_t i) const { return (*store_)[i]; }
  double& at(std::size_t i) { return (*store_)[i]; }
  double& at(std::size_t r, std::size_t c) { return (*store_)[r * shape_[1] + c]; }
  double get(std::size_t r, std::size_t c) const { return (*store_)[r * shape_[1] + c]; }
  double item() const {
    if (numel() != 1) throw ShapeMismatch("item: tensor has " + std::to_string(numel()) + " elements");
    return (*store_)[0];
  }

  std::vector<double>& writable() { return *store_; }
  const std::vector<double>& vec() const { return *store_; }

  // Deep copy with its own buffer.
  Tensor clone() const { return Tensor(shape_, *store_); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  static std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
  }
  std::string shape_str() const { return shape_str(shape_); }

 private:
  std::vector<std::size_t> shape_;
  std::shared_ptr<std::vector<double>> store_;
};

}  // namespace hdcs
