#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "hdcs/tensor.hpp"

namespace testutil {

// ||A^T A - I||_F
inline double orthogonality_defect(const hdcs::Tensor& a) {
  std::size_t d = a.shape()[0];
  double defect = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += a.get(k, i) * a.get(k, j);
      double target = i == j ? 1.0 : 0.0;
      defect += (s - target) * (s - target);
    }
  return std::sqrt(defect);
}

// Determinant via LU with partial pivoting; test oracle only.
inline double determinant(const hdcs::Tensor& a) {
  std::size_t d = a.shape()[0];
  std::vector<double> m(a.vec());
  double det = 1.0;
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::fabs(m[r * d + col]) > std::fabs(m[pivot * d + col])) pivot = r;
    if (m[pivot * d + col] == 0.0) return 0.0;
    if (pivot != col) {
      for (std::size_t c = 0; c < d; ++c) std::swap(m[pivot * d + c], m[col * d + c]);
      det = -det;
    }
    det *= m[col * d + col];
    for (std::size_t r = col + 1; r < d; ++r) {
      double f = m[r * d + col] / m[col * d + col];
      for (std::size_t c = col; c < d; ++c) m[r * d + c] -= f * m[col * d + c];
    }
  }
  return det;
}

inline double max_abs_diff(const hdcs::Tensor& a, const hdcs::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
