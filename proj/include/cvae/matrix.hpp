#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cvae/kernels.hpp"

namespace cvae::nd {

// Dense row-major matrix of doubles. Vectors are 1 x n matrices where a
// uniform tensor interface matters (optimizer, checkpoints, grad check).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::size_t size() const { return data.size(); }
  void fill(double v) { data.assign(rows * cols, v); }
};

// c = a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dims");
  Matrix c(a.rows, b.cols);
  kernels::active().matmul(a.data.data(), b.data.data(), c.data.data(), a.rows,
                           a.cols, b.cols);
  return c;
}

// c = a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dims");
  Matrix c(a.cols, b.cols);
  kernels::active().matmul_tn(a.data.data(), b.data.data(), c.data.data(),
                              a.cols, a.rows, b.cols);
  return c;
}

// c = a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dims");
  Matrix c(a.rows, b.rows);
  kernels::active().matmul_nt(a.data.data(), b.data.data(), c.data.data(),
                              a.rows, a.cols, b.rows);
  return c;
}

}  // namespace cvae::nd
