// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lora_spectrum {

/// Dense row-major binary64 matrix. Entries are finite and both dimensions
/// are positive; the constructors enforce this and throw Error otherwise.
class Matrix {
 public:
  Matrix(std::size_t rows, std::size_t cols);  // zero-filled
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  Matrix transposed() const;
  Matrix scaled(double factor) const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

/// Row-major product with left-to-right accumulation, bit-reproducible.
Matrix matmul(const Matrix& a, const Matrix& b);

double frobenius_norm(const Matrix& a);

/// ||a - b||_F / ||b||_F, or ||a - b||_F when b is zero.
double relative_frobenius_error(const Matrix& a, const Matrix& b);

Matrix subtract(const Matrix& a, const Matrix& b);

struct SvdResult {
  std::vector<double> singular_values;  // non-increasing, p = min(m, n) entries
  Matrix left_vectors;                  // m x p, orthonormal columns
  Matrix right_vectors_t;               // p x n, orthonormal rows
  int sweeps = 0;
  double residual = 0.0;  // largest normalized Gram off-diagonal at exit
};

struct SvdOptions {
  double rotation_tolerance = 1e-12;
  int max_sweeps = 60;
  double accept_residual = 1e-8;
};

/// One-sided (Hestenes) Jacobi SVD. Singular values are returned untruncated.
/// Each left singular vector is signed so its largest-magnitude entry is >= 0.
/// Throws Error(kNoConvergence) if the sweep cap is hit above accept_residual.
SvdResult svd(const Matrix& a, const SvdOptions& options = {});

}  // namespace lora_spectrum
