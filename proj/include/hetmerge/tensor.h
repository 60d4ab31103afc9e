// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices in double precision and the handful of linear
// algebra routines the merging pipeline needs.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace hetmerge {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  // Matrix::from_rows({{1, 2}, {3, 4}})
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> values);
  static Matrix column(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  Matrix transposed() const;
  std::string shape_string() const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// A bijection on {0..n-1}. to_matrix() puts a 1 at (i, mapping[i]), so
// (P * X).row(i) == X.row(mapping[i]).
class IndexPermutation {
 public:
  IndexPermutation() = default;
  explicit IndexPermutation(std::vector<std::size_t> mapping);

  static IndexPermutation identity(std::size_t n);

  std::size_t size() const { return mapping_.size(); }
  std::size_t operator[](std::size_t i) const { return mapping_[i]; }
  const std::vector<std::size_t>& mapping() const { return mapping_; }

  IndexPermutation inverse() const;
  Matrix to_matrix() const;
  // Equivalent to to_matrix() * m without materializing the permutation.
  Matrix apply_rows(const Matrix& m) const;

  bool operator==(const IndexPermutation& other) const = default;

 private:
  std::vector<std::size_t> mapping_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix block_diag(const Matrix& a, const Matrix& b);
Matrix vstack(const Matrix& top, const Matrix& bottom);
Matrix slice_rows(const Matrix& a, std::size_t begin, std::size_t end);
Matrix slice_cols(const Matrix& a, std::size_t begin, std::size_t end);

// Moore-Penrose pseudo-inverse via SVD. Singular values at or below
// tol * sigma_max are treated as zero.
inline constexpr double kDefaultPinvTolerance = 1e-10;
Matrix pseudo_inverse(const Matrix& a, double tol = kDefaultPinvTolerance);

bool all_finite(const Matrix& a);
void require_finite(const Matrix& a, const char* what);
double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);

// Rounds every entry through IEEE-754 binary32.
Matrix round_to_f32(const Matrix& a);

}  // namespace hetmerge
