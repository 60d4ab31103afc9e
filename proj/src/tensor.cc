// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hetmerge/tensor.h"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hetmerge/error.h"

namespace hetmerge {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Matrix: " + std::to_string(data_.size()) + " values for shape " +
                     shape_string());
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
  Matrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  return m;
}

Matrix Matrix::column(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::string Matrix::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

IndexPermutation::IndexPermutation(std::vector<std::size_t> mapping)
    : mapping_(std::move(mapping)) {
  std::vector<bool> seen(mapping_.size(), false);
  for (std::size_t v : mapping_) {
    if (v >= mapping_.size() || seen[v]) {
      throw ValidationError("IndexPermutation: mapping is not a bijection");
    }
    seen[v] = true;
  }
}

IndexPermutation IndexPermutation::identity(std::size_t n) {
  std::vector<std::size_t> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = i;
  return IndexPermutation(std::move(m));
}

IndexPermutation IndexPermutation::inverse() const {
  std::vector<std::size_t> inv(mapping_.size());
  for (std::size_t i = 0; i < mapping_.size(); ++i) inv[mapping_[i]] = i;
  return IndexPermutation(std::move(inv));
}

Matrix IndexPermutation::to_matrix() const {
  Matrix p(size(), size());
  for (std::size_t i = 0; i < size(); ++i) p(i, mapping_[i]) = 1.0;
  return p;
}

Matrix IndexPermutation::apply_rows(const Matrix& m) const {
  if (m.rows() != size()) {
    throw ShapeError("IndexPermutation::apply_rows: permutation of size " +
                     std::to_string(size()) + " vs matrix " + m.shape_string());
  }
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < size(); ++i) {
    std::copy(m.row(mapping_[i]).begin(), m.row(mapping_[i]).end(), out.row(i).begin());
  }
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + a.shape_string() + " x " +
                     b.shape_string());
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) { return a.transposed(); }

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (double& v : c.data()) v *= s;
  return c;
}

Matrix block_diag(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a(r, c);
  for (std::size_t r = 0; r < b.rows(); ++r)
    for (std::size_t c = 0; c < b.cols(); ++c) out(a.rows() + r, a.cols() + c) = b(r, c);
  return out;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.cols() != bottom.cols()) {
    throw ShapeError("vstack: column counts differ, " + top.shape_string() + " vs " +
                     bottom.shape_string());
  }
  std::vector<double> data(top.data().begin(), top.data().end());
  data.insert(data.end(), bottom.data().begin(), bottom.data().end());
  return Matrix(top.rows() + bottom.rows(), top.cols(), std::move(data));
}

Matrix slice_rows(const Matrix& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) throw ShapeError("slice_rows: range out of bounds");
  return Matrix(end - begin, a.cols(),
                std::vector<double>(a.data().begin() + begin * a.cols(),
                                    a.data().begin() + end * a.cols()));
}

Matrix slice_cols(const Matrix& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) throw ShapeError("slice_cols: range out of bounds");
  Matrix out(a.rows(), end - begin);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = a(r, c);
  return out;
}

Matrix pseudo_inverse(const Matrix& a, double tol) {
  require_finite(a, "pseudo_inverse");
  if (!(tol > 0.0)) throw ValidationError("pseudo_inverse: tolerance must be positive");
  if (a.empty()) return Matrix(a.cols(), a.rows());

  using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const EigenMat> src(a.data().data(), static_cast<Eigen::Index>(a.rows()),
                                 static_cast<Eigen::Index>(a.cols()));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(src, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sigma = svd.singularValues();
  const double cutoff = tol * (sigma.size() > 0 ? sigma(0) : 0.0);

  Eigen::VectorXd inv_sigma(sigma.size());
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    inv_sigma(i) = sigma(i) > cutoff ? 1.0 / sigma(i) : 0.0;
  }
  EigenMat pinv = svd.matrixV() * inv_sigma.asDiagonal() * svd.matrixU().transpose();

  return Matrix(a.cols(), a.rows(),
                std::vector<double>(pinv.data(), pinv.data() + pinv.size()));
}

bool all_finite(const Matrix& a) {
  return std::all_of(a.data().begin(), a.data().end(),
                     [](double v) { return std::isfinite(v); });
}

void require_finite(const Matrix& a, const char* what) {
  if (!all_finite(a)) {
    throw ValidationError(std::string(what) + ": matrix " + a.shape_string() +
                          " contains non-finite values");
  }
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

Matrix round_to_f32(const Matrix& a) {
  Matrix out = a;
  for (double& v : out.data()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

}  // namespace hetmerge
