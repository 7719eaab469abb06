/*
 * Copyright 2026 The preferdiff Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace preferdiff {

using Index = Eigen::Index;

/// Row-major dense matrix; the flat storage order of every Tensor.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

using Shape = std::vector<Index>;

std::string to_string(const Shape& shape);

/// Dense value of rank 0, 1 or 2 with 64-bit real entries.
///
/// Storage is a row-major Eigen matrix: a scalar is 1x1, a rank-1 tensor of
/// length n is 1xn and a rank-2 tensor keeps its own rows and columns. The
/// flat value array is therefore always row-major.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::span<const double> values);

  static Tensor scalar(double value);
  static Tensor vector(const Eigen::Ref<const Vector>& values);
  static Tensor matrix(Matrix values);
  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index rows() const { return data_.rows(); }
  Index cols() const { return data_.cols(); }

  std::span<const double> values() const { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<double> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }

  /// Matrix view (rank 1 is a single row, rank 0 is 1x1).
  const Matrix& mat() const { return data_; }
  Matrix& mat() { return data_; }

  /// Rank-1 values as a column vector copy.
  Vector as_vector() const;

  /// Value of a scalar (or any single-element) tensor.
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool value) { requires_grad_ = value; }

  bool all_finite() const { return data_.allFinite(); }

  /// Same shape, same bits.
  bool identical(const Tensor& other) const;

 private:
  Tensor(Shape shape, Matrix data);

  Shape shape_;
  Matrix data_;
  bool requires_grad_ = false;
};

}  // namespace preferdiff
