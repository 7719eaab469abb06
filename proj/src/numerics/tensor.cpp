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

#include "preferdiff/tensor.hpp"

#include <cstring>

#include "preferdiff/errors.hpp"

namespace preferdiff {

namespace {

std::pair<Index, Index> storage_dims(const Shape& shape) {
  if (shape.size() > 2) {
    throw ShapeError("tensor rank " + std::to_string(shape.size()) + " unsupported (max 2)");
  }
  for (Index extent : shape) {
    if (extent <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  switch (shape.size()) {
    case 0: return {1, 1};
    case 1: return {1, shape[0]};
    default: return {shape[0], shape[1]};
  }
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor() : data_(Matrix::Zero(1, 1)) {}

Tensor::Tensor(Shape shape, Matrix data) : shape_(std::move(shape)), data_(std::move(data)) {}

Tensor::Tensor(Shape shape, std::span<const double> values) : shape_(std::move(shape)) {
  auto [rows, cols] = storage_dims(shape_);
  if (static_cast<Index>(values.size()) != rows * cols) {
    throw ShapeError("tensor of shape " + to_string(shape_) + " needs " + std::to_string(rows * cols) +
                     " values, got " + std::to_string(values.size()));
  }
  data_.resize(rows, cols);
  std::memcpy(data_.data(), values.data(), values.size() * sizeof(double));
}

Tensor Tensor::scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return Tensor({}, std::move(m));
}

Tensor Tensor::vector(const Eigen::Ref<const Vector>& values) {
  if (values.size() == 0) throw ShapeError("empty vector");
  return Tensor({values.size()}, Matrix(values.transpose()));
}

Tensor Tensor::matrix(Matrix values) {
  if (values.size() == 0) throw ShapeError("empty matrix");
  Shape shape{values.rows(), values.cols()};
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  auto [rows, cols] = storage_dims(shape);
  return Tensor(std::move(shape), Matrix::Constant(rows, cols, value));
}

Vector Tensor::as_vector() const { return Eigen::Map<const Vector>(data_.data(), data_.size()); }

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return data_(0, 0);
}

bool Tensor::identical(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

}  // namespace preferdiff
