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

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "preferdiff/tensor.hpp"

namespace preferdiff {

/// Primitive operations understood by the tape.
///
/// Rank-2 operands of l2norm, dot, cosine and row_mean are read as a batch of
/// row vectors and reduce each row; rank-1 operands reduce to a scalar.
enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatmul,
  kConcat,
  kMean,
  kSum,
  kSigmoid,
  kSoftplus,
  kTanh,
  kSquare,
  kSqrt,
  kL2Norm,
  kDot,
  kCosine,
  kAbs,
  kHuber,
  kRowMean,
  kGatherMean,
  kAddBias,
  kRelu,
  kSoftmax,
  kLayerNorm,
  kStackRows,
};

std::string_view op_name(OpKind kind);

/// Non-tensor arguments of a primitive.
struct OpAttrs {
  double scalar = 0.0;                         // kScale factor, kHuber delta, kLayerNorm eps
  std::vector<std::vector<Index>> groups;      // kGatherMean row groups
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  friend Var apply(OpKind, std::span<const Var>, const OpAttrs&);
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of one backward pass, keyed by leaf.
class Gradients {
 public:
  /// Gradient of a requires_grad leaf; zeros when the leaf was not on the path.
  const Tensor& operator[](const Var& leaf) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Single-threaded record of primitive operations in topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Reverse pass from a scalar output. Allowed once per recording.
  Gradients backward(const Var& output);

  /// Drop every recorded node so the tape can be reused.
  void reset();

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  std::span<const std::size_t> inputs(std::size_t id) const { return nodes_.at(id).inputs; }

 private:
  friend class Var;
  friend Var apply(OpKind, std::span<const Var>, const OpAttrs&);

  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    OpAttrs attrs;
    bool requires_grad;
  };

  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, OpAttrs attrs, bool requires_grad);
  void propagate(const Node& node, const Matrix& grad, std::vector<Matrix>& grads) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Evaluate a primitive on `inputs` and record it on their common tape.
Var apply(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var matmul(const Var& a, const Var& b);
Var concat(std::initializer_list<Var> parts);
Var mean(const Var& a);
Var sum(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var tanh(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var l2norm(const Var& a);
Var dot(const Var& a, const Var& b);
Var cosine(const Var& a, const Var& b);
Var abs(const Var& a);
Var huber(const Var& a, double delta);
Var row_mean(const Var& a);
/// Row i of the result is the mean of `table` rows listed in groups[i]; an
/// empty group yields a zero row.
Var gather_mean(const Var& table, std::vector<std::vector<Index>> groups);
Var gather_rows(const Var& table, std::span<const Index> ids);
/// Adds a rank-1 bias to every row of a rank-2 operand.
Var add_bias(const Var& x, const Var& bias);
Var relu(const Var& a);
/// Softmax over a rank-1 operand, or over each row of a rank-2 operand.
Var softmax(const Var& a);
/// (x - mean) / sqrt(var + eps) over a rank-1 operand or each row.
Var layer_norm(const Var& a, double eps = 1e-5);
/// Rank-1 operands of equal length stacked as the rows of a matrix.
Var stack_rows(std::span<const Var> rows);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator*(double factor, const Var& a);
Var operator*(const Var& a, double factor);
Var operator+(const Var& a, double offset);
Var operator-(double offset, const Var& a);
Var operator-(const Var& a);

/// Central-difference gradient of a scalar function, one coordinate at a time.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h = 1e-5);

/// max |a-b| / max(|a|, |b|, floor) over all entries.
double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-8);

}  // namespace preferdiff
