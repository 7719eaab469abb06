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

#include "preferdiff/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "preferdiff/errors.hpp"

namespace preferdiff {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

[[noreturn]] void shape_mismatch(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

void expect_arity(OpKind kind, std::size_t got, std::size_t want) {
  if (got != want) {
    throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(want) + " inputs, got " +
                     std::to_string(got));
  }
}

bool is_scalar(const Tensor& t) { return t.rank() == 0; }

// Result shape of an elementwise binary op with scalar broadcast.
Shape broadcast_shape(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (is_scalar(a)) return b.shape();
  if (is_scalar(b)) return a.shape();
  shape_mismatch(kind, a.shape(), b.shape());
}

template <typename F>
Tensor binary_elementwise(OpKind kind, const Tensor& a, const Tensor& b, F f) {
  Shape shape = broadcast_shape(kind, a, b);
  Tensor out = Tensor::zeros(shape);
  if (a.shape() == b.shape()) {
    out.mat() = a.mat().binaryExpr(b.mat(), f);
  } else if (is_scalar(a)) {
    const double s = a.item();
    out.mat() = b.mat().unaryExpr([&](double v) { return f(s, v); });
  } else {
    const double s = b.item();
    out.mat() = a.mat().unaryExpr([&](double v) { return f(v, s); });
  }
  return out;
}

template <typename F>
Tensor unary_elementwise(const Tensor& a, F f) {
  Tensor out = Tensor::zeros(a.shape());
  out.mat() = a.mat().unaryExpr(f);
  return out;
}

// Reduce a broadcast gradient back onto an operand's shape.
Matrix reduce_to(const Tensor& operand, const Matrix& grad) {
  if (is_scalar(operand) && grad.size() != 1) return Matrix::Constant(1, 1, grad.sum());
  return grad;
}

// Per-row reductions read rank 2 as a batch of rows; the result has one entry
// per row (rank 1), or is a scalar for rank-1 input.
Shape row_reduced_shape(OpKind kind, const Tensor& a) {
  if (a.rank() == 1) return {};
  if (a.rank() == 2) return {a.rows()};
  throw ShapeError(std::string(op_name(kind)) + ": needs rank 1 or 2, got " + to_string(a.shape()));
}

Tensor from_row_values(const Shape& shape, const Vector& values) {
  return Tensor(shape, std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
}

Vector grad_as_rows(const Matrix& grad) { return Eigen::Map<const Vector>(grad.data(), grad.size()); }

void require_nonzero_rows(OpKind kind, const Vector& norms) {
  for (Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0)) throw NumericalError(std::string(op_name(kind)) + ": zero-norm operand");
  }
}

// Matmul operands as matrices: rank 1 on the left is a row, on the right a column.
Matrix left_operand(const Tensor& t) { return t.mat(); }
Matrix right_operand(const Tensor& t) { return t.rank() == 1 ? Matrix(t.mat().transpose()) : t.mat(); }

Shape matmul_shape(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || b.rank() == 0) shape_mismatch(OpKind::kMatmul, a.shape(), b.shape());
  const Index inner_a = a.shape().back();
  const Index inner_b = b.shape().front();
  if (inner_a != inner_b) shape_mismatch(OpKind::kMatmul, a.shape(), b.shape());
  if (a.rank() == 2 && b.rank() == 2) return {a.rows(), b.cols()};
  if (a.rank() == 2) return {a.rows()};
  if (b.rank() == 2) return {b.cols()};
  return {};
}

// Output gradient in the (rows x cols) layout of the un-squeezed product.
Matrix matmul_grad_layout(const Tensor& a, const Tensor& b, const Matrix& grad) {
  if (a.rank() == 2 && b.rank() == 1) return grad.transpose();
  return grad;
}

Tensor evaluate(OpKind kind, std::span<const Tensor* const> in, const OpAttrs& attrs) {
  switch (kind) {
    case OpKind::kAdd:
      expect_arity(kind, in.size(), 2);
      return binary_elementwise(kind, *in[0], *in[1], [](double x, double y) { return x + y; });
    case OpKind::kSub:
      expect_arity(kind, in.size(), 2);
      return binary_elementwise(kind, *in[0], *in[1], [](double x, double y) { return x - y; });
    case OpKind::kMul:
      expect_arity(kind, in.size(), 2);
      return binary_elementwise(kind, *in[0], *in[1], [](double x, double y) { return x * y; });
    case OpKind::kScale: {
      expect_arity(kind, in.size(), 1);
      const double c = attrs.scalar;
      return unary_elementwise(*in[0], [c](double x) { return c * x; });
    }
    case OpKind::kMatmul: {
      expect_arity(kind, in.size(), 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      Shape shape = matmul_shape(a, b);
      Matrix product = left_operand(a) * right_operand(b);
      if (a.rank() == 2 && b.rank() == 1) product.transposeInPlace();
      return Tensor(shape, std::span<const double>(product.data(), static_cast<std::size_t>(product.size())));
    }
    case OpKind::kConcat: {
      if (in.empty()) throw ShapeError("concat: no inputs");
      const Index rank = in[0]->rank();
      if (rank == 0) throw ShapeError("concat: scalar operand");
      Index cols = 0;
      for (const Tensor* t : in) {
        if (t->rank() != rank || t->rows() != in[0]->rows()) shape_mismatch(kind, in[0]->shape(), t->shape());
        cols += t->cols();
      }
      Matrix out(in[0]->rows(), cols);
      Index offset = 0;
      for (const Tensor* t : in) {
        out.middleCols(offset, t->cols()) = t->mat();
        offset += t->cols();
      }
      if (rank == 1) return Tensor({cols}, std::span<const double>(out.data(), static_cast<std::size_t>(cols)));
      return Tensor::matrix(std::move(out));
    }
    case OpKind::kMean:
      expect_arity(kind, in.size(), 1);
      return Tensor::scalar(in[0]->mat().mean());
    case OpKind::kSum:
      expect_arity(kind, in.size(), 1);
      return Tensor::scalar(in[0]->mat().sum());
    case OpKind::kSigmoid:
      expect_arity(kind, in.size(), 1);
      return unary_elementwise(*in[0], stable_sigmoid);
    case OpKind::kSoftplus:
      expect_arity(kind, in.size(), 1);
      return unary_elementwise(*in[0], stable_softplus);
    case OpKind::kTanh:
      expect_arity(kind, in.size(), 1);
      return unary_elementwise(*in[0], [](double x) { return std::tanh(x); });
    case OpKind::kSquare:
      expect_arity(kind, in.size(), 1);
      return unary_elementwise(*in[0], [](double x) { return x * x; });
    case OpKind::kSqrt:
      expect_arity(kind, in.size(), 1);
      if ((in[0]->mat().array() < 0.0).any()) throw NumericalError("sqrt: negative operand");
      return unary_elementwise(*in[0], [](double x) { return std::sqrt(x); });
    case OpKind::kAbs:
      expect_arity(kind, in.size(), 1);
      return unary_elementwise(*in[0], [](double x) { return std::abs(x); });
    case OpKind::kHuber: {
      expect_arity(kind, in.size(), 1);
      const double delta = attrs.scalar;
      if (!(delta > 0.0)) throw ShapeError("huber: delta must be positive");
      return unary_elementwise(*in[0], [delta](double x) {
        const double ax = std::abs(x);
        return ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
      });
    }
    case OpKind::kL2Norm: {
      expect_arity(kind, in.size(), 1);
      Shape shape = row_reduced_shape(kind, *in[0]);
      Vector norms = in[0]->mat().rowwise().norm();
      require_nonzero_rows(kind, norms);
      return from_row_values(shape, norms);
    }
    case OpKind::kDot: {
      expect_arity(kind, in.size(), 2);
      if (in[0]->shape() != in[1]->shape()) shape_mismatch(kind, in[0]->shape(), in[1]->shape());
      Shape shape = row_reduced_shape(kind, *in[0]);
      Vector dots = in[0]->mat().cwiseProduct(in[1]->mat()).rowwise().sum();
      return from_row_values(shape, dots);
    }
    case OpKind::kCosine: {
      expect_arity(kind, in.size(), 2);
      if (in[0]->shape() != in[1]->shape()) shape_mismatch(kind, in[0]->shape(), in[1]->shape());
      Shape shape = row_reduced_shape(kind, *in[0]);
      Vector na = in[0]->mat().rowwise().norm();
      Vector nb = in[1]->mat().rowwise().norm();
      require_nonzero_rows(kind, na);
      require_nonzero_rows(kind, nb);
      Vector dots = in[0]->mat().cwiseProduct(in[1]->mat()).rowwise().sum();
      return from_row_values(shape, dots.cwiseQuotient(na.cwiseProduct(nb)));
    }
    case OpKind::kRowMean: {
      expect_arity(kind, in.size(), 1);
      Shape shape = row_reduced_shape(kind, *in[0]);
      return from_row_values(shape, in[0]->mat().rowwise().mean());
    }
    case OpKind::kGatherMean: {
      expect_arity(kind, in.size(), 1);
      const Tensor& table = *in[0];
      if (table.rank() == 0) throw ShapeError("gather_mean: scalar table");
      if (attrs.groups.empty()) throw ShapeError("gather_mean: no groups");
      Matrix out = Matrix::Zero(static_cast<Index>(attrs.groups.size()), table.cols());
      for (std::size_t g = 0; g < attrs.groups.size(); ++g) {
        const auto& group = attrs.groups[g];
        for (Index id : group) {
          if (id < 0 || id >= table.rows()) {
            throw ShapeError("gather_mean: row " + std::to_string(id) + " out of range for table " +
                             to_string(table.shape()));
          }
          out.row(static_cast<Index>(g)) += table.mat().row(id);
        }
        if (!group.empty()) out.row(static_cast<Index>(g)) /= static_cast<double>(group.size());
      }
      return Tensor::matrix(std::move(out));
    }
    case OpKind::kAddBias: {
      expect_arity(kind, in.size(), 2);
      const Tensor& x = *in[0];
      const Tensor& b = *in[1];
      if (x.rank() != 2 || b.rank() != 1 || b.cols() != x.cols()) shape_mismatch(kind, x.shape(), b.shape());
      Matrix out = x.mat();
      out.rowwise() += b.mat().row(0);
      return Tensor::matrix(std::move(out));
    }
    case OpKind::kRelu:
      expect_arity(kind, in.size(), 1);
      return unary_elementwise(*in[0], [](double x) { return x > 0.0 ? x : 0.0; });
    case OpKind::kSoftmax: {
      expect_arity(kind, in.size(), 1);
      if (in[0]->rank() == 0) throw ShapeError("softmax: scalar operand");
      Tensor out = Tensor::zeros(in[0]->shape());
      const Matrix& x = in[0]->mat();
      for (Index r = 0; r < x.rows(); ++r) {
        auto e = (x.row(r).array() - x.row(r).maxCoeff()).exp();
        out.mat().row(r) = e / e.sum();
      }
      return out;
    }
    case OpKind::kLayerNorm: {
      expect_arity(kind, in.size(), 1);
      if (in[0]->rank() == 0) throw ShapeError("layer_norm: scalar operand");
      Tensor out = Tensor::zeros(in[0]->shape());
      const Matrix& x = in[0]->mat();
      for (Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        out.mat().row(r) = (x.row(r).array() - mu) / std::sqrt(var + attrs.scalar);
      }
      return out;
    }
    case OpKind::kStackRows: {
      if (in.empty()) throw ShapeError("stack_rows: no inputs");
      Matrix out(static_cast<Index>(in.size()), in[0]->cols());
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i]->rank() != 1 || in[i]->cols() != in[0]->cols()) shape_mismatch(kind, in[0]->shape(), in[i]->shape());
        out.row(static_cast<Index>(i)) = in[i]->mat().row(0);
      }
      return Tensor::matrix(std::move(out));
    }
    case OpKind::kLeaf:
      break;
  }
  throw ShapeError("apply: leaf is not an operation");
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kConcat: return "concat";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSquare: return "square";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kL2Norm: return "l2norm";
    case OpKind::kDot: return "dot";
    case OpKind::kCosine: return "cosine";
    case OpKind::kAbs: return "abs";
    case OpKind::kHuber: return "huber";
    case OpKind::kRowMean: return "row_mean";
    case OpKind::kGatherMean: return "gather_mean";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kStackRows: return "stack_rows";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!tape_) throw Error("use of an unbound Var");
  return tape_->nodes_.at(id_).value;
}

bool Var::requires_grad() const { return tape_->nodes_.at(id_).requires_grad; }

const Tensor& Gradients::operator[](const Var& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) throw Error("no gradient recorded for node " + std::to_string(leaf.id()));
  return it->second;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  value.set_requires_grad(requires_grad);
  return record(OpKind::kLeaf, {}, std::move(value), {}, requires_grad);
}

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, OpAttrs attrs, bool requires_grad) {
  if (consumed_) throw Error("tape already consumed by backward(); reset() before recording");
  value.set_requires_grad(requires_grad);
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), std::move(attrs), requires_grad});
  return Var(this, nodes_.size() - 1);
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

Gradients Tape::backward(const Var& output) {
  if (&output.tape() != this) throw Error("backward: output recorded on a different tape");
  if (consumed_) throw Error("backward: already run on this tape; reset() first");
  const Node& out = nodes_.at(output.id());
  if (out.value.size() != 1) throw ShapeError("backward: output must be scalar, got " + to_string(out.value.shape()));
  if (!out.requires_grad) throw Error("backward: output does not depend on any requires_grad leaf");

  std::vector<Matrix> grads(nodes_.size());
  grads[output.id()] = Matrix::Ones(1, 1);
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.requires_grad || node.kind == OpKind::kLeaf || grads[i].size() == 0) continue;
    propagate(node, grads[i], grads);
    grads[i] = Matrix();
  }
  consumed_ = true;

  Gradients result;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (node.kind != OpKind::kLeaf || !node.requires_grad) continue;
    Tensor g = Tensor::zeros(node.value.shape());
    if (grads[i].size() != 0) g.mat() = grads[i];
    result.grads_.emplace(i, std::move(g));
  }
  return result;
}

void Tape::propagate(const Node& node, const Matrix& grad, std::vector<Matrix>& grads) const {
  auto push = [&](std::size_t slot, const Matrix& g) {
    const std::size_t id = node.inputs[slot];
    if (!nodes_[id].requires_grad) return;
    Matrix& acc = grads[id];
    const Matrix reduced = reduce_to(nodes_[id].value, g);
    if (acc.size() == 0) {
      acc = reduced;
    } else {
      acc += reduced;
    }
  };
  auto in = [&](std::size_t slot) -> const Tensor& { return nodes_[node.inputs[slot]].value; };
  auto broadcast_grad = [&](std::size_t other_slot, const Matrix& g, auto&& combine) {
    // g * other, broadcasting a scalar `other` over g.
    const Tensor& other = in(other_slot);
    if (is_scalar(other) && g.size() != 1) return Matrix(combine(g, Matrix::Constant(g.rows(), g.cols(), other.item())));
    if (g.size() == 1 && other.size() != 1) return Matrix(combine(Matrix::Constant(other.rows(), other.cols(), g(0, 0)), other.mat()));
    return Matrix(combine(g, other.mat()));
  };
  auto expand = [&](const Matrix& g, const Tensor& target) -> Matrix {
    if (g.size() == 1 && target.size() != 1) return Matrix::Constant(target.rows(), target.cols(), g(0, 0));
    return g;
  };
  const Tensor& y = node.value;

  switch (node.kind) {
    case OpKind::kAdd:
      push(0, expand(grad, in(0)));
      push(1, expand(grad, in(1)));
      break;
    case OpKind::kSub:
      push(0, expand(grad, in(0)));
      push(1, -expand(grad, in(1)));
      break;
    case OpKind::kMul: {
      auto prod = [](const Matrix& a, const Matrix& b) { return a.cwiseProduct(b); };
      push(0, broadcast_grad(1, grad, prod));
      push(1, broadcast_grad(0, grad, prod));
      break;
    }
    case OpKind::kScale:
      push(0, node.attrs.scalar * grad);
      break;
    case OpKind::kMatmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const Matrix g = matmul_grad_layout(a, b, grad);
      const Matrix left = left_operand(a);
      const Matrix right = right_operand(b);
      push(0, g * right.transpose());
      Matrix gb = left.transpose() * g;
      if (b.rank() == 1) gb.transposeInPlace();
      push(1, gb);
      break;
    }
    case OpKind::kConcat: {
      Index offset = 0;
      for (std::size_t slot = 0; slot < node.inputs.size(); ++slot) {
        const Index cols = in(slot).cols();
        push(slot, grad.middleCols(offset, cols));
        offset += cols;
      }
      break;
    }
    case OpKind::kMean: {
      const Tensor& a = in(0);
      push(0, Matrix::Constant(a.rows(), a.cols(), grad(0, 0) / static_cast<double>(a.size())));
      break;
    }
    case OpKind::kSum: {
      const Tensor& a = in(0);
      push(0, Matrix::Constant(a.rows(), a.cols(), grad(0, 0)));
      break;
    }
    case OpKind::kSigmoid:
      push(0, grad.cwiseProduct(y.mat().unaryExpr([](double s) { return s * (1.0 - s); })));
      break;
    case OpKind::kSoftplus:
      push(0, grad.cwiseProduct(in(0).mat().unaryExpr([](double x) { return stable_sigmoid(x); })));
      break;
    case OpKind::kTanh:
      push(0, grad.cwiseProduct(y.mat().unaryExpr([](double t) { return 1.0 - t * t; })));
      break;
    case OpKind::kSquare:
      push(0, 2.0 * grad.cwiseProduct(in(0).mat()));
      break;
    case OpKind::kSqrt:
      push(0, grad.cwiseQuotient(2.0 * y.mat()));
      break;
    case OpKind::kAbs:
      push(0, grad.cwiseProduct(in(0).mat().unaryExpr([](double x) { return double((x > 0) - (x < 0)); })));
      break;
    case OpKind::kHuber: {
      const double delta = node.attrs.scalar;
      push(0, grad.cwiseProduct(in(0).mat().unaryExpr([delta](double x) { return std::clamp(x, -delta, delta); })));
      break;
    }
    case OpKind::kL2Norm: {
      const Vector g = grad_as_rows(grad);
      const Vector norms = grad_as_rows(y.mat());
      Matrix out = in(0).mat();
      for (Index r = 0; r < out.rows(); ++r) out.row(r) *= g(r) / norms(r);
      push(0, out);
      break;
    }
    case OpKind::kDot: {
      const Vector g = grad_as_rows(grad);
      push(0, g.asDiagonal() * in(1).mat());
      push(1, g.asDiagonal() * in(0).mat());
      break;
    }
    case OpKind::kCosine: {
      const Matrix& a = in(0).mat();
      const Matrix& b = in(1).mat();
      const Vector g = grad_as_rows(grad);
      const Vector cos = grad_as_rows(y.mat());
      const Vector na = a.rowwise().norm();
      const Vector nb = b.rowwise().norm();
      Matrix ga(a.rows(), a.cols());
      Matrix gb(b.rows(), b.cols());
      for (Index r = 0; r < a.rows(); ++r) {
        const double inv = 1.0 / (na(r) * nb(r));
        ga.row(r) = g(r) * (b.row(r) * inv - cos(r) * a.row(r) / (na(r) * na(r)));
        gb.row(r) = g(r) * (a.row(r) * inv - cos(r) * b.row(r) / (nb(r) * nb(r)));
      }
      push(0, ga);
      push(1, gb);
      break;
    }
    case OpKind::kRowMean: {
      const Tensor& a = in(0);
      const Vector g = grad_as_rows(grad) / static_cast<double>(a.cols());
      push(0, g.replicate(1, a.cols()));
      break;
    }
    case OpKind::kGatherMean: {
      const Tensor& table = in(0);
      Matrix out = Matrix::Zero(table.rows(), table.cols());
      for (std::size_t gi = 0; gi < node.attrs.groups.size(); ++gi) {
        const auto& group = node.attrs.groups[gi];
        if (group.empty()) continue;
        const double w = 1.0 / static_cast<double>(group.size());
        for (Index id : group) out.row(id) += w * grad.row(static_cast<Index>(gi));
      }
      push(0, out);
      break;
    }
    case OpKind::kAddBias:
      push(0, grad);
      push(1, grad.colwise().sum());
      break;
    case OpKind::kRelu:
      push(0, grad.cwiseProduct(in(0).mat().unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; })));
      break;
    case OpKind::kSoftmax: {
      const Matrix& s = y.mat();
      Matrix out(s.rows(), s.cols());
      for (Index r = 0; r < s.rows(); ++r) {
        const double inner = grad.row(r).dot(s.row(r));
        out.row(r) = s.row(r).array() * (grad.row(r).array() - inner);
      }
      push(0, out);
      break;
    }
    case OpKind::kLayerNorm: {
      const Matrix& x = in(0).mat();
      const Matrix& n = y.mat();
      Matrix out(x.rows(), x.cols());
      const double cols = static_cast<double>(x.cols());
      for (Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double inv_std = 1.0 / std::sqrt(var + node.attrs.scalar);
        const double g_mean = grad.row(r).mean();
        const double gn_mean = grad.row(r).dot(n.row(r)) / cols;
        out.row(r) = inv_std * (grad.row(r).array() - g_mean - n.row(r).array() * gn_mean);
      }
      push(0, out);
      break;
    }
    case OpKind::kStackRows:
      for (std::size_t slot = 0; slot < node.inputs.size(); ++slot) push(slot, grad.row(static_cast<Index>(slot)));
      break;
    case OpKind::kLeaf:
      break;
  }
}

Var apply(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs) {
  if (inputs.empty()) throw ShapeError(std::string(op_name(kind)) + ": no inputs");
  Tape* tape = inputs.front().tape_;
  if (!tape) throw Error(std::string(op_name(kind)) + ": unbound input");
  std::vector<const Tensor*> values;
  std::vector<std::size_t> ids;
  bool requires_grad = false;
  values.reserve(inputs.size());
  ids.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape_ != tape) throw Error(std::string(op_name(kind)) + ": inputs live on different tapes");
    const Tape::Node& node = tape->nodes_.at(v.id_);
    values.push_back(&node.value);
    ids.push_back(v.id_);
    requires_grad = requires_grad || node.requires_grad;
  }
  Tensor value = evaluate(kind, values, attrs);
  return tape->record(kind, std::move(ids), std::move(value), attrs, requires_grad);
}

namespace {
Var unary(OpKind kind, const Var& a, OpAttrs attrs = {}) {
  const Var in[] = {a};
  return apply(kind, in, attrs);
}
Var binary(OpKind kind, const Var& a, const Var& b) {
  const Var in[] = {a, b};
  return apply(kind, in);
}
}  // namespace

Var add(const Var& a, const Var& b) { return binary(OpKind::kAdd, a, b); }
Var sub(const Var& a, const Var& b) { return binary(OpKind::kSub, a, b); }
Var mul(const Var& a, const Var& b) { return binary(OpKind::kMul, a, b); }
Var scale(const Var& a, double factor) { return unary(OpKind::kScale, a, OpAttrs{factor, {}}); }
Var matmul(const Var& a, const Var& b) { return binary(OpKind::kMatmul, a, b); }
Var concat(std::initializer_list<Var> parts) {
  return apply(OpKind::kConcat, std::span<const Var>(parts.begin(), parts.size()));
}
Var mean(const Var& a) { return unary(OpKind::kMean, a); }
Var sum(const Var& a) { return unary(OpKind::kSum, a); }
Var sigmoid(const Var& a) { return unary(OpKind::kSigmoid, a); }
Var softplus(const Var& a) { return unary(OpKind::kSoftplus, a); }
Var tanh(const Var& a) { return unary(OpKind::kTanh, a); }
Var square(const Var& a) { return unary(OpKind::kSquare, a); }
Var sqrt(const Var& a) { return unary(OpKind::kSqrt, a); }
Var l2norm(const Var& a) { return unary(OpKind::kL2Norm, a); }
Var dot(const Var& a, const Var& b) { return binary(OpKind::kDot, a, b); }
Var cosine(const Var& a, const Var& b) { return binary(OpKind::kCosine, a, b); }
Var abs(const Var& a) { return unary(OpKind::kAbs, a); }
Var huber(const Var& a, double delta) { return unary(OpKind::kHuber, a, OpAttrs{delta, {}}); }
Var row_mean(const Var& a) { return unary(OpKind::kRowMean, a); }
Var gather_mean(const Var& table, std::vector<std::vector<Index>> groups) {
  return unary(OpKind::kGatherMean, table, OpAttrs{0.0, std::move(groups)});
}
Var gather_rows(const Var& table, std::span<const Index> ids) {
  std::vector<std::vector<Index>> groups;
  groups.reserve(ids.size());
  for (Index id : ids) groups.push_back({id});
  return gather_mean(table, std::move(groups));
}
Var add_bias(const Var& x, const Var& bias) { return binary(OpKind::kAddBias, x, bias); }
Var relu(const Var& a) { return unary(OpKind::kRelu, a); }
Var softmax(const Var& a) { return unary(OpKind::kSoftmax, a); }
Var layer_norm(const Var& a, double eps) { return unary(OpKind::kLayerNorm, a, OpAttrs{eps, {}}); }
Var stack_rows(std::span<const Var> rows) { return apply(OpKind::kStackRows, rows); }

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator*(double factor, const Var& a) { return scale(a, factor); }
Var operator*(const Var& a, double factor) { return scale(a, factor); }
Var operator+(const Var& a, double offset) { return add(a, a.tape().constant(Tensor::scalar(offset))); }
Var operator-(double offset, const Var& a) { return sub(a.tape().constant(Tensor::scalar(offset)), a); }
Var operator-(const Var& a) { return scale(a, -1.0); }

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_difference_gradient: step must be positive");
  Tensor grad = Tensor::zeros(x.shape());
  Tensor probe = x;
  auto eval = [&](Index i) {
    const double v = f(probe);
    if (!std::isfinite(v)) {
      throw NumericalError("finite_difference_gradient: non-finite evaluation at coordinate " + std::to_string(i));
    }
    return v;
  };
  auto flat = probe.values();
  auto out = grad.values();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double original = flat[i];
    flat[i] = original + h;
    const double plus = eval(static_cast<Index>(i));
    flat[i] = original - h;
    const double minus = eval(static_cast<Index>(i));
    flat[i] = original;
    out[i] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  if (analytic.shape() != numeric.shape()) {
    throw ShapeError("max_relative_error: shape mismatch " + to_string(analytic.shape()) + " vs " +
                     to_string(numeric.shape()));
  }
  double worst = 0.0;
  auto a = analytic.values();
  auto n = numeric.values();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(n[i]), floor});
    worst = std::max(worst, std::abs(a[i] - n[i]) / denom);
  }
  return worst;
}

}  // namespace preferdiff
