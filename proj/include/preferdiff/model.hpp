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

#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "preferdiff/autodiff.hpp"
#include "preferdiff/tensor.hpp"

namespace preferdiff {

using Rng = std::mt19937_64;
using ItemId = Index;

/// Standard-normal matrix scaled by `stddev`.
Matrix random_normal(Index rows, Index cols, Rng& rng, double stddev = 1.0);

enum class EmbeddingMode { kTrainable, kFrozen };

/// N x d item vectors. Row N (one past the end) is the padding id and is
/// never stored.
class ItemEmbeddingTable {
 public:
  ItemEmbeddingTable() = default;
  ItemEmbeddingTable(Matrix weights, EmbeddingMode mode);

  /// Elementwise N(0, scale^2) initialisation of a trainable table.
  static ItemEmbeddingTable standard_normal(Index count, Index dim, Rng& rng, double scale = 1.0);

  Index count() const { return weights_.rows(); }
  Index dim() const { return weights_.cols(); }
  ItemId padding_id() const { return count(); }
  EmbeddingMode mode() const { return mode_; }
  bool trainable() const { return mode_ == EmbeddingMode::kTrainable; }

  const Matrix& weights() const { return weights_; }
  Matrix& weights() { return weights_; }

 private:
  Matrix weights_;
  EmbeddingMode mode_ = EmbeddingMode::kTrainable;
};

enum class EncoderKind { kGru, kTransformer };

std::string_view to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(std::string_view text);

struct ModelDims {
  Index item_dim = 64;   // d
  Index cond_dim = 64;   // d_c
  Index time_dim = 64;   // sinusoidal step embedding
  Index hidden_dim = 0;  // denoiser width; 0 means 4 * item_dim
  EncoderKind encoder = EncoderKind::kGru;
  int max_len = 10;
  int heads = 2;  // transformer variant only

  Index denoiser_width() const { return hidden_dim > 0 ? hidden_dim : 4 * item_dim; }
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Every trainable weight except the item table, in checkpoint order.
///
/// GRU encoder: encoder.{w,u,b}_{z,r,n}. Transformer encoder: encoder.pos,
/// encoder.{wq,wk,wv,wo}, encoder.{ff1,ff2} with biases and two layer-norm
/// gains/biases. Denoiser: denoiser.w1/b1, w2/b2, w3 (bias-free output).
/// phi is the unconditional token.
class ModelParams {
 public:
  ModelParams() = default;

  static ModelParams init(const ModelDims& dims, Rng& rng);

  const ModelDims& dims() const { return dims_; }

  std::vector<NamedTensor>& tensors() { return tensors_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }

  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);
  bool has(std::string_view name) const;

  Vector phi() const { return get("phi").as_vector(); }

 private:
  void add(std::string name, Tensor value);

  ModelDims dims_;
  std::vector<NamedTensor> tensors_;
};

/// Sinusoidal step embedding with geometric frequencies 10000^(-k/half).
Vector time_embedding(int t, Index dim);

/// Encoder output M(c), or the unconditional token.
struct Condition {
  Vector vector;
  bool is_unconditional = false;
};

/// Model weights bound as leaves on one tape.
class BoundModel {
 public:
  /// `table` may be null when only the denoiser is needed.
  BoundModel(Tape& tape, const ModelParams& params, const ItemEmbeddingTable* table, bool requires_grad);

  Tape& tape() const { return *tape_; }
  const ModelDims& dims() const { return *dims_; }
  const Var& items() const { return items_; }
  ItemId padding_id() const { return padding_id_; }
  Var operator[](std::string_view name) const;

  /// Leaves in ModelParams order (items excluded).
  const std::vector<Var>& leaves() const { return leaves_; }

 private:
  Tape* tape_;
  const ModelDims* dims_;
  const ModelParams* params_;
  Var items_;
  ItemId padding_id_;
  std::vector<Var> leaves_;
};

/// Batched sequence encoder over left-padded histories (one row per example).
/// Rows whose history is entirely padding take phi. Returns [B, d_c].
Var encode_batch(const BoundModel& model, std::span<const std::vector<ItemId>> histories);

/// phi repeated over `rows` rows.
Var phi_rows(const BoundModel& model, Index rows);

/// Row i keeps `cond` when keep[i] is true, else takes phi.
Var mix_condition(const BoundModel& model, const Var& cond, const std::vector<bool>& keep);

/// F_theta([e_t | cond | time_embed(t)]) row by row; one step per row.
Var denoise_batch(const BoundModel& model, const Var& e_t, std::span<const int> steps, const Var& cond);

/// Single-sequence encoder; an empty history (all padding) yields phi.
Condition encode_sequence(const ModelParams& params, const ItemEmbeddingTable& table,
                          std::span<const ItemId> item_ids);

/// With probability p_u returns the unconditional token, else `cond`.
Condition drop_condition(const ModelParams& params, const Condition& cond, double p_u, Rng& rng);

Vector denoise(const ModelParams& params, const Vector& e_t, int t, const Condition& cond);

/// Denoiser on a batch without recording gradients. One step for all rows.
Matrix denoise_matrix(const ModelParams& params, const Matrix& e_t, int t, const Matrix& cond);

/// Encoder on a batch of histories without recording gradients.
Matrix encode_matrix(const ModelParams& params, const ItemEmbeddingTable& table,
                     std::span<const std::vector<ItemId>> histories);

}  // namespace preferdiff
