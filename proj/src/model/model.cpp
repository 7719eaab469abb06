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

#include "preferdiff/model.hpp"

#include <algorithm>
#include <cmath>

#include "preferdiff/errors.hpp"

namespace preferdiff {

Matrix random_normal(Index rows, Index cols, Rng& rng, double stddev) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * normal(rng);
  return m;
}

ItemEmbeddingTable::ItemEmbeddingTable(Matrix weights, EmbeddingMode mode)
    : weights_(std::move(weights)), mode_(mode) {
  if (weights_.rows() == 0 || weights_.cols() == 0) throw ShapeError("item table must be non-empty");
}

ItemEmbeddingTable ItemEmbeddingTable::standard_normal(Index count, Index dim, Rng& rng, double scale) {
  return ItemEmbeddingTable(random_normal(count, dim, rng, scale), EmbeddingMode::kTrainable);
}

std::string_view to_string(EncoderKind kind) { return kind == EncoderKind::kGru ? "gru" : "transformer"; }

EncoderKind parse_encoder_kind(std::string_view text) {
  if (text == "gru") return EncoderKind::kGru;
  if (text == "transformer") return EncoderKind::kTransformer;
  throw ConfigError("unknown encoder '" + std::string(text) + "' (expected gru or transformer)");
}

void ModelParams::add(std::string name, Tensor value) { tensors_.push_back({std::move(name), std::move(value)}); }

ModelParams ModelParams::init(const ModelDims& dims, Rng& rng) {
  if (dims.item_dim < 1 || dims.cond_dim < 1 || dims.time_dim < 2 || dims.time_dim % 2 != 0) {
    throw ConfigError("model: dims must be positive and time_dim even");
  }
  if (dims.max_len < 1) throw ConfigError("model: max_len must be at least 1");
  ModelParams p;
  p.dims_ = dims;
  const Index d = dims.item_dim;
  const Index dc = dims.cond_dim;
  // Weights ~ N(0, 1/fan_in); biases start at zero.
  auto weight = [&](Index fan_in, Index fan_out) {
    return Tensor::matrix(random_normal(fan_in, fan_out, rng, 1.0 / std::sqrt(static_cast<double>(fan_in))));
  };
  auto zeros = [](Index n) { return Tensor::zeros({n}); };

  if (dims.encoder == EncoderKind::kGru) {
    for (const char* gate : {"z", "r", "n"}) {
      p.add(std::string("encoder.w_") + gate, weight(d, dc));
      p.add(std::string("encoder.u_") + gate, weight(dc, dc));
      p.add(std::string("encoder.b_") + gate, zeros(dc));
    }
  } else {
    if (dims.heads < 1 || dc % dims.heads != 0) throw ConfigError("model: cond_dim must be divisible by heads");
    const Index dh = dc / dims.heads;
    p.add("encoder.w_in", weight(d, dc));
    p.add("encoder.pos", Tensor::matrix(random_normal(dims.max_len, dc, rng, 0.1)));
    for (int h = 0; h < dims.heads; ++h) {
      const std::string suffix = std::to_string(h);
      p.add("encoder.wq" + suffix, weight(dc, dh));
      p.add("encoder.wk" + suffix, weight(dc, dh));
      p.add("encoder.wv" + suffix, weight(dc, dh));
    }
    p.add("encoder.wo", weight(dc, dc));
    p.add("encoder.ln1_g", Tensor::filled({dc}, 1.0));
    p.add("encoder.ln1_b", zeros(dc));
    p.add("encoder.ff1", weight(dc, 4 * dc));
    p.add("encoder.ff1_b", zeros(4 * dc));
    p.add("encoder.ff2", weight(4 * dc, dc));
    p.add("encoder.ff2_b", zeros(dc));
    p.add("encoder.ln2_g", Tensor::filled({dc}, 1.0));
    p.add("encoder.ln2_b", zeros(dc));
  }

  const Index width = dims.denoiser_width();
  p.add("denoiser.w1", weight(d + dc + dims.time_dim, width));
  p.add("denoiser.b1", zeros(width));
  p.add("denoiser.w2", weight(width, width));
  p.add("denoiser.b2", zeros(width));
  p.add("denoiser.w3", weight(width, d));
  p.add("phi", Tensor::vector(random_normal(dc, 1, rng).col(0)));
  return p;
}

const Tensor& ModelParams::get(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t.value;
  }
  throw Error("model has no tensor named '" + std::string(name) + "'");
}

Tensor& ModelParams::get(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ModelParams&>(*this).get(name));
}

bool ModelParams::has(std::string_view name) const {
  return std::any_of(tensors_.begin(), tensors_.end(), [&](const NamedTensor& t) { return t.name == name; });
}

Vector time_embedding(int t, Index dim) {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("time embedding dim must be even and >= 2");
  const Index half = dim / 2;
  Vector out(dim);
  for (Index k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    out(k) = std::sin(t * freq);
    out(half + k) = std::cos(t * freq);
  }
  return out;
}

BoundModel::BoundModel(Tape& tape, const ModelParams& params, const ItemEmbeddingTable* table, bool requires_grad)
    : tape_(&tape), dims_(&params.dims()), params_(&params), padding_id_(table ? table->padding_id() : 0) {
  if (table) {
    if (table->dim() != params.dims().item_dim) {
      throw ShapeError("item table dim " + std::to_string(table->dim()) + " != model item dim " +
                       std::to_string(params.dims().item_dim));
    }
    items_ = tape.leaf(Tensor::matrix(table->weights()), requires_grad && table->trainable());
  }
  leaves_.reserve(params.tensors().size());
  for (const auto& t : params.tensors()) leaves_.push_back(tape.leaf(t.value, requires_grad));
}

Var BoundModel::operator[](std::string_view name) const {
  const auto& tensors = params_->tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name == name) return leaves_[i];
  }
  throw Error("model has no tensor named '" + std::string(name) + "'");
}

namespace {

void check_history(const BoundModel& model, const std::vector<ItemId>& history) {
  if (static_cast<int>(history.size()) > model.dims().max_len) {
    throw DataError("history length " + std::to_string(history.size()) + " exceeds max_len " +
                    std::to_string(model.dims().max_len));
  }
  for (ItemId id : history) {
    if (id < 0 || id > model.padding_id()) throw DataError("unknown item " + std::to_string(id));
  }
}

Var gru_step(const BoundModel& m, const Var& x, const Var& h) {
  auto gate = [&](const char* g, const Var& hidden) {
    const std::string s(g);
    return add_bias(matmul(x, m["encoder.w_" + s]) + matmul(hidden, m["encoder.u_" + s]), m["encoder.b_" + s]);
  };
  const Var z = sigmoid(gate("z", h));
  const Var r = sigmoid(gate("r", h));
  const Var n = tanh(add_bias(matmul(x, m["encoder.w_n"]) + matmul(r * h, m["encoder.u_n"]), m["encoder.b_n"]));
  // (1 - z) * n + z * h
  return n + z * (h - n);
}

// Hidden state after the non-padding items of each row, in order. Histories
// are aligned right; a row stays at zero until its first real item.
Var encode_gru(const BoundModel& m, std::span<const std::vector<ItemId>> histories) {
  const Index batch = static_cast<Index>(histories.size());
  const Index dc = m.dims().cond_dim;
  std::size_t width = 0;
  for (const auto& h : histories) width = std::max(width, h.size());
  Tape& tape = m.tape();
  Var h = tape.constant(Tensor::zeros({batch, dc}));
  for (std::size_t step = 0; step < width; ++step) {
    std::vector<std::vector<Index>> groups(histories.size());
    Matrix mask = Matrix::Zero(batch, dc);
    bool any = false;
    for (std::size_t b = 0; b < histories.size(); ++b) {
      const auto& hist = histories[b];
      const std::size_t offset = width - hist.size();
      if (step < offset) continue;
      const ItemId id = hist[step - offset];
      if (id == m.padding_id()) continue;
      groups[b].push_back(id);
      mask.row(static_cast<Index>(b)).setOnes();
      any = true;
    }
    if (!any) continue;
    const Var x = gather_mean(m.items(), std::move(groups));
    const Var next = gru_step(m, x, h);
    h = h + tape.constant(Tensor::matrix(std::move(mask))) * (next - h);
  }
  return h;
}

Var encode_one_transformer(const BoundModel& m, const std::vector<ItemId>& real) {
  Tape& tape = m.tape();
  const auto& dims = m.dims();
  const Index len = static_cast<Index>(real.size());
  const Index dc = dims.cond_dim;
  const Index dh = dc / dims.heads;
  std::vector<Index> positions(real.size());
  for (Index i = 0; i < len; ++i) positions[static_cast<std::size_t>(i)] = dims.max_len - len + i;
  const Var x = matmul(gather_rows(m.items(), real), m["encoder.w_in"]) + gather_rows(m["encoder.pos"], positions);

  Vector pick_last = Vector::Zero(len);
  pick_last(len - 1) = 1.0;
  const Var last = matmul(tape.constant(Tensor::vector(pick_last)), x);

  std::vector<Index> zeros(static_cast<std::size_t>(len), 0);
  std::vector<Var> heads;
  for (int hd = 0; hd < dims.heads; ++hd) {
    const std::string s = std::to_string(hd);
    const Var q = matmul(last, m["encoder.wq" + s]);
    const Var k = matmul(x, m["encoder.wk" + s]);
    const Var v = matmul(x, m["encoder.wv" + s]);
    const Var scores = scale(dot(k, gather_rows(q, zeros)), 1.0 / std::sqrt(static_cast<double>(dh)));
    heads.push_back(matmul(softmax(scores), v));
  }
  const Var attended = preferdiff::apply(OpKind::kConcat, std::span<const Var>(heads));
  const Var h1 = layer_norm(last + matmul(attended, m["encoder.wo"])) * m["encoder.ln1_g"] + m["encoder.ln1_b"];
  const Var ff = matmul(relu(matmul(h1, m["encoder.ff1"]) + m["encoder.ff1_b"]), m["encoder.ff2"]) + m["encoder.ff2_b"];
  return layer_norm(h1 + ff) * m["encoder.ln2_g"] + m["encoder.ln2_b"];
}

Var encode_transformer(const BoundModel& m, std::span<const std::vector<ItemId>> histories) {
  std::vector<Var> rows;
  rows.reserve(histories.size());
  const Var phi = m["phi"];
  for (const auto& hist : histories) {
    std::vector<ItemId> real;
    for (ItemId id : hist) {
      if (id != m.padding_id()) real.push_back(id);
    }
    rows.push_back(real.empty() ? phi : encode_one_transformer(m, real));
  }
  return stack_rows(rows);
}

}  // namespace

Var phi_rows(const BoundModel& model, Index rows) {
  std::vector<Index> zeros(static_cast<std::size_t>(rows), 0);
  return gather_rows(model["phi"], zeros);
}

Var mix_condition(const BoundModel& model, const Var& cond, const std::vector<bool>& keep) {
  const Index rows = static_cast<Index>(keep.size());
  if (cond.value().rows() != rows) throw ShapeError("mix_condition: keep mask length differs from batch");
  if (std::all_of(keep.begin(), keep.end(), [](bool k) { return k; })) return cond;
  Matrix mask(rows, model.dims().cond_dim);
  for (Index r = 0; r < rows; ++r) mask.row(r).setConstant(keep[static_cast<std::size_t>(r)] ? 1.0 : 0.0);
  Tape& tape = model.tape();
  const Var keep_mask = tape.constant(Tensor::matrix(mask));
  const Var drop_mask = tape.constant(Tensor::matrix(Matrix::Ones(rows, mask.cols()) - mask));
  return cond * keep_mask + phi_rows(model, rows) * drop_mask;
}

Var encode_batch(const BoundModel& model, std::span<const std::vector<ItemId>> histories) {
  if (histories.empty()) throw ShapeError("encode_batch: empty batch");
  if (!model.items().valid()) throw Error("encode_batch: model bound without an item table");
  std::vector<bool> keep_store(histories.size());
  for (std::size_t b = 0; b < histories.size(); ++b) {
    check_history(model, histories[b]);
    keep_store[b] = std::any_of(histories[b].begin(), histories[b].end(),
                                [&](ItemId id) { return id != model.padding_id(); });
  }
  if (model.dims().encoder == EncoderKind::kTransformer) return encode_transformer(model, histories);
  return mix_condition(model, encode_gru(model, histories), keep_store);
}

Var denoise_batch(const BoundModel& model, const Var& e_t, std::span<const int> steps, const Var& cond) {
  const auto& dims = model.dims();
  const Tensor& x = e_t.value();
  if (x.rank() != 2 || x.cols() != dims.item_dim) {
    throw ShapeError("denoise: e_t shape " + to_string(x.shape()) + " incompatible with item dim " +
                     std::to_string(dims.item_dim));
  }
  const Tensor& c = cond.value();
  if (c.rank() != 2 || c.cols() != dims.cond_dim || c.rows() != x.rows()) {
    throw ShapeError("denoise: condition shape " + to_string(c.shape()) + " incompatible with e_t " +
                     to_string(x.shape()));
  }
  if (static_cast<Index>(steps.size()) != x.rows()) throw ShapeError("denoise: one step per row required");
  Matrix times(x.rows(), dims.time_dim);
  for (Index r = 0; r < x.rows(); ++r) times.row(r) = time_embedding(steps[static_cast<std::size_t>(r)], dims.time_dim);
  const Var input = concat({e_t, cond, model.tape().constant(Tensor::matrix(std::move(times)))});
  const Var h1 = tanh(add_bias(matmul(input, model["denoiser.w1"]), model["denoiser.b1"]));
  const Var h2 = tanh(add_bias(matmul(h1, model["denoiser.w2"]), model["denoiser.b2"]));
  return matmul(h2, model["denoiser.w3"]);
}

Matrix encode_matrix(const ModelParams& params, const ItemEmbeddingTable& table,
                     std::span<const std::vector<ItemId>> histories) {
  Tape tape;
  BoundModel model(tape, params, &table, false);
  return encode_batch(model, histories).value().mat();
}

Matrix denoise_matrix(const ModelParams& params, const Matrix& e_t, int t, const Matrix& cond) {
  Tape tape;
  BoundModel model(tape, params, nullptr, false);
  std::vector<int> steps(static_cast<std::size_t>(e_t.rows()), t);
  return denoise_batch(model, tape.constant(Tensor::matrix(e_t)), steps, tape.constant(Tensor::matrix(cond)))
      .value()
      .mat();
}

Condition encode_sequence(const ModelParams& params, const ItemEmbeddingTable& table,
                          std::span<const ItemId> item_ids) {
  std::vector<ItemId> history(item_ids.begin(), item_ids.end());
  for (ItemId id : history) {
    if (id < 0 || id > table.padding_id()) throw DataError("unknown item " + std::to_string(id));
  }
  const bool empty = std::all_of(history.begin(), history.end(), [&](ItemId id) { return id == table.padding_id(); });
  if (empty) return Condition{params.phi(), true};
  const std::vector<ItemId> batch[] = {history};
  const Matrix out = encode_matrix(params, table, batch);
  return Condition{out.row(0).transpose(), false};
}

Condition drop_condition(const ModelParams& params, const Condition& cond, double p_u, Rng& rng) {
  if (!(p_u >= 0.0 && p_u <= 1.0)) throw ConfigError("p_u must lie in [0,1]");
  std::bernoulli_distribution drop(p_u);
  if (drop(rng)) return Condition{params.phi(), true};
  return cond;
}

Vector denoise(const ModelParams& params, const Vector& e_t, int t, const Condition& cond) {
  if (e_t.size() != params.dims().item_dim || cond.vector.size() != params.dims().cond_dim) {
    throw ShapeError("denoise: expected e_t of dim " + std::to_string(params.dims().item_dim) + " and condition of dim " +
                     std::to_string(params.dims().cond_dim));
  }
  return denoise_matrix(params, e_t.transpose(), t, cond.vector.transpose()).row(0).transpose();
}

}  // namespace preferdiff
