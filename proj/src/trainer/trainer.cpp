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

#include "preferdiff/trainer.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "preferdiff/errors.hpp"
#include "preferdiff/eval.hpp"

namespace preferdiff {

void AdamWConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0,1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

void adamw_update(OptimizerState& opt, std::span<const ParamRef> params) {
  const AdamWConfig& hp = opt.hp;
  ++opt.step;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(opt.step));
  for (const ParamRef& p : params) {
    Matrix& value = *p.value;
    const Matrix& grad = *p.grad;
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      throw ShapeError("adamw: gradient shape mismatch for " + std::string(p.name));
    }
    Moment* moment = nullptr;
    for (Moment& m : opt.moments) {
      if (m.name == p.name) moment = &m;
    }
    if (moment == nullptr) {
      opt.moments.push_back({std::string(p.name), Matrix::Zero(value.rows(), value.cols()),
                             Matrix::Zero(value.rows(), value.cols())});
      moment = &opt.moments.back();
    }
    if (hp.weight_decay != 0.0) value *= 1.0 - hp.lr * hp.weight_decay;
    moment->m = hp.beta1 * moment->m + (1.0 - hp.beta1) * grad;
    moment->v = hp.beta2 * moment->v + (1.0 - hp.beta2) * grad.cwiseAbs2();
    value.array() -= hp.lr * (moment->m.array() / bc1) / ((moment->v.array() / bc2).sqrt() + hp.eps);
    if (!value.allFinite()) throw NumericalError("non-finite parameter '" + std::string(p.name) + "' after update");
  }
}

Var batch_loss(const BoundModel& model, const Batch& batch, const DiffusionSchedule& schedule,
               const LossConfig& loss, double p_u, Rng& rng) {
  if (!(p_u >= 0.0 && p_u <= 1.0)) throw ConfigError("p_u must lie in [0,1]");
  if (!(loss.lambda >= 0.0 && loss.lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1]");
  const Index rows = batch.size();
  if (rows == 0) throw DataError("empty batch");
  if (static_cast<Index>(batch.negatives.size()) != rows) throw ShapeError("batch: one negative set per example");
  const Index d = model.dims().item_dim;
  Tape& tape = model.tape();

  std::uniform_int_distribution<int> pick_t(1, schedule.steps());
  std::bernoulli_distribution drop(p_u);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<int> steps(static_cast<std::size_t>(rows));
  std::vector<bool> keep(static_cast<std::size_t>(rows));
  Matrix signal(rows, d);
  Matrix noise_pos(rows, d);
  Matrix noise_neg(rows, d);
  for (Index i = 0; i < rows; ++i) {
    const int t = pick_t(rng);
    steps[static_cast<std::size_t>(i)] = t;
    keep[static_cast<std::size_t>(i)] = !drop(rng);
    const double ab = schedule.alpha_bar(t);
    const double noise_scale = std::sqrt(1.0 - ab);
    signal.row(i).setConstant(std::sqrt(ab));
    for (Index c = 0; c < d; ++c) noise_pos(i, c) = noise_scale * normal(rng);
    for (Index c = 0; c < d; ++c) noise_neg(i, c) = noise_scale * normal(rng);
  }

  std::vector<std::vector<ItemId>> histories;
  std::vector<ItemId> targets;
  std::vector<std::vector<Index>> groups;
  Vector counts(rows);
  for (Index i = 0; i < rows; ++i) {
    const SequenceExample& ex = batch.examples[static_cast<std::size_t>(i)];
    const auto& negs = batch.negatives[static_cast<std::size_t>(i)];
    histories.push_back(ex.history);
    targets.push_back(ex.target);
    counts(i) = static_cast<double>(negs.size());
    // An empty set keeps a placeholder group; its preference weight is zero.
    groups.push_back(negs.empty() ? std::vector<Index>{ex.target} : std::vector<Index>(negs.begin(), negs.end()));
  }

  const Var cond = mix_condition(model, encode_batch(model, histories), keep);
  const Var e0_pos = gather_rows(model.items(), targets);
  const Var e0_neg = gather_mean(model.items(), std::move(groups));
  const Var coef = tape.constant(Tensor::matrix(signal));
  const Var et_pos = mul(e0_pos, coef) + tape.constant(Tensor::matrix(noise_pos));
  const Var et_neg = mul(e0_neg, coef) + tape.constant(Tensor::matrix(noise_neg));
  const Var s_pos = measure(loss.measure, denoise_batch(model, et_pos, steps, cond), e0_pos);
  const Var s_neg = measure(loss.measure, denoise_batch(model, et_neg, steps, cond), e0_neg);
  const Var per_row = preferdiff_rows(loss.lambda, s_pos, s_neg, counts);

  const auto values = per_row.value().values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericalError("non-finite loss at batch example " + std::to_string(i) + " (user " +
                           std::to_string(batch.examples[i].user) + ", t = " + std::to_string(steps[i]) + ")");
    }
  }
  return mean(per_row);
}

double train_step(TrainState& state, const Batch& batch, const DiffusionSchedule& schedule, const LossConfig& loss,
                  double p_u, Rng& rng) {
  Tape tape;
  const BoundModel model(tape, state.params, &state.table, true);
  const Var objective = batch_loss(model, batch, schedule, loss, p_u, rng);
  const double value = objective.value().item();
  const Gradients grads = tape.backward(objective);

  std::vector<ParamRef> refs;
  auto& tensors = state.params.tensors();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    refs.push_back({tensors[k].name, &tensors[k].value.mat(), &grads[model.leaves()[k]].mat()});
  }
  if (state.table.trainable()) refs.push_back({"items", &state.table.weights(), &grads[model.items()].mat()});
  adamw_update(state.opt, refs);
  return value;
}

void TrainConfig::validate(int total_steps) const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (!(p_u >= 0.0 && p_u <= 1.0)) throw ConfigError("p_u must lie in [0,1]");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  loss.validate();
  sampler.validate(total_steps);
  SamplerConfig{valid_ddim_steps, sampler.guidance_w, sampler.seed}.validate(total_steps);
}

Rng epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x45504f43u};
  return Rng(seq);
}

double run_epoch(TrainState& state, std::span<const SequenceExample> train, const DiffusionSchedule& schedule,
                 const TrainConfig& cfg) {
  if (train.empty()) throw DataError("empty training set");
  Rng rng = epoch_rng(cfg.seed, state.epoch + 1);
  const std::vector<Batch> batches = make_batches(train, cfg.batch_size, cfg.loss.negatives, rng);
  double total = 0.0;
  for (const Batch& batch : batches) {
    total += train_step(state, batch, schedule, cfg.loss, cfg.p_u, rng) * static_cast<double>(batch.size());
  }
  ++state.epoch;
  return total / static_cast<double>(train.size());
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw ConfigError("patience must be at least 1");
}

bool EarlyStopping::observe(int epoch, double metric) {
  if (metric > best_) {
    best_ = metric;
    best_epoch_ = epoch;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

FitResult fit(TrainState state, std::span<const SequenceExample> train, std::span<const SequenceExample> valid,
              const DiffusionSchedule& schedule, const TrainConfig& cfg,
              const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate(schedule.steps());
  if (train.empty() || valid.empty()) throw DataError("fit needs non-empty train and valid sets");
  SamplerConfig quick = cfg.sampler;
  quick.ddim_steps = cfg.valid_ddim_steps;
  const EvalOptions options{cfg.threads, cfg.mask_history, {5}};

  FitResult result;
  result.best = state;
  EarlyStopping stopper(cfg.patience);
  while (state.epoch < cfg.epochs) {
    const auto start = std::chrono::steady_clock::now();
    EpochLog row;
    row.train_loss = run_epoch(state, train, schedule, cfg);
    row.epoch = state.epoch;
    const RankedResult scored = evaluate(state.params, state.table, schedule, valid, quick, options);
    row.valid_recall5 = scored.at(5).recall;
    row.valid_ndcg5 = scored.at(5).ndcg;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
    if (stopper.observe(row.epoch, row.valid_recall5)) result.best = state;
    if (stopper.should_stop()) break;
  }
  result.best_epoch = stopper.best_epoch();
  result.best_recall5 = stopper.best();
  return result;
}

void write_train_log(std::ostream& out, std::span<const EpochLog> log) {
  out << "epoch,train_loss,valid_recall5,valid_ndcg5\n";
  char buf[128];
  for (const EpochLog& row : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.6f,%.6f\n", row.epoch, row.train_loss, row.valid_recall5,
                  row.valid_ndcg5);
    out << buf;
  }
}

void write_timing_log(std::ostream& out, std::span<const EpochLog> log) {
  out << "epoch,wall_seconds\n";
  char buf[64];
  for (const EpochLog& row : log) {
    std::snprintf(buf, sizeof buf, "%d,%.3f\n", row.epoch, row.wall_seconds);
    out << buf;
  }
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

constexpr std::string_view kFormat = "preferdiff-checkpoint-1";

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct Blob {
  std::string name;
  const Matrix* value;
};

std::filesystem::path blob_path(const std::filesystem::path& prefix, const std::string& name) {
  return prefix.string() + "." + name + ".bin";
}

void write_blob(const std::filesystem::path& path, const Matrix& value) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  std::vector<char> bytes(static_cast<std::size_t>(value.size()) * 4);
  for (Index i = 0; i < value.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value.data()[i]));
    for (int b = 0; b < 4; ++b) bytes[static_cast<std::size_t>(i) * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

void read_blob(const std::filesystem::path& path, const std::string& name, Matrix& value) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint tensor '" + name + "': cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = static_cast<std::size_t>(value.size()) * 4;
  if (bytes.size() != expected) {
    throw DataError("checkpoint tensor '" + name + "': blob has " + std::to_string(bytes.size()) +
                    " bytes, expected " + std::to_string(expected));
  }
  for (Index i = 0; i < value.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[static_cast<std::size_t>(i) * 4 + b]))
              << (8 * b);
    }
    value.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
}

std::vector<Blob> blobs_of(const TrainState& state) {
  std::vector<Blob> blobs;
  blobs.push_back({"items", &state.table.weights()});
  for (const NamedTensor& t : state.params.tensors()) blobs.push_back({t.name, &t.value.mat()});
  for (const Moment& m : state.opt.moments) {
    blobs.push_back({"adam_m." + m.name, &m.m});
    blobs.push_back({"adam_v." + m.name, &m.v});
  }
  return blobs;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& prefix, const TrainState& state, const CheckpointInfo& info) {
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  const ModelDims& dims = state.params.dims();
  std::ostringstream manifest;
  manifest << "format=" << kFormat << '\n'
           << "item_count=" << state.table.count() << '\n'
           << "item_dim=" << dims.item_dim << '\n'
           << "cond_dim=" << dims.cond_dim << '\n'
           << "time_dim=" << dims.time_dim << '\n'
           << "hidden_dim=" << dims.denoiser_width() << '\n'
           << "encoder=" << to_string(dims.encoder) << '\n'
           << "max_len=" << dims.max_len << '\n'
           << "heads=" << dims.heads << '\n'
           << "mode=" << (state.table.trainable() ? "trainable" : "frozen") << '\n'
           << "T=" << info.steps << '\n'
           << "beta_start=" << format_double(info.beta_start) << '\n'
           << "beta_end=" << format_double(info.beta_end) << '\n'
           << "config_hash=" << info.config_hash << '\n'
           << "epoch=" << state.epoch << '\n'
           << "opt_step=" << state.opt.step << '\n'
           << "lr=" << format_double(state.opt.hp.lr) << '\n'
           << "beta1=" << format_double(state.opt.hp.beta1) << '\n'
           << "beta2=" << format_double(state.opt.hp.beta2) << '\n'
           << "eps=" << format_double(state.opt.hp.eps) << '\n'
           << "weight_decay=" << format_double(state.opt.hp.weight_decay) << '\n';
  for (const Blob& b : blobs_of(state)) {
    manifest << "tensor=" << b.name << ':' << b.value->rows() << 'x' << b.value->cols() << '\n';
    write_blob(blob_path(prefix, b.name), *b.value);
  }
  const std::filesystem::path path = prefix.string() + ".manifest";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << manifest.str();
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& prefix, std::string_view expected_hash) {
  const std::filesystem::path path = prefix.string() + ".manifest";
  std::ifstream in(path);
  if (!in) throw DataError("checkpoint manifest not found: " + path.string());

  std::map<std::string, std::string> kv;
  std::vector<std::pair<std::string, std::pair<Index, Index>>> tensors;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(path.string() + ": malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "tensor") {
      const auto colon = value.rfind(':');
      const auto x = value.rfind('x');
      if (colon == std::string::npos || x == std::string::npos || x < colon) {
        throw DataError(path.string() + ": malformed tensor line '" + line + "'");
      }
      tensors.push_back({value.substr(0, colon),
                         {std::stoll(value.substr(colon + 1, x - colon - 1)), std::stoll(value.substr(x + 1))}});
    } else {
      kv[key] = value;
    }
  }
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw DataError(path.string() + ": missing key '" + key + "'");
    return it->second;
  };
  if (get("format") != kFormat) throw DataError(path.string() + ": unsupported format '" + get("format") + "'");
  if (!expected_hash.empty() && get("config_hash") != expected_hash) {
    throw ConfigError("checkpoint " + path.string() + " was written for config hash " + get("config_hash") +
                      ", current config hashes to " + std::string(expected_hash));
  }

  LoadedCheckpoint loaded;
  loaded.info = {std::stoi(get("T")), std::stod(get("beta_start")), std::stod(get("beta_end")), get("config_hash")};

  ModelDims dims;
  dims.item_dim = std::stoll(get("item_dim"));
  dims.cond_dim = std::stoll(get("cond_dim"));
  dims.time_dim = std::stoll(get("time_dim"));
  dims.hidden_dim = std::stoll(get("hidden_dim"));
  dims.encoder = parse_encoder_kind(get("encoder"));
  dims.max_len = std::stoi(get("max_len"));
  dims.heads = std::stoi(get("heads"));
  Rng unused(0);
  TrainState& state = loaded.state;
  state.params = ModelParams::init(dims, unused);
  const Index count = std::stoll(get("item_count"));
  const EmbeddingMode mode = get("mode") == "frozen" ? EmbeddingMode::kFrozen : EmbeddingMode::kTrainable;
  state.table = ItemEmbeddingTable(Matrix::Zero(count, dims.item_dim), mode);
  state.epoch = std::stoi(get("epoch"));
  state.opt.step = std::stoll(get("opt_step"));
  state.opt.hp = {std::stod(get("lr")), std::stod(get("beta1")), std::stod(get("beta2")), std::stod(get("eps")),
                  std::stod(get("weight_decay"))};

  std::size_t model_tensors = 0;
  for (const auto& [name, shape] : tensors) {
    Matrix* target = nullptr;
    if (name == "items") {
      target = &state.table.weights();
      ++model_tensors;
    } else if (name.starts_with("adam_m.") || name.starts_with("adam_v.")) {
      const std::string param = name.substr(7);
      Moment* moment = nullptr;
      for (Moment& m : state.opt.moments) {
        if (m.name == param) moment = &m;
      }
      if (moment == nullptr) {
        state.opt.moments.push_back({param, Matrix(shape.first, shape.second), Matrix(shape.first, shape.second)});
        moment = &state.opt.moments.back();
      }
      target = name[5] == 'm' ? &moment->m : &moment->v;
    } else if (state.params.has(name)) {
      target = &state.params.get(name).mat();
      ++model_tensors;
    } else {
      throw DataError(path.string() + ": unknown tensor '" + name + "'");
    }
    if (target->rows() != shape.first || target->cols() != shape.second) {
      throw DataError("checkpoint tensor '" + name + "': manifest shape does not match the model");
    }
    read_blob(blob_path(prefix, name), name, *target);
  }
  if (model_tensors != state.params.tensors().size() + 1) {
    throw DataError(path.string() + ": manifest does not list every model tensor");
  }
  return loaded;
}

}  // namespace preferdiff
