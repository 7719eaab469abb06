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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "preferdiff/data.hpp"
#include "preferdiff/model.hpp"
#include "preferdiff/objective.hpp"
#include "preferdiff/sampler.hpp"
#include "preferdiff/schedule.hpp"

namespace preferdiff {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const;
};

/// First and second moments of one parameter, same shape as the parameter.
struct Moment {
  std::string name;
  Matrix m;
  Matrix v;
};

struct OptimizerState {
  AdamWConfig hp;
  std::int64_t step = 0;
  std::vector<Moment> moments;  // created on first update, in parameter order
};

/// A parameter and its gradient for one update.
struct ParamRef {
  std::string_view name;
  Matrix* value;
  const Matrix* grad;
};

/// Decoupled weight decay p <- p * (1 - lr * wd), then the bias-corrected
/// adaptive step. Throws NumericalError if a parameter becomes non-finite.
void adamw_update(OptimizerState& opt, std::span<const ParamRef> params);

/// Everything that changes during training.
struct TrainState {
  ModelParams params;
  ItemEmbeddingTable table;
  OptimizerState opt;
  int epoch = 0;  // completed epochs
};

/// Mean per-example loss of one batch on `model`'s tape.
///
/// Draw order per example: t ~ U{1..T}, the drop flag, eps+ then eps-. The
/// same t serves the positive and the negative-centroid branch. Rows without
/// negatives use the generation term alone. Throws NumericalError naming the
/// first example with a non-finite loss.
Var batch_loss(const BoundModel& model, const Batch& batch, const DiffusionSchedule& schedule,
               const LossConfig& loss, double p_u, Rng& rng);

/// batch_loss, backward and one AdamW update. Frozen tables are not updated.
double train_step(TrainState& state, const Batch& batch, const DiffusionSchedule& schedule, const LossConfig& loss,
                  double p_u, Rng& rng);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 64;
  int patience = 20;
  std::uint64_t seed = 42;
  double p_u = 0.1;
  int valid_ddim_steps = 4;
  int threads = 1;
  bool mask_history = false;
  LossConfig loss;
  SamplerConfig sampler;

  void validate(int total_steps) const;
};

/// Generator for epoch `epoch` (1-based); depends only on (seed, epoch) so a
/// resumed run replays the same stream.
Rng epoch_rng(std::uint64_t seed, int epoch);

/// One pass over `train`; returns the example-weighted mean loss.
double run_epoch(TrainState& state, std::span<const SequenceExample> train, const DiffusionSchedule& schedule,
                 const TrainConfig& cfg);

/// Counts epochs without a strictly higher metric.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);

  /// Returns true if `metric` is a new best.
  bool observe(int epoch, double metric);
  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  int stale_ = 0;
  int best_epoch_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_recall5 = 0.0;
  double valid_ndcg5 = 0.0;
  double wall_seconds = 0.0;
};

struct FitResult {
  TrainState best;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_recall5 = 0.0;
};

/// Trains from `state` until `cfg.epochs` or early stop on validation
/// Recall@5 (sampled with cfg.valid_ddim_steps). `on_epoch` sees each row.
FitResult fit(TrainState state, std::span<const SequenceExample> train, std::span<const SequenceExample> valid,
              const DiffusionSchedule& schedule, const TrainConfig& cfg,
              const std::function<void(const EpochLog&)>& on_epoch = {});

/// epoch,train_loss,valid_recall5,valid_ndcg5. Deterministic given the seed.
void write_train_log(std::ostream& out, std::span<const EpochLog> log);

/// epoch,wall_seconds.
void write_timing_log(std::ostream& out, std::span<const EpochLog> log);

/// 64-bit FNV-1a of `text`, as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

struct CheckpointInfo {
  int steps = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::string config_hash;
};

/// Writes `<prefix>.manifest` and one `<prefix>.<name>.bin` per tensor
/// (little-endian float32, row-major, manifest order).
void save_checkpoint(const std::filesystem::path& prefix, const TrainState& state, const CheckpointInfo& info);

struct LoadedCheckpoint {
  TrainState state;
  CheckpointInfo info;
};

/// Refuses to load when `expected_hash` is non-empty and differs from the
/// manifest. A blob of the wrong size is reported by tensor name.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& prefix, std::string_view expected_hash = {});

}  // namespace preferdiff
