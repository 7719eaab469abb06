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
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "preferdiff/data.hpp"
#include "preferdiff/model.hpp"
#include "preferdiff/objective.hpp"
#include "preferdiff/sampler.hpp"
#include "preferdiff/schedule.hpp"
#include "preferdiff/trainer.hpp"

namespace preferdiff {

/// Every tunable of a run. Defaults are the shipped desk-scale setting.
struct RunConfig {
  // schedule
  int T = 2000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  // model
  int dim = 64;
  int cond_dim = 0;  // 0 means dim
  int time_dim = 64;
  int hidden = 0;  // 0 means 4 * dim
  std::string encoder = "gru";
  int max_len = 10;
  int heads = 2;
  double init_scale = 1.0;
  // objective
  double lambda = 0.4;
  std::string measure = "cosine";
  int negatives = 63;
  // sampler
  int ddim_steps = 20;
  double guidance_w = 2.0;
  // trainer
  double p_u = 0.1;
  double lr = 1e-4;
  double weight_decay = 0.0;
  int batch_size = 64;
  int epochs = 50;
  int patience = 20;
  int valid_ddim_steps = 4;
  std::uint64_t seed = 42;
  // data
  std::string data = "run/interactions.tsv";
  std::string embeddings;
  std::string embedding_mode = "id";
  int min_count = 5;
  std::string split = "8:1:1";
  // synthetic generator
  int synth_users = 2000;
  int synth_items = 200;
  int synth_clusters = 8;
  int synth_latent = 16;
  double synth_noise = 0.2;
  int synth_min_len = 8;
  int synth_max_len = 20;
  // run
  std::string out = "run";
  int threads = 1;
  bool mask_history = false;

  /// Cross-key checks (ddim_steps <= T and the like).
  void validate() const;

  ModelDims model_dims() const;
  LossConfig loss_config() const;
  SamplerConfig sampler_config() const;
  TrainConfig train_config() const;
  AdamWConfig adamw_config() const;
  SynthConfig synth_config() const;
  DiffusionSchedule schedule() const;

  /// Resolved config as `key = value` lines; parse_config reads it back.
  std::string to_text() const;

  /// Hash over the keys that shape a checkpoint.
  std::string structure_hash() const;
};

/// All accepted keys, in to_text() order.
std::vector<std::string> config_keys();

/// Sets one key from text. Unknown keys name the nearest valid key.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

/// Reads `key = value` lines ('#' starts a comment).
void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& source);

/// defaults <- file <- PREFERDIFF_SEED (`env_seed`) <- overrides.
RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<std::pair<std::string, std::string>>& overrides,
                       const char* env_seed = nullptr);

int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& checkpoint, std::ostream& log);
int cmd_synth(const RunConfig& cfg, std::ostream& log);
int cmd_inspect(const RunConfig& cfg, const std::optional<std::filesystem::path>& checkpoint, std::ostream& log);

/// 2 config, 3 data, 4 numerical, 1 anything else.
int exit_code_for(const std::exception& e);

/// Full command line entry point. Errors become one stderr line:
/// `preferdiff: error kind=<kind> exit=<code> message="<text>"`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace preferdiff
