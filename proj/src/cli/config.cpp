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

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <sstream>

#include "preferdiff/cli.hpp"
#include "preferdiff/errors.hpp"

namespace preferdiff {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string format_value(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

template <typename T>
std::string format_value(T x) {
  return std::to_string(x);
}

template <typename T>
T parse_value(std::string_view key, std::string_view text) {
  text = trim(text);
  T out{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ConfigError(std::string(key) + ": '" + std::string(text) + "' is not a valid number");
  }
  return out;
}

struct KeySpec {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
KeySpec number(std::string name, T RunConfig::*member, std::function<bool(T)> ok, std::string range) {
  return {name,
          [=](RunConfig& c, std::string_view text) {
            const T value = parse_value<T>(name, text);
            if (!ok(value)) {
              throw ConfigError(name + " = " + std::string(trim(text)) + " is out of range: must be " + range);
            }
            c.*member = value;
          },
          [=](const RunConfig& c) { return format_value(c.*member); }};
}

KeySpec integer(std::string name, int RunConfig::*member, int lo, int hi) {
  const std::string range = "in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]";
  return number<int>(std::move(name), member, [=](int x) { return x >= lo && x <= hi; }, range);
}

KeySpec real(std::string name, double RunConfig::*member, std::function<bool(double)> ok, std::string range) {
  return number<double>(
      std::move(name), member, [ok](double x) { return std::isfinite(x) && ok(x); }, std::move(range));
}

KeySpec text(std::string name, std::string RunConfig::*member, std::vector<std::string> choices = {}) {
  return {name,
          [=](RunConfig& c, std::string_view value) {
            const std::string v(trim(value));
            if (!choices.empty() && std::find(choices.begin(), choices.end(), v) == choices.end()) {
              std::string list;
              for (const auto& option : choices) list += (list.empty() ? "" : ", ") + option;
              throw ConfigError(name + " = '" + v + "' is not one of: " + list);
            }
            c.*member = v;
          },
          [=](const RunConfig& c) { return c.*member; }};
}

KeySpec flag(std::string name, bool RunConfig::*member) {
  return {name,
          [=](RunConfig& c, std::string_view value) {
            const std::string_view v = trim(value);
            if (v == "true" || v == "1") {
              c.*member = true;
            } else if (v == "false" || v == "0") {
              c.*member = false;
            } else {
              throw ConfigError(name + " = '" + std::string(v) + "' must be true or false");
            }
          },
          [=](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

const std::vector<KeySpec>& registry() {
  constexpr int kBig = std::numeric_limits<int>::max();
  auto open_unit = [](double x) { return x > 0.0 && x < 1.0; };
  auto closed_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  auto positive = [](double x) { return x > 0.0; };
  auto non_negative = [](double x) { return x >= 0.0; };
  static const std::vector<KeySpec> keys = {
      integer("T", &RunConfig::T, 1, 1000000),
      real("beta_start", &RunConfig::beta_start, open_unit, "in (0,1)"),
      real("beta_end", &RunConfig::beta_end, open_unit, "in (0,1)"),
      integer("dim", &RunConfig::dim, 1, 1 << 16),
      integer("cond_dim", &RunConfig::cond_dim, 0, 1 << 16),
      integer("time_dim", &RunConfig::time_dim, 2, 1 << 16),
      integer("hidden", &RunConfig::hidden, 0, 1 << 20),
      text("encoder", &RunConfig::encoder, {"gru", "transformer"}),
      integer("max_len", &RunConfig::max_len, 1, 4096),
      integer("heads", &RunConfig::heads, 1, 64),
      real("init_scale", &RunConfig::init_scale, positive, "positive"),
      real("lambda", &RunConfig::lambda, closed_unit, "in [0,1]"),
      text("measure", &RunConfig::measure, {"l1", "l2", "huber", "cosine"}),
      integer("negatives", &RunConfig::negatives, 1, kBig),
      integer("ddim_steps", &RunConfig::ddim_steps, 1, 1000000),
      real("guidance_w", &RunConfig::guidance_w, non_negative, "non-negative"),
      real("p_u", &RunConfig::p_u, closed_unit, "in [0,1]"),
      real("lr", &RunConfig::lr, positive, "positive"),
      real("weight_decay", &RunConfig::weight_decay, non_negative, "non-negative"),
      integer("batch_size", &RunConfig::batch_size, 1, kBig),
      integer("epochs", &RunConfig::epochs, 1, kBig),
      integer("patience", &RunConfig::patience, 1, kBig),
      integer("valid_ddim_steps", &RunConfig::valid_ddim_steps, 1, 1000000),
      number<std::uint64_t>("seed", &RunConfig::seed, [](std::uint64_t) { return true; }, "a 64-bit unsigned integer"),
      text("data", &RunConfig::data),
      text("embeddings", &RunConfig::embeddings),
      text("embedding_mode", &RunConfig::embedding_mode, {"id", "text"}),
      integer("min_count", &RunConfig::min_count, 1, kBig),
      {"split",
       [](RunConfig& c, std::string_view v) {
         const std::string s(trim(v));
         parse_split_ratios(s);
         c.split = s;
       },
       [](const RunConfig& c) { return c.split; }},
      integer("synth_users", &RunConfig::synth_users, 100, kBig),
      integer("synth_items", &RunConfig::synth_items, 20, kBig),
      integer("synth_clusters", &RunConfig::synth_clusters, 1, kBig),
      integer("synth_latent", &RunConfig::synth_latent, 1, 4096),
      real("synth_noise", &RunConfig::synth_noise, closed_unit, "in [0,1]"),
      integer("synth_min_len", &RunConfig::synth_min_len, 2, 100000),
      integer("synth_max_len", &RunConfig::synth_max_len, 2, 100000),
      text("out", &RunConfig::out),
      integer("threads", &RunConfig::threads, 1, 1024),
      flag("mask_history", &RunConfig::mask_history),
  };
  return keys;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> names;
  for (const KeySpec& k : registry()) names.push_back(k.name);
  return names;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  std::string name(trim(key));
  std::replace(name.begin(), name.end(), '-', '_');
  for (const KeySpec& k : registry()) {
    if (k.name == name) {
      k.set(cfg, value);
      return;
    }
  }
  const KeySpec* nearest = &registry().front();
  for (const KeySpec& k : registry()) {
    if (edit_distance(name, k.name) < edit_distance(name, nearest->name)) nearest = &k;
  }
  throw ConfigError("unknown config key '" + name + "'; did you mean '" + nearest->name + "'?");
}

void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view body = line;
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set_config_value(cfg, body.substr(0, eq), body.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<std::pair<std::string, std::string>>& overrides, const char* env_seed) {
  RunConfig cfg;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config file " + file->string());
    apply_config_text(cfg, in, file->string());
  }
  if (env_seed != nullptr && *env_seed != '\0') {
    try {
      set_config_value(cfg, "seed", env_seed);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("PREFERDIFF_SEED: ") + e.what());
    }
  }
  for (const auto& [key, value] : overrides) set_config_value(cfg, key, value);
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  if (beta_start > beta_end) throw ConfigError("beta_start must not exceed beta_end");
  if (ddim_steps > T) {
    throw ConfigError("ddim_steps (" + std::to_string(ddim_steps) + ") exceeds T (" + std::to_string(T) + ")");
  }
  if (valid_ddim_steps > T) throw ConfigError("valid_ddim_steps exceeds T");
  if (synth_clusters > synth_items) throw ConfigError("synth_clusters exceeds synth_items");
  if (synth_min_len > synth_max_len) throw ConfigError("synth_min_len exceeds synth_max_len");
  if (embedding_mode == "text" && embeddings.empty()) throw ConfigError("embedding_mode = text needs embeddings");
  if (time_dim % 2 != 0) throw ConfigError("time_dim must be even");
  if (encoder == "transformer" && model_dims().cond_dim % heads != 0) {
    throw ConfigError("cond_dim must be divisible by heads for the transformer encoder");
  }
}

ModelDims RunConfig::model_dims() const {
  ModelDims dims;
  dims.item_dim = dim;
  dims.cond_dim = cond_dim > 0 ? cond_dim : dim;
  dims.time_dim = time_dim;
  dims.hidden_dim = hidden;
  dims.encoder = parse_encoder_kind(encoder);
  dims.max_len = max_len;
  dims.heads = heads;
  return dims;
}

LossConfig RunConfig::loss_config() const { return {lambda, parse_measure(measure), negatives}; }

SamplerConfig RunConfig::sampler_config() const { return {ddim_steps, guidance_w, seed}; }

AdamWConfig RunConfig::adamw_config() const {
  AdamWConfig hp;
  hp.lr = lr;
  hp.weight_decay = weight_decay;
  return hp;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch_size;
  tc.patience = patience;
  tc.seed = seed;
  tc.p_u = p_u;
  tc.valid_ddim_steps = valid_ddim_steps;
  tc.threads = threads;
  tc.mask_history = mask_history;
  tc.loss = loss_config();
  tc.sampler = sampler_config();
  return tc;
}

SynthConfig RunConfig::synth_config() const {
  SynthConfig sc;
  sc.users = synth_users;
  sc.items = synth_items;
  sc.clusters = synth_clusters;
  sc.latent_dim = synth_latent;
  sc.noise = synth_noise;
  sc.min_length = synth_min_len;
  sc.max_length = synth_max_len;
  sc.seed = seed;
  return sc;
}

DiffusionSchedule RunConfig::schedule() const { return build_linear_schedule(T, beta_start, beta_end); }

std::string RunConfig::to_text() const {
  std::ostringstream out;
  for (const KeySpec& k : registry()) out << k.name << " = " << k.get(*this) << '\n';
  return out.str();
}

std::string RunConfig::structure_hash() const {
  static const char* const kStructural[] = {"T",       "beta_start", "beta_end", "dim",   "cond_dim",
                                            "time_dim", "hidden",     "encoder",  "max_len", "heads",
                                            "embedding_mode"};
  std::string canonical;
  for (const char* name : kStructural) {
    for (const KeySpec& k : registry()) {
      if (k.name == name) canonical += k.name + "=" + k.get(*this) + "\n";
    }
  }
  return fnv1a_hex(canonical);
}

}  // namespace preferdiff
