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

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>

#include "preferdiff/cli.hpp"
#include "preferdiff/errors.hpp"
#include "preferdiff/eval.hpp"

namespace preferdiff {

namespace fs = std::filesystem;

namespace {

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_resolved_config(const RunConfig& cfg) { open_output(fs::path(cfg.out) / "config.txt") << cfg.to_text(); }

struct PreparedData {
  InteractionLog log;
  DataSplit split;
};

PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData p;
  p.log = load_interactions(cfg.data, cfg.min_count);
  p.split = user_split(p.log, parse_split_ratios(cfg.split), cfg.max_len);
  return p;
}

ItemEmbeddingTable initial_table(const RunConfig& cfg, Index item_count, Rng& rng) {
  if (cfg.embedding_mode == "text") {
    ItemEmbeddingTable table = import_text_embeddings(cfg.embeddings, item_count);
    if (table.dim() != cfg.dim) {
      throw ConfigError("embedding file has d = " + std::to_string(table.dim()) + " but dim = " +
                        std::to_string(cfg.dim));
    }
    return table;
  }
  return ItemEmbeddingTable::standard_normal(item_count, cfg.dim, rng, cfg.init_scale);
}

std::string format_fixed(double x, const char* fmt = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, x);
  return buf;
}

}  // namespace

int cmd_synth(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const SyntheticData data = gen_synthetic(cfg.synth_config());
  const fs::path path = cfg.data;
  {
    std::ofstream out = open_output(path);
    write_interactions(out, data.log);
  }
  {
    std::ofstream out = open_output(path.string() + ".clusters.tsv");
    write_cluster_sidecar(out, data);
  }
  write_resolved_config(cfg);
  log << "synth: " << data.log.records.size() << " interactions, " << data.log.user_count() << " users, "
      << data.log.item_count() << " items -> " << path.string() << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const fs::path out_dir = cfg.out;
  write_resolved_config(cfg);
  const PreparedData data = prepare_data(cfg);
  const DiffusionSchedule schedule = cfg.schedule();

  Rng rng(cfg.seed);
  TrainState state;
  state.table = initial_table(cfg, data.log.item_count(), rng);
  state.params = ModelParams::init(cfg.model_dims(), rng);
  state.opt.hp = cfg.adamw_config();
  state.opt.hp.validate();

  log << "train: " << data.split.train.size() << " train / " << data.split.valid.size() << " valid / "
      << data.split.test.size() << " test sequences, " << data.log.item_count() << " items\n";
  const FitResult result = fit(state, data.split.train, data.split.valid, schedule, cfg.train_config(),
                               [&](const EpochLog& row) {
                                 log << "epoch " << row.epoch << " loss " << format_fixed(row.train_loss, "%.6g")
                                     << " valid R@5 " << format_fixed(row.valid_recall5) << " N@5 "
                                     << format_fixed(row.valid_ndcg5) << '\n';
                               });
  save_checkpoint(out_dir / "checkpoint", result.best,
                  CheckpointInfo{cfg.T, cfg.beta_start, cfg.beta_end, cfg.structure_hash()});
  {
    std::ofstream out = open_output(out_dir / "train_log.csv");
    write_train_log(out, result.log);
  }
  {
    std::ofstream out = open_output(out_dir / "train_time.csv");
    write_timing_log(out, result.log);
  }
  log << "train: best epoch " << result.best_epoch << " valid R@5 " << format_fixed(result.best_recall5) << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const fs::path& checkpoint, std::ostream& log) {
  cfg.validate();
  const LoadedCheckpoint loaded = load_checkpoint(checkpoint, cfg.structure_hash());
  write_resolved_config(cfg);
  const PreparedData data = prepare_data(cfg);
  if (loaded.state.table.count() != data.log.item_count()) {
    throw DataError("checkpoint has " + std::to_string(loaded.state.table.count()) + " items but the data has " +
                    std::to_string(data.log.item_count()));
  }
  const DiffusionSchedule schedule = cfg.schedule();
  const EvalOptions options{cfg.threads, cfg.mask_history, {5, 10}};
  std::vector<std::pair<std::string, RankedResult>> results;
  for (const auto& [name, set] : {std::pair{"valid", &data.split.valid}, std::pair{"test", &data.split.test}}) {
    results.emplace_back(name, evaluate(loaded.state.params, loaded.state.table, schedule, *set,
                                        cfg.sampler_config(), options));
  }
  {
    std::ofstream out = open_output(fs::path(cfg.out) / "metrics.csv");
    write_metrics_csv(out, results);
  }
  for (const auto& [name, result] : results) {
    for (const MetricAt& m : result.metrics) {
      log << name << " Recall@" << m.k << " = " << format_fixed(m.recall) << "  NDCG@" << m.k << " = "
          << format_fixed(m.ndcg) << '\n';
    }
  }
  return 0;
}

int cmd_inspect(const RunConfig& cfg, const std::optional<fs::path>& checkpoint, std::ostream& log) {
  cfg.validate();
  const fs::path dir = fs::path(cfg.out) / "inspect";
  write_resolved_config(cfg);
  {
    std::ofstream out = open_output(dir / "schedule.csv");
    write_schedule_csv(out, cfg.schedule());
  }
  log << "inspect: wrote " << (dir / "schedule.csv").string() << '\n';
  if (!checkpoint) return 0;

  const LoadedCheckpoint loaded = load_checkpoint(*checkpoint, cfg.structure_hash());
  {
    // Weight over the margin logp_neg - logp_pos.
    std::ofstream out = open_output(dir / "gradient_weight.csv");
    out << "margin,weight\n";
    for (int i = 0; i <= 200; ++i) {
      const double margin = -10.0 + 0.1 * i;
      out << format_fixed(margin, "%.1f") << ',' << format_fixed(gradient_weight(0.0, margin), "%.9g") << '\n';
    }
  }
  const CovarianceSummary cov = covariance_diagnostic(loaded.state.table.weights());
  {
    std::ofstream out = open_output(dir / "covariance.csv");
    for (Index r = 0; r < cov.covariance.rows(); ++r) {
      for (Index c = 0; c < cov.covariance.cols(); ++c) {
        out << (c ? "," : "") << format_fixed(cov.covariance(r, c), "%.9g");
      }
      out << '\n';
    }
  }
  {
    std::ofstream out = open_output(dir / "report.txt");
    out << "items = " << loaded.state.table.count() << "\ndim = " << loaded.state.table.dim()
        << "\ncovariance_diag_mean = " << format_fixed(cov.diag_mean, "%.9g")
        << "\ncovariance_offdiag_rms = " << format_fixed(cov.offdiag_rms, "%.9g") << '\n';
  }
  log << "inspect: covariance diagonal mean " << format_fixed(cov.diag_mean) << ", off-diagonal RMS "
      << format_fixed(cov.offdiag_rms) << '\n';
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const DataError*>(&e) != nullptr) return 3;
  if (dynamic_cast<const NumericalError*>(&e) != nullptr) return 4;
  return 1;
}

namespace {

std::string error_kind(int code) {
  switch (code) {
    case 2: return "config";
    case 3: return "data";
    case 4: return "numerical";
    default: return "internal";
  }
}

std::string one_line(std::string text) {
  for (char& c : text) {
    if (c == '\n' || c == '\r') c = ' ';
    if (c == '"') c = '\'';
  }
  return text;
}

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& args) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& arg = args[i];
    if (arg.rfind("--", 0) != 0 || arg.size() < 3) {
      throw ConfigError("unexpected argument '" + arg + "'; overrides take the form --key value");
    }
    const std::string body = arg.substr(2);
    if (const auto eq = body.find('='); eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else if (i + 1 < args.size()) {
      out.emplace_back(body, args[++i]);
    } else {
      throw ConfigError("override --" + body + " is missing a value");
    }
  }
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion sequential recommender with preference-aware training"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  std::string config_path;
  std::string checkpoint_path;
  auto add_command = [&](const char* name, const char* about, bool takes_checkpoint) {
    CLI::App* sub = app.add_subcommand(name, about);
    sub->allow_extras();
    sub->add_option("--config", config_path, "Config file of `key = value` lines");
    if (takes_checkpoint) sub->add_option("--checkpoint", checkpoint_path, "Checkpoint prefix (default <out>/checkpoint)");
    sub->footer("Any config key may be overridden with --key value (see config.txt in a run directory).");
    return sub;
  };
  CLI::App* train = add_command("train", "Train and write checkpoint + training log", false);
  CLI::App* evaluate_cmd = add_command("evaluate", "Full-ranking evaluation; writes metrics.csv", true);
  CLI::App* synth = add_command("synth", "Generate a synthetic interaction file", false);
  CLI::App* inspect = add_command("inspect", "Dump schedule, gradient-weight curve and covariance", true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "preferdiff: error kind=config exit=2 message=\"" << one_line(e.what()) << "\"\n";
    return 2;
  }

  try {
    CLI::App* chosen = app.get_subcommands().front();
    const auto overrides = parse_overrides(chosen->remaining());
    const std::optional<fs::path> file = config_path.empty() ? std::nullopt : std::optional<fs::path>(config_path);
    const RunConfig cfg = parse_config(file, overrides, std::getenv("PREFERDIFF_SEED"));
    const fs::path default_checkpoint = fs::path(cfg.out) / "checkpoint";
    if (chosen == train) return cmd_train(cfg, out);
    if (chosen == synth) return cmd_synth(cfg, out);
    if (chosen == evaluate_cmd) {
      return cmd_evaluate(cfg, checkpoint_path.empty() ? default_checkpoint : fs::path(checkpoint_path), out);
    }
    if (chosen == inspect) {
      return cmd_inspect(cfg, checkpoint_path.empty() ? std::nullopt : std::optional<fs::path>(checkpoint_path), out);
    }
    return 1;
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    err << "preferdiff: error kind=" << error_kind(code) << " exit=" << code << " message=\"" << one_line(e.what())
        << "\"\n";
    return code;
  }
}

}  // namespace preferdiff
