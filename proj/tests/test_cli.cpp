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

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "preferdiff/cli.hpp"
#include "preferdiff/errors.hpp"

using namespace preferdiff;

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "preferdiff");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// Small enough to run synth, train and evaluate in well under a second.
std::vector<std::string> tiny_run(const fs::path& dir) {
  return {"--out",           dir.string(), "--data",          (dir / "data.tsv").string(),
          "--synth_users",   "120",        "--synth_items",   "24",
          "--synth_clusters", "3",         "--min_count",     "1",
          "--dim",           "8",          "--time_dim",      "8",
          "--T",             "100",        "--ddim_steps",    "5",
          "--valid_ddim_steps", "2",       "--epochs",        "2",
          "--batch_size",    "16",         "--negatives",     "4",
          "--max_len",       "4",          "--lr",            "1e-3"};
}

std::vector<std::string> with(std::string command, std::vector<std::string> args) {
  args.insert(args.begin(), std::move(command));
  return args;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("empty config gives the shipped defaults") {
    TempDir dir("preferdiff_cli_defaults");
    { std::ofstream(dir.path / "empty.txt"); }
    const RunConfig cfg = parse_config(dir.path / "empty.txt", {});
    CHECK(cfg.lr == 1e-4);
    CHECK(cfg.weight_decay == 0.0);
    CHECK(cfg.lambda == 0.4);
    CHECK(cfg.guidance_w == 2.0);
    CHECK(cfg.T == 2000);
    CHECK(cfg.ddim_steps == 20);
    CHECK(cfg.p_u == 0.1);
    CHECK(cfg.beta_start == 1e-4);
    CHECK(cfg.beta_end == 0.02);
    CHECK(cfg.patience == 20);
    CHECK(cfg.split == "8:1:1");
    CHECK(cfg.min_count == 5);
    CHECK(cfg.max_len == 10);
  }

  TEST_CASE("precedence is defaults, file, environment seed, overrides") {
    TempDir dir("preferdiff_cli_precedence");
    {
      std::ofstream f(dir.path / "c.txt");
      f << "# comment\nlambda = 0.8\nseed = 5\nmeasure = l2\n";
    }
    const RunConfig file_only = parse_config(dir.path / "c.txt", {});
    CHECK(file_only.lambda == 0.8);
    CHECK(file_only.measure == "l2");
    const RunConfig over = parse_config(dir.path / "c.txt", {{"lambda", "0.6"}});
    CHECK(over.lambda == 0.6);
    CHECK(parse_config(dir.path / "c.txt", {}, "17").seed == 17);
    CHECK(parse_config(dir.path / "c.txt", {{"seed", "9"}}, "17").seed == 9);
    CHECK(parse_config(std::nullopt, {{"ddim-steps", "7"}}).ddim_steps == 7);
    CHECK_THROWS_AS(parse_config(std::nullopt, {}, "abc"), ConfigError);
    CHECK_THROWS_AS(parse_config(dir.path / "absent.txt", {}), ConfigError);
  }

  TEST_CASE("range and cross-key checks") {
    CHECK_THROWS_WITH_AS(parse_config(std::nullopt, {{"lambda", "1.5"}}), doctest::Contains("lambda"), ConfigError);
    CHECK_THROWS_AS(parse_config(std::nullopt, {{"ddim_steps", "3000"}}), ConfigError);
    CHECK_THROWS_AS(parse_config(std::nullopt, {{"T", "0"}}), ConfigError);
    CHECK_THROWS_AS(parse_config(std::nullopt, {{"measure", "l3"}}), ConfigError);
    CHECK_THROWS_AS(parse_config(std::nullopt, {{"batch_size", "ten"}}), ConfigError);
    CHECK_THROWS_AS(parse_config(std::nullopt, {{"split", "8:1"}}), ConfigError);
    CHECK_THROWS_AS(parse_config(std::nullopt, {{"mask_history", "maybe"}}), ConfigError);
    CHECK_THROWS_AS(parse_config(std::nullopt, {{"beta_start", "0.05"}}), ConfigError);
  }

  TEST_CASE("unknown keys suggest the nearest key") {
    CHECK_THROWS_WITH_AS(parse_config(std::nullopt, {{"lamda", "0.5"}}), doctest::Contains("did you mean 'lambda'"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config(std::nullopt, {{"guidance", "1"}}), doctest::Contains("'guidance_w'"),
                         ConfigError);
  }

  TEST_CASE("resolved config text reads back to the same config") {
    RunConfig cfg = parse_config(std::nullopt, {{"lambda", "0.3"}, {"lr", "0.00123"}, {"encoder", "transformer"}});
    std::istringstream in(cfg.to_text());
    RunConfig back;
    apply_config_text(back, in, "resolved");
    CHECK(back.to_text() == cfg.to_text());
    CHECK(back.structure_hash() == cfg.structure_hash());
    const std::string text = cfg.to_text();
    CHECK(config_keys().size() == static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
  }

  TEST_CASE("structure hash tracks only checkpoint-shaping keys") {
    const RunConfig base;
    RunConfig other = base;
    other.lambda = 0.9;
    other.epochs = 3;
    other.guidance_w = 0.5;
    CHECK(other.structure_hash() == base.structure_hash());
    other.dim = 32;
    CHECK(other.structure_hash() != base.structure_hash());
    other = base;
    other.T = 1000;
    CHECK(other.structure_hash() != base.structure_hash());
  }

  TEST_CASE("exit codes by error kind") {
    CHECK(exit_code_for(ConfigError("x")) == 2);
    CHECK(exit_code_for(DataError("x")) == 3);
    CHECK(exit_code_for(NumericalError("x")) == 4);
    CHECK(exit_code_for(std::runtime_error("x")) == 1);
  }

  TEST_CASE("command line errors are one machine-readable line") {
    const CliResult bad = cli({"train", "--lambda", "1.5"});
    CHECK(bad.code == 2);
    CHECK(bad.err.rfind("preferdiff: error kind=config exit=2 message=\"", 0) == 0);
    CHECK(std::count(bad.err.begin(), bad.err.end(), '\n') == 1);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"train", "stray"}).code == 2);
    CHECK(cli({"train", "--lambda"}).code == 2);
    const CliResult missing_data = cli({"train", "--data", "/nonexistent/interactions.tsv"});
    CHECK(missing_data.code == 3);
    CHECK(missing_data.err.find("kind=data") != std::string::npos);
  }

  TEST_CASE("evaluate with a missing checkpoint names the path") {
    TempDir dir("preferdiff_cli_missing");
    const auto args = tiny_run(dir.path);
    REQUIRE(cli(with("synth", args)).code == 0);
    std::vector<std::string> eval_args = with("evaluate", args);
    eval_args.push_back("--checkpoint");
    eval_args.push_back((dir.path / "nowhere").string());
    const CliResult r = cli(eval_args);
    CHECK(r.code == 3);
    CHECK(r.err.find("nowhere") != std::string::npos);
  }

  TEST_CASE("inspect without a checkpoint writes only the schedule") {
    TempDir dir("preferdiff_cli_inspect");
    const CliResult r = cli({"inspect", "--out", dir.path.string()});
    CHECK(r.code == 0);
    CHECK(fs::exists(dir.path / "inspect" / "schedule.csv"));
    CHECK_FALSE(fs::exists(dir.path / "inspect" / "covariance.csv"));
    CHECK_FALSE(fs::exists(dir.path / "inspect" / "gradient_weight.csv"));
    const std::string csv = slurp(dir.path / "inspect" / "schedule.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2001);
  }

  TEST_CASE("synth, train, evaluate and inspect end to end") {
    TempDir dir("preferdiff_cli_e2e");
    const auto args = tiny_run(dir.path);
    REQUIRE(cli(with("synth", args)).code == 0);
    CHECK(fs::exists(dir.path / "data.tsv"));
    CHECK(fs::exists(dir.path / "data.tsv.clusters.tsv"));
    const CliResult train = cli(with("train", args));
    REQUIRE(train.code == 0);
    for (const char* name : {"config.txt", "checkpoint.manifest", "train_log.csv", "train_time.csv"}) {
      CHECK(fs::exists(dir.path / name));
    }
    const CliResult eval = cli(with("evaluate", args));
    REQUIRE(eval.code == 0);
    const std::string metrics = slurp(dir.path / "metrics.csv");
    CHECK(metrics.rfind("split,K,recall,ndcg\n", 0) == 0);
    CHECK(metrics.find("test,10,") != std::string::npos);
    CHECK(metrics.find("valid,5,") != std::string::npos);

    std::vector<std::string> inspect_args = with("inspect", args);
    inspect_args.push_back("--checkpoint");
    inspect_args.push_back((dir.path / "checkpoint").string());
    REQUIRE(cli(inspect_args).code == 0);
    for (const char* name : {"schedule.csv", "gradient_weight.csv", "covariance.csv", "report.txt"}) {
      CHECK(fs::exists(dir.path / "inspect" / name));
    }

    // A different model shape must refuse the checkpoint.
    std::vector<std::string> reshaped = with("evaluate", args);
    reshaped.push_back("--dim");
    reshaped.push_back("16");
    CHECK(cli(reshaped).code == 2);

    // Re-running from the written config reproduces the outputs.
    const std::string log = slurp(dir.path / "train_log.csv");
    const fs::path replay = dir.path / "replay";
    const CliResult again = cli({"train", "--config", (dir.path / "config.txt").string(), "--out", replay.string()});
    REQUIRE(again.code == 0);
    CHECK(slurp(replay / "train_log.csv") == log);
    CHECK(slurp(replay / "checkpoint.items.bin") == slurp(dir.path / "checkpoint.items.bin"));
  }
}
