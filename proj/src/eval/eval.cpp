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

#include "preferdiff/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <ostream>
#include <thread>

#include "preferdiff/errors.hpp"

namespace preferdiff {

namespace {

constexpr std::size_t kChunk = 64;

void check_ranks(std::span<const Index> ranks, int k) {
  if (ranks.empty()) throw ConfigError("metric over an empty rank list");
  if (k < 1) throw ConfigError("K must be at least 1");
}

}  // namespace

Index rank_target(const Vector& scores, ItemId target) {
  if (scores.size() == 0) throw ConfigError("rank_target: empty table");
  if (target < 0 || target >= scores.size()) {
    throw DataError("rank_target: target " + std::to_string(target) + " outside [0, " + std::to_string(scores.size()) +
                    ")");
  }
  const double s = scores(target);
  Index above = 0;
  for (Index j = 0; j < scores.size(); ++j) {
    if (j != target && scores(j) >= s) ++above;
  }
  return above + 1;
}

Index rank_target(const Vector& e0_hat, const ItemEmbeddingTable& table, ItemId target) {
  if (e0_hat.size() != table.dim()) throw ShapeError("rank_target: embedding dimension mismatch");
  return rank_target(Vector(table.weights() * e0_hat), target);
}

double recall_at_k(std::span<const Index> ranks, int k) {
  check_ranks(ranks, k);
  double hits = 0.0;
  for (Index r : ranks) hits += r <= k ? 1.0 : 0.0;
  return hits / static_cast<double>(ranks.size());
}

double ndcg_at_k(std::span<const Index> ranks, int k) {
  check_ranks(ranks, k);
  double gain = 0.0;
  for (Index r : ranks) gain += r <= k ? 1.0 / std::log2(static_cast<double>(r) + 1.0) : 0.0;
  return gain / static_cast<double>(ranks.size());
}

const MetricAt& RankedResult::at(int k) const {
  for (const MetricAt& m : metrics) {
    if (m.k == k) return m;
  }
  throw ConfigError("no metrics recorded at K = " + std::to_string(k));
}

RankedResult summarize(std::vector<Index> ranks, std::span<const int> ks) {
  RankedResult result;
  for (int k : ks) result.metrics.push_back({k, recall_at_k(ranks, k), ndcg_at_k(ranks, k)});
  result.ranks = std::move(ranks);
  return result;
}

CovarianceSummary covariance_diagnostic(const Matrix& table) {
  if (table.rows() < 2) throw ConfigError("covariance needs at least 2 rows");
  const Matrix centered = table.rowwise() - table.colwise().mean();
  CovarianceSummary out;
  out.covariance = centered.transpose() * centered / static_cast<double>(table.rows() - 1);
  const Index d = out.covariance.rows();
  out.diag_mean = out.covariance.diagonal().mean();
  if (d > 1) {
    const double off_sq = out.covariance.squaredNorm() - out.covariance.diagonal().squaredNorm();
    out.offdiag_rms = std::sqrt(std::max(0.0, off_sq) / static_cast<double>(d * (d - 1)));
  }
  return out;
}

RankedResult evaluate(const ModelParams& params, const ItemEmbeddingTable& table, const DiffusionSchedule& schedule,
                      std::span<const SequenceExample> examples, const SamplerConfig& sampler,
                      const EvalOptions& options) {
  if (examples.empty()) throw DataError("evaluate: empty example set");
  if (options.threads < 1) throw ConfigError("threads must be at least 1");
  sampler.validate(schedule.steps());

  std::vector<Index> ranks(examples.size());
  const std::size_t chunks = (examples.size() + kChunk - 1) / kChunk;
  const NetworkDenoiser denoiser(params);

  auto run_chunk = [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t end = std::min(examples.size(), begin + kChunk);
    std::vector<std::vector<ItemId>> histories;
    std::vector<std::uint64_t> streams;
    for (std::size_t i = begin; i < end; ++i) {
      histories.push_back(examples[i].history);
      streams.push_back(static_cast<std::uint64_t>(examples[i].user));
    }
    const Matrix cond = encode_matrix(params, table, histories);
    const Matrix x0 = sample_batch(denoiser, schedule, cond, sampler, streams);
    const Matrix scores = x0 * table.weights().transpose();
    for (std::size_t i = begin; i < end; ++i) {
      Vector row = scores.row(static_cast<Index>(i - begin)).transpose();
      const SequenceExample& ex = examples[i];
      if (options.mask_history) {
        for (ItemId h : ex.history) {
          if (h != ex.target && h < table.count()) row(h) = -std::numeric_limits<double>::infinity();
        }
      }
      ranks[i] = rank_target(row, ex.target);
    }
  };

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(options.threads), chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t c = next++; c < chunks; c = next++) run_chunk(c);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return summarize(std::move(ranks), options.ks);
}

void write_metrics_csv(std::ostream& out, std::span<const std::pair<std::string, RankedResult>> results) {
  out << "split,K,recall,ndcg\n";
  char buf[96];
  for (const auto& [split, result] : results) {
    for (const MetricAt& m : result.metrics) {
      std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f", m.k, m.recall, m.ndcg);
      out << split << ',' << buf << '\n';
    }
  }
}

}  // namespace preferdiff
