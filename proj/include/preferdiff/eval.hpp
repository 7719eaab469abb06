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

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "preferdiff/data.hpp"
#include "preferdiff/model.hpp"
#include "preferdiff/sampler.hpp"
#include "preferdiff/schedule.hpp"

namespace preferdiff {

/// 1 + #{j != target : scores[j] >= scores[target]}. The target loses ties.
Index rank_target(const Vector& scores, ItemId target);

/// Ranks `target` among all table rows by inner product with `e0_hat`.
Index rank_target(const Vector& e0_hat, const ItemEmbeddingTable& table, ItemId target);

/// mean[rank <= k].
double recall_at_k(std::span<const Index> ranks, int k);

/// mean[rank <= k ? 1 / log2(rank + 1) : 0]; one relevant item, so IDCG = 1.
double ndcg_at_k(std::span<const Index> ranks, int k);

struct MetricAt {
  int k = 0;
  double recall = 0.0;
  double ndcg = 0.0;
};

struct RankedResult {
  std::vector<Index> ranks;  // one per example, 1-based
  std::vector<MetricAt> metrics;

  const MetricAt& at(int k) const;
};

RankedResult summarize(std::vector<Index> ranks, std::span<const int> ks);

struct CovarianceSummary {
  Matrix covariance;
  double offdiag_rms = 0.0;
  double diag_mean = 0.0;
};

/// Sample covariance over rows (N - 1 normalisation), d x d.
CovarianceSummary covariance_diagnostic(const Matrix& table);

struct EvalOptions {
  int threads = 1;
  bool mask_history = false;  // history items other than the target score -inf
  std::vector<int> ks{5, 10};
};

/// One guided DDIM sample per example, ranked against the full table.
///
/// Example i draws its initial noise from stream `user`, and examples are
/// processed in fixed chunks, so the result does not depend on `threads`.
RankedResult evaluate(const ModelParams& params, const ItemEmbeddingTable& table, const DiffusionSchedule& schedule,
                      std::span<const SequenceExample> examples, const SamplerConfig& sampler,
                      const EvalOptions& options);

/// CSV with header split,K,recall,ndcg.
void write_metrics_csv(std::ostream& out, std::span<const std::pair<std::string, RankedResult>> results);

}  // namespace preferdiff
