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

#include <span>
#include <string_view>

#include "preferdiff/autodiff.hpp"
#include "preferdiff/tensor.hpp"

namespace preferdiff {

/// Distance between a denoised prediction and its clean target.
///
/// L1 and L2 are dimension-normalised (mean over coordinates), Huber uses
/// delta = 1, Cosine is 1 - cos(pred, target) and rejects zero vectors.
enum class MeasureKind { kL1, kL2, kHuber, kCosine };

std::string_view to_string(MeasureKind kind);
MeasureKind parse_measure(std::string_view text);

inline constexpr double kHuberDelta = 1.0;

struct LossConfig {
  double lambda = 0.4;
  MeasureKind measure = MeasureKind::kCosine;
  int negatives = 63;

  void validate() const;
};

/// Rank-1 operands give a scalar, rank-2 operands one value per row.
Var measure(MeasureKind kind, const Var& pred, const Var& target);
double measure(MeasureKind kind, const Vector& pred, const Vector& target);

Var simple_loss(const Var& pred_pos, const Var& e0_pos, MeasureKind kind);
double simple_loss(const Vector& pred_pos, const Vector& e0_pos, MeasureKind kind);

/// softplus(s_pos - s_neg), i.e. -log sigmoid(-(s_pos - s_neg)).
Var pairwise_upper(const Var& s_pos, const Var& s_neg);
double pairwise_upper(double s_pos, double s_neg);

/// Elementwise mean of the negatives.
Vector centroid(std::span<const Vector> negatives);

/// softplus(H * (s_pos - s_negcent)).
Var bpr_diff_c(const Var& s_pos, const Var& s_negcent, int negatives);
double bpr_diff_c(double s_pos, double s_negcent, int negatives);

/// softplus(|H| * (s_pos - mean(s_negs))), the per-negative form.
double bpr_diff_v(double s_pos, std::span<const double> s_negs);

/// lambda * simple_loss + (1 - lambda) * bpr_diff_c with H = cfg.negatives.
Var preferdiff_loss(const LossConfig& cfg, const Var& pred_pos, const Var& e0_pos, const Var& pred_negcent,
                    const Var& e0_negcent);
double preferdiff_loss(const LossConfig& cfg, const Vector& pred_pos, const Vector& e0_pos,
                       const Vector& pred_negcent, const Vector& e0_negcent);

/// Per-row PreferDiff loss from precomputed measures with a per-row
/// negative count. Rows with zero negatives contribute the generation term
/// alone.
Var preferdiff_rows(double lambda, const Var& s_pos, const Var& s_negcent, const Vector& negative_counts);

/// Weight 1 - sigmoid(logp_pos - logp_neg) on a hard-negative pair.
double gradient_weight(double logp_pos_proxy, double logp_neg_proxy);

}  // namespace preferdiff
