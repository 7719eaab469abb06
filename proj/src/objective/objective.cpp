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

#include "preferdiff/objective.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "preferdiff/errors.hpp"

namespace preferdiff {

namespace {

double softplus_value(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_negatives(int negatives) {
  if (negatives < 1) throw ConfigError("negative count must be at least 1, got " + std::to_string(negatives));
}

}  // namespace

std::string_view to_string(MeasureKind kind) {
  switch (kind) {
    case MeasureKind::kL1: return "l1";
    case MeasureKind::kL2: return "l2";
    case MeasureKind::kHuber: return "huber";
    case MeasureKind::kCosine: return "cosine";
  }
  return "unknown";
}

MeasureKind parse_measure(std::string_view text) {
  if (text == "l1") return MeasureKind::kL1;
  if (text == "l2") return MeasureKind::kL2;
  if (text == "huber") return MeasureKind::kHuber;
  if (text == "cosine") return MeasureKind::kCosine;
  throw ConfigError("unknown measure '" + std::string(text) + "' (expected l1, l2, huber or cosine)");
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1], got " + std::to_string(lambda));
  check_negatives(negatives);
}

Var measure(MeasureKind kind, const Var& pred, const Var& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("measure: shape mismatch " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  }
  switch (kind) {
    case MeasureKind::kL1: return row_mean(abs(pred - target));
    case MeasureKind::kL2: return row_mean(square(pred - target));
    case MeasureKind::kHuber: return row_mean(huber(pred - target, kHuberDelta));
    case MeasureKind::kCosine: return 1.0 - cosine(pred, target);
  }
  throw ConfigError("measure: unknown kind");
}

double measure(MeasureKind kind, const Vector& pred, const Vector& target) {
  Tape tape;
  return measure(kind, tape.constant(Tensor::vector(pred)), tape.constant(Tensor::vector(target))).value().item();
}

Var simple_loss(const Var& pred_pos, const Var& e0_pos, MeasureKind kind) { return measure(kind, pred_pos, e0_pos); }

double simple_loss(const Vector& pred_pos, const Vector& e0_pos, MeasureKind kind) {
  return measure(kind, pred_pos, e0_pos);
}

Var pairwise_upper(const Var& s_pos, const Var& s_neg) { return softplus(s_pos - s_neg); }

double pairwise_upper(double s_pos, double s_neg) { return softplus_value(s_pos - s_neg); }

Vector centroid(std::span<const Vector> negatives) {
  if (negatives.empty()) throw ConfigError("centroid: empty negative set");
  Vector acc = Vector::Zero(negatives.front().size());
  for (const Vector& v : negatives) {
    if (v.size() != acc.size()) throw ShapeError("centroid: negatives differ in dimension");
    acc += v;
  }
  return acc / static_cast<double>(negatives.size());
}

Var bpr_diff_c(const Var& s_pos, const Var& s_negcent, int negatives) {
  check_negatives(negatives);
  return softplus(static_cast<double>(negatives) * (s_pos - s_negcent));
}

double bpr_diff_c(double s_pos, double s_negcent, int negatives) {
  check_negatives(negatives);
  return softplus_value(static_cast<double>(negatives) * (s_pos - s_negcent));
}

double bpr_diff_v(double s_pos, std::span<const double> s_negs) {
  if (s_negs.empty()) throw ConfigError("bpr_diff_v: empty negative set");
  const double count = static_cast<double>(s_negs.size());
  const double mean_neg = std::accumulate(s_negs.begin(), s_negs.end(), 0.0) / count;
  return softplus_value(count * (s_pos - mean_neg));
}

Var preferdiff_loss(const LossConfig& cfg, const Var& pred_pos, const Var& e0_pos, const Var& pred_negcent,
                    const Var& e0_negcent) {
  cfg.validate();
  const Var generation = simple_loss(pred_pos, e0_pos, cfg.measure);
  const Var preference = bpr_diff_c(generation, measure(cfg.measure, pred_negcent, e0_negcent), cfg.negatives);
  return cfg.lambda * generation + (1.0 - cfg.lambda) * preference;
}

double preferdiff_loss(const LossConfig& cfg, const Vector& pred_pos, const Vector& e0_pos,
                       const Vector& pred_negcent, const Vector& e0_negcent) {
  Tape tape;
  auto leaf = [&](const Vector& v) { return tape.constant(Tensor::vector(v)); };
  return preferdiff_loss(cfg, leaf(pred_pos), leaf(e0_pos), leaf(pred_negcent), leaf(e0_negcent)).value().item();
}

Var preferdiff_rows(double lambda, const Var& s_pos, const Var& s_negcent, const Vector& negative_counts) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1]");
  const Tensor& sp = s_pos.value();
  if (sp.rank() != 1 || sp.size() != negative_counts.size() || s_negcent.shape() != sp.shape()) {
    throw ShapeError("preferdiff_rows: need matching per-row measures and counts");
  }
  Tape& tape = s_pos.tape();
  // Rows without negatives fall back to the generation term.
  Vector gen_weight(negative_counts.size());
  Vector pref_weight(negative_counts.size());
  for (Index i = 0; i < negative_counts.size(); ++i) {
    const bool has_negatives = negative_counts(i) > 0;
    gen_weight(i) = has_negatives ? lambda : 1.0;
    pref_weight(i) = has_negatives ? 1.0 - lambda : 0.0;
  }
  const Var counts = tape.constant(Tensor::vector(negative_counts));
  const Var preference = softplus(counts * (s_pos - s_negcent));
  return tape.constant(Tensor::vector(gen_weight)) * s_pos + tape.constant(Tensor::vector(pref_weight)) * preference;
}

double gradient_weight(double logp_pos_proxy, double logp_neg_proxy) {
  // 1 - sigmoid(x) == sigmoid(-x), without the cancellation for large x.
  return sigmoid_value(logp_neg_proxy - logp_pos_proxy);
}

}  // namespace preferdiff
