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

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "preferdiff/errors.hpp"
#include "preferdiff/model.hpp"
#include "preferdiff/schedule.hpp"

namespace preferdiff {

struct SamplerConfig {
  int ddim_steps = 20;
  double guidance_w = 2.0;
  std::uint64_t seed = 42;

  void validate(int total_steps) const;
};

/// Visited steps t = floor(s * T / S) for s = S..1, in visiting order.
std::vector<int> ddim_grid(int total_steps, int ddim_steps);

/// Per-stream generator so a row's noise does not depend on batching.
Rng stream_rng(std::uint64_t seed, std::uint64_t stream);

/// cond + w * (cond - uncond), i.e. (1 + w) * cond - w * uncond. Written in
/// this form so equal branches reproduce `cond` bit for bit.
template <typename D1, typename D2>
auto guide(const Eigen::MatrixBase<D1>& conditional, const Eigen::MatrixBase<D2>& unconditional, double w) {
  using Plain = typename D1::PlainObject;
  if (w == 0.0) return Plain(conditional);
  return Plain(conditional + w * (conditional - unconditional));
}

/// Deterministic x0-parameterised DDIM update from step t to t_prev:
///   eps_hat = (e_t - sqrt(ab_t) x0) / sqrt(1 - ab_t)
///   e_prev  = sqrt(ab_prev) x0 + sqrt(1 - ab_prev) eps_hat
template <typename Scalar, typename D1, typename D2>
auto ddim_step(const DiffusionScheduleT<Scalar>& schedule, const Eigen::MatrixBase<D1>& e_t, int t,
               const Eigen::MatrixBase<D2>& x0_hat, int t_prev) {
  if (t < 1) throw ConfigError("ddim_step: t = " + std::to_string(t) + " is already the terminal state");
  if (t_prev < 0 || t_prev >= t) throw ConfigError("ddim_step: target step must lie in [0, t)");
  if (e_t.rows() != x0_hat.rows() || e_t.cols() != x0_hat.cols()) throw ShapeError("ddim_step: shape mismatch");
  const Scalar ab = schedule.alpha_bar(t);
  const Scalar ab_prev = schedule.alpha_bar(t_prev);
  using Plain = typename D1::PlainObject;
  const Plain eps_hat = (e_t - std::sqrt(ab) * x0_hat) / std::sqrt(Scalar(1) - ab);
  return Plain(std::sqrt(ab_prev) * x0_hat + std::sqrt(Scalar(1) - ab_prev) * eps_hat);
}

template <typename Scalar, typename D1, typename D2>
auto ddim_step(const DiffusionScheduleT<Scalar>& schedule, const Eigen::MatrixBase<D1>& e_t, int t,
               const Eigen::MatrixBase<D2>& x0_hat) {
  return ddim_step(schedule, e_t, t, x0_hat, t - 1);
}

/// Denoiser backed by the trained network. predict() evaluates one step
/// for every row; unconditional() is phi repeated.
class NetworkDenoiser {
 public:
  explicit NetworkDenoiser(const ModelParams& params) : params_(&params) {}

  Matrix predict(const Matrix& e_t, int t, const Matrix& cond) const { return denoise_matrix(*params_, e_t, t, cond); }
  Matrix unconditional(Index rows) const { return params_->phi().transpose().replicate(rows, 1); }
  Index dim() const { return params_->dims().item_dim; }

 private:
  const ModelParams* params_;
};

/// (1 + w) F(e_t, t, cond) - w F(e_t, t, phi).
template <typename Denoiser>
Matrix guided_x0(const Denoiser& denoiser, const Matrix& e_t, int t, const Matrix& cond, double w) {
  const Matrix conditional = denoiser.predict(e_t, t, cond);
  if (w == 0.0) return conditional;
  const Matrix unconditional = denoiser.predict(e_t, t, denoiser.unconditional(e_t.rows()));
  return guide(conditional, unconditional, w);
}

/// Classifier-free guided DDIM from pure noise; one row per condition.
///
/// Row r starts from N(0, I) drawn from stream_rng(cfg.seed, streams[r]).
/// The loop visits ddim_grid(T, S); each step moves to the next grid point
/// (0 after the last) and the final x0 prediction is returned.
template <typename Denoiser>
Matrix sample_batch(const Denoiser& denoiser, const DiffusionSchedule& schedule, const Matrix& cond,
                    const SamplerConfig& cfg, std::span<const std::uint64_t> streams) {
  cfg.validate(schedule.steps());
  if (static_cast<Index>(streams.size()) != cond.rows()) throw ShapeError("sample: one stream id per condition row");
  Matrix e_t(cond.rows(), denoiser.dim());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index r = 0; r < cond.rows(); ++r) {
    Rng rng = stream_rng(cfg.seed, streams[static_cast<std::size_t>(r)]);
    for (Index c = 0; c < e_t.cols(); ++c) e_t(r, c) = normal(rng);
  }
  const std::vector<int> grid = ddim_grid(schedule.steps(), cfg.ddim_steps);
  Matrix x0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const int t = grid[i];
    const int t_prev = i + 1 < grid.size() ? grid[i + 1] : 0;
    x0 = guided_x0(denoiser, e_t, t, cond, cfg.guidance_w);
    e_t = ddim_step(schedule, e_t, t, x0, t_prev);
  }
  return x0;
}

/// Single-condition sampling (stream 0).
Vector sample(const ModelParams& params, const DiffusionSchedule& schedule, const Condition& cond,
              const SamplerConfig& cfg);

/// guided_x0 for a single vector with the network denoiser.
Vector guided_x0(const ModelParams& params, const Vector& e_t, int t, const Condition& cond, double w);

}  // namespace preferdiff
