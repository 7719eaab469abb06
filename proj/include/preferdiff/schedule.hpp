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

#include <Eigen/Dense>

#include <cmath>
#include <ostream>
#include <string>

#include "preferdiff/errors.hpp"
#include "preferdiff/tensor.hpp"

namespace preferdiff {

/// Variance-preserving noise schedule over steps t = 1..T.
///
/// Arrays are stored 0-based (entry t-1 holds step t). alpha_bar(0) is the
/// clean state and is defined as exactly 1.
template <typename Scalar>
class DiffusionScheduleT {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  DiffusionScheduleT() = default;

  /// Builds from explicit betas; alphas and cumulative products follow.
  explicit DiffusionScheduleT(Array betas) : betas_(std::move(betas)) {
    if (betas_.size() == 0) throw ConfigError("schedule: T must be at least 1");
    for (Index i = 0; i < betas_.size(); ++i) {
      if (!(betas_(i) > Scalar(0) && betas_(i) < Scalar(1))) {
        throw ConfigError("schedule: beta_" + std::to_string(i + 1) + " outside (0,1)");
      }
    }
    alphas_ = Scalar(1) - betas_;
    alpha_bars_.resize(alphas_.size());
    Scalar running(1);
    for (Index i = 0; i < alphas_.size(); ++i) {
      running *= alphas_(i);
      alpha_bars_(i) = running;
    }
  }

  int steps() const { return static_cast<int>(betas_.size()); }

  Scalar beta(int t) const { return betas_(checked(t)); }
  Scalar alpha(int t) const { return alphas_(checked(t)); }
  /// Cumulative product up to step t; t = 0 gives 1.
  Scalar alpha_bar(int t) const {
    if (t == 0) return Scalar(1);
    return alpha_bars_(checked(t));
  }

  const Array& betas() const { return betas_; }
  const Array& alphas() const { return alphas_; }
  const Array& alpha_bars() const { return alpha_bars_; }

 private:
  Index checked(int t) const {
    if (t < 1 || t > steps()) {
      throw ConfigError("schedule: step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
    }
    return static_cast<Index>(t - 1);
  }

  Array betas_;
  Array alphas_;
  Array alpha_bars_;
};

using DiffusionSchedule = DiffusionScheduleT<double>;

/// beta_t interpolated linearly so both endpoints are attained exactly.
template <typename Scalar = double>
DiffusionScheduleT<Scalar> build_linear_schedule(int steps, Scalar beta_start, Scalar beta_end) {
  if (steps < 1) throw ConfigError("schedule: T must be at least 1, got " + std::to_string(steps));
  if (!(beta_start > Scalar(0) && beta_start <= beta_end && beta_end < Scalar(1))) {
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
  }
  typename DiffusionScheduleT<Scalar>::Array betas(steps);
  if (steps == 1) {
    betas(0) = beta_start;
  } else {
    const Scalar span = beta_end - beta_start;
    for (int i = 0; i < steps; ++i) {
      betas(i) = beta_start + Scalar(i) * span / Scalar(steps - 1);
    }
    betas(steps - 1) = beta_end;
  }
  return DiffusionScheduleT<Scalar>(std::move(betas));
}

/// sqrt(alpha_bar_t) * e0 + sqrt(1 - alpha_bar_t) * eps. Works row-wise on
/// batches as well as on single vectors.
template <typename Scalar, typename Derived0, typename DerivedEps>
auto forward_noise(const DiffusionScheduleT<Scalar>& schedule, const Eigen::MatrixBase<Derived0>& e0, int t,
                   const Eigen::MatrixBase<DerivedEps>& eps) {
  if (e0.rows() != eps.rows() || e0.cols() != eps.cols()) {
    throw ShapeError("forward_noise: e0 and eps shapes differ");
  }
  if (t == 0) throw ConfigError("forward_noise: step 0 is the clean state");
  const Scalar ab = schedule.alpha_bar(t);
  using Plain = typename Derived0::PlainObject;
  return Plain(std::sqrt(ab) * e0 + std::sqrt(Scalar(1) - ab) * eps);
}

/// Writes `t,beta,alpha,alpha_bar` rows for t = 1..T.
template <typename Scalar>
void write_schedule_csv(std::ostream& out, const DiffusionScheduleT<Scalar>& schedule) {
  out << "t,beta,alpha,alpha_bar\n";
  out.precision(17);
  for (int t = 1; t <= schedule.steps(); ++t) {
    out << t << ',' << schedule.beta(t) << ',' << schedule.alpha(t) << ',' << schedule.alpha_bar(t) << '\n';
  }
}

}  // namespace preferdiff
