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

#include "preferdiff/sampler.hpp"

namespace preferdiff {

void SamplerConfig::validate(int total_steps) const {
  if (ddim_steps < 1) throw ConfigError("ddim_steps must be at least 1");
  if (ddim_steps > total_steps) {
    throw ConfigError("ddim_steps (" + std::to_string(ddim_steps) + ") exceeds T (" + std::to_string(total_steps) + ")");
  }
  if (!(guidance_w >= 0.0)) throw ConfigError("guidance_w must be non-negative");
}

std::vector<int> ddim_grid(int total_steps, int ddim_steps) {
  SamplerConfig{ddim_steps, 0.0, 0}.validate(total_steps);
  std::vector<int> grid;
  grid.reserve(static_cast<std::size_t>(ddim_steps));
  for (int s = ddim_steps; s >= 1; --s) {
    // floor(s * T / S) in exact integer arithmetic.
    grid.push_back(static_cast<int>(static_cast<long long>(s) * total_steps / ddim_steps));
  }
  return grid;
}

Rng stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

Vector sample(const ModelParams& params, const DiffusionSchedule& schedule, const Condition& cond,
              const SamplerConfig& cfg) {
  const std::uint64_t streams[] = {0};
  return sample_batch(NetworkDenoiser(params), schedule, Matrix(cond.vector.transpose()), cfg, streams)
      .row(0)
      .transpose();
}

Vector guided_x0(const ModelParams& params, const Vector& e_t, int t, const Condition& cond, double w) {
  return guided_x0(NetworkDenoiser(params), Matrix(e_t.transpose()), t, Matrix(cond.vector.transpose()), w)
      .row(0)
      .transpose();
}

}  // namespace preferdiff
