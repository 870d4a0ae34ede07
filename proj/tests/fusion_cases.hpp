// Copyright 2026 The KVAF Toolkit Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Tiny models and examples for gradient and identity checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "kvaf/fusion.hpp"

namespace fusion_cases {

// L = 2, S = {2}, D = 4.
inline kvaf::ModelConfig tiny_config() {
  kvaf::ModelConfig cfg;
  cfg.depth = 2;
  cfg.fusion_layers = {2};
  cfg.dim = 4;
  cfg.heads = 2;
  cfg.event_dim = 4;
  cfg.mlp_hidden = 6;
  cfg.time_features = 4;
  cfg.lambda_evt = 1.0;
  cfg.seed = 3;
  return cfg;
}

inline kvaf::KvafSequence random_video(std::mt19937_64& rng, int frames, int size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  kvaf::KvafSequence v;
  for (int t = 0; t < frames; ++t) {
    kvaf::KvafFrame f(size, size);
    for (double& x : f.data()) x = u(rng);
    v.push_back(f);
  }
  return v;
}

// 4 frames of 4x4, block (2, 2, 2), unit patch: a 2x2x2 grid of 8 tokens,
// 24 channels each.
inline kvaf::Example tiny_example(uint64_t seed, double t = 0.4) {
  std::mt19937_64 rng(seed);
  const auto video = random_video(rng, 4, 4);
  const auto kvaf = random_video(rng, 4, 4);
  return kvaf::make_example(video, kvaf, t, seed + 1, kvaf::Factors{2, 2, 2}, kvaf::Factors{1, 1, 1});
}

// Every tensor Gaussian, heads included, so no gradient path is cut off.
inline kvaf::FusionParams random_params(const kvaf::ModelConfig& cfg, const kvaf::Example& ex, uint64_t seed,
                                        double scale = 0.5) {
  kvaf::FusionParams p = kvaf::init_params(cfg, static_cast<int>(ex.video.tokens.cols()),
                                           static_cast<int>(ex.kvaf.tokens.cols()));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (kvaf::Matrix* m : p.tensors()) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = g(rng);
  }
  return p;
}

struct FdResult {
  double max_rel = 0.0;
  size_t checked = 0;
};

// Central differences on `samples` parameters drawn uniformly over all
// tensors; rel = |a - n| / max(|a|, |n|, 1e-6).
inline FdResult fd_check(const kvaf::Example& ex, const kvaf::FusionParams& params, const kvaf::ModelConfig& cfg,
                         size_t samples, uint64_t seed, double eps = 1e-4) {
  const kvaf::Gradient g = kvaf::loss_and_gradient(ex, params, cfg);
  const auto grads = g.grad.tensors();
  std::vector<std::pair<size_t, Eigen::Index>> slots;
  const auto tensors = params.tensors();
  for (size_t k = 0; k < tensors.size(); ++k) {
    for (Eigen::Index i = 0; i < tensors[k]->size(); ++i) slots.emplace_back(k, i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(slots.begin(), slots.end(), rng);
  slots.resize(std::min(samples, slots.size()));
  FdResult r;
  kvaf::FusionParams work = params;
  auto wt = work.tensors();
  for (const auto& [k, i] : slots) {
    double& w = wt[k]->data()[i];
    const double keep = w;
    w = keep + eps;
    const double up = kvaf::evaluate_loss(ex, work, cfg).total;
    w = keep - eps;
    const double down = kvaf::evaluate_loss(ex, work, cfg).total;
    w = keep;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = grads[k]->data()[i];
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    r.max_rel = std::max(r.max_rel, rel);
    ++r.checked;
  }
  return r;
}

}  // namespace fusion_cases
