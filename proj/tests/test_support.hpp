// Copyright 2026 The amend Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// Shared fixtures for the unit and acceptance tests.

#ifndef AMEND_TESTS_TEST_SUPPORT_HPP_
#define AMEND_TESTS_TEST_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "amend/baseline_net.hpp"
#include "amend/common.hpp"
#include "amend/data.hpp"
#include "amend/nn.hpp"

namespace amend::testing
{

/// Random canonical-looking sample with up to `max_neighbors` neighbors.
inline CanonicalSample random_canonical(Rng & rng, const NetConfig & c, int neighbors,
                                        std::int64_t id = 0)
{
  CanonicalSample cs;
  cs.sample.sample_id = id;
  Point2 p{0.0, 0.0};
  for (int t = 0; t < c.t_hist; ++t) {
    cs.sample.ego_history.push_back(p);
    p = p + Point2{rng.uniform(-0.5, 0.5), rng.uniform(0.2, 1.0)};
  }
  // Re-anchor so the last history point is the origin.
  const Point2 last = cs.sample.ego_history.back();
  for (auto & q : cs.sample.ego_history) q = q - last;
  Point2 f{0.0, 0.0};
  for (int t = 0; t < c.t_pred; ++t) {
    f = f + Point2{rng.uniform(-0.5, 0.5), rng.uniform(0.2, 1.0)};
    cs.sample.ego_future.push_back(f);
  }
  for (int j = 0; j < neighbors; ++j) {
    NeighborHistory n;
    n.agent_id = j + 1;
    for (int t = 0; t < c.t_hist; ++t) {
      n.positions.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3)});
      n.valid.push_back(rng.uniform() < 0.8 ? 1 : 0);
    }
    n.valid.back() = 1;
    cs.sample.neighbors.push_back(n);
  }
  cs.transform.scale = 1.0;
  return cs;
}

/// Three turn modes with weights 0.7 / 0.2 / 0.1.
inline SynthSpec three_mode_spec(int n_samples, double noise_sigma = 0.0)
{
  SynthSpec spec;
  spec.modes = {{"straight", 0.7, 1.0, 1.6, 0.0},
                {"left", 0.2, 1.0, 1.6, 0.35},
                {"right", 0.1, 1.0, 1.6, -0.35}};
  spec.noise_sigma = noise_sigma;
  spec.n_samples = n_samples;
  return spec;
}

/// Small random architecture for gradient checks.
inline NetConfig small_config(Rng & rng)
{
  NetConfig c;
  c.t_hist = 2 + static_cast<int>(rng.index(4));
  c.t_pred = 1 + static_cast<int>(rng.index(4));
  c.neighbor_feature_dim = 1 + static_cast<int>(rng.index(3));
  c.encoder_hidden_dims.assign(1 + rng.index(2), 0);
  for (auto & h : c.encoder_hidden_dims) h = 2 + static_cast<int>(rng.index(4));
  c.latent_dim = 2 + static_cast<int>(rng.index(3));
  c.decoder_hidden_dims.assign(rng.index(2) + 1, 0);
  for (auto & h : c.decoder_hidden_dims) h = 2 + static_cast<int>(rng.index(4));
  c.k_max = 2 + static_cast<int>(rng.index(4));
  c.max_neighbors = 3;
  c.hidden_activation = rng.uniform() < 0.75 ? nn::Activation::kTanh : nn::Activation::kRelu;
  return c;
}

/// Random biases, so relu units and tied heads sit away from kinks.
inline void jitter_biases(nn::Params & params, Rng & rng, double scale = 0.1)
{
  for (auto & l : params.layers) {
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.uniform(-scale, scale);
  }
}

/// Max over all parameters of |analytic - numeric| / max(|analytic|, |numeric|, floor),
/// with central differences of step h. The floor keeps components whose true
/// gradient is below round-off from dominating the ratio.
inline double max_relative_gradient_error(nn::Params params, const nn::Params & analytic,
                                          const std::function<double(const nn::Params &)> & loss,
                                          double h = 1e-5, double floor = 1e-6)
{
  double worst = 0.0;
  const std::size_t n = nn::parameter_count(params);
  nn::Params grads = analytic;
  for (std::size_t i = 0; i < n; ++i) {
    double & w = nn::parameter_at(params, i);
    const double saved = w;
    w = saved + h;
    const double up = loss(params);
    w = saved - h;
    const double down = loss(params);
    w = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = nn::parameter_at(grads, i);
    const double denom = std::max({std::fabs(a), std::fabs(numeric), floor});
    worst = std::max(worst, std::fabs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace amend::testing

#endif  // AMEND_TESTS_TEST_SUPPORT_HPP_
