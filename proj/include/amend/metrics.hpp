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

#ifndef AMEND_METRICS_HPP_
#define AMEND_METRICS_HPP_

#include <algorithm>
#include <limits>
#include <string>

#include "amend/baseline_net.hpp"
#include "amend/common.hpp"

namespace amend
{

inline void check_lengths(const Trajectory & hyp, const Trajectory & truth)
{
  if (hyp.size() != truth.size() || truth.empty()) {
    throw ConfigError("prediction length " + std::to_string(hyp.size()) +
                      " does not match truth length " + std::to_string(truth.size()));
  }
}

/// Mean per-step Euclidean distance.
inline double ade(const Trajectory & hyp, const Trajectory & truth)
{
  check_lengths(hyp, truth);
  double sum = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    sum += distance(hyp[t], truth[t]);
  }
  return sum / static_cast<double>(truth.size());
}

inline double fde(const Trajectory & hyp, const Trajectory & truth)
{
  check_lengths(hyp, truth);
  return distance(hyp.back(), truth.back());
}

inline double min_ade(const PredictionSet & pred, const Trajectory & truth)
{
  if (pred.hypotheses.empty()) throw ConfigError("min_ade: empty prediction set");
  double best = std::numeric_limits<double>::infinity();
  for (const auto & h : pred.hypotheses) best = std::min(best, ade(h, truth));
  return best;
}

inline double min_fde(const PredictionSet & pred, const Trajectory & truth)
{
  if (pred.hypotheses.empty()) throw ConfigError("min_fde: empty prediction set");
  double best = std::numeric_limits<double>::infinity();
  for (const auto & h : pred.hypotheses) best = std::min(best, fde(h, truth));
  return best;
}

/// Maps every hypothesis back to the world frame.
inline PredictionSet decanonicalize(const PredictionSet & pred, const CanonicalTransform & transform)
{
  PredictionSet out = pred;
  for (auto & h : out.hypotheses) {
    for (auto & p : h) p = transform.inverse(p);
  }
  return out;
}

}  // namespace amend

#endif  // AMEND_METRICS_HPP_
