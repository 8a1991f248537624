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

// Cluster-specialized experts. Every expert trains on the full dataset; a
// sample in the expert's own cluster is weighted (1 + alpha), any other
// sample (1 - alpha), and the batch loss stays normalized by the batch size.

#ifndef AMEND_EXPERTS_HPP_
#define AMEND_EXPERTS_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "amend/baseline_net.hpp"
#include "amend/clustering.hpp"
#include "amend/common.hpp"
#include "amend/data.hpp"

namespace amend
{

struct ExpertEnsemble
{
  std::vector<TrajectoryModel> experts;
  ClusterModel cluster_model;
  double alpha = 0.5;
  NormalizationParams normalization;
  NetConfig net_config;

  int C() const { return static_cast<int>(experts.size()); }
};

inline void check_alpha(double alpha)
{
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("alpha must lie in [0, 1]");
  }
}

inline double expert_weight(bool in_cluster, double alpha)
{
  return in_cluster ? 1.0 + alpha : 1.0 - alpha;
}

/// Per-sample weights of expert `c` for samples with the given clusters.
inline std::vector<double> expert_weights(std::span<const int> clusters, int c, double alpha)
{
  check_alpha(alpha);
  std::vector<double> w;
  w.reserve(clusters.size());
  for (const int k : clusters) {
    w.push_back(expert_weight(k == c, alpha));
  }
  return w;
}

/// (1/B) sum_i w_i L_i given each sample's loss under expert `c`.
inline double weighted_batch_loss(std::span<const double> losses, std::span<const int> clusters,
                                  int c, double alpha)
{
  if (losses.size() != clusters.size()) {
    throw ConfigError("weighted_batch_loss: assignments do not cover the batch");
  }
  if (losses.empty()) {
    return 0.0;
  }
  const auto w = expert_weights(clusters, c, alpha);
  double total = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    total += w[i] * losses[i];
  }
  return total / static_cast<double>(losses.size());
}

/// Same, evaluating the EWTA loss of `expert` with top-k on each sample.
inline double weighted_batch_loss(std::span<const CanonicalSample> batch,
                                  const TrajectoryModel & expert, int c,
                                  std::span<const int> clusters, double alpha, int k)
{
  std::vector<double> losses;
  losses.reserve(batch.size());
  for (const auto & s : batch) {
    losses.push_back(ewta_loss(predict(s, expert, expert.config.k_max), s.sample.ego_future, k));
  }
  return weighted_batch_loss(losses, clusters, c, alpha);
}

/// Cluster of every sample according to a fitted model's training assignment.
inline std::vector<int> training_clusters(std::span<const CanonicalSample> samples,
                                          const ClusterModel & model)
{
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto & s : samples) {
    const auto it = model.assignment.find(s.sample.sample_id);
    if (it == model.assignment.end()) {
      throw Error("sample " + std::to_string(s.sample.sample_id) +
                  " has no cluster assignment in the fitted model");
    }
    out.push_back(it->second);
  }
  return out;
}

struct ExpertOptions
{
  double alpha = 0.5;
  bool shared_seed = false;  // every expert uses `seed` instead of seed + c
};

struct ExpertTrainingResult
{
  ExpertEnsemble ensemble;
  std::vector<std::vector<EpochRecord>> histories;
};

/// Trains one expert per cluster, each from scratch with seed + c.
/// `val_clusters` (optional) weights the validation minADE the same way.
inline ExpertTrainingResult train_experts(std::span<const CanonicalSample> train_set,
                                          std::span<const CanonicalSample> val_set,
                                          std::span<const int> val_clusters,
                                          const ClusterModel & cluster_model,
                                          const NetConfig & config, const TrainOptions & options,
                                          const ExpertOptions & expert_options,
                                          std::uint64_t seed)
{
  check_alpha(expert_options.alpha);
  if (!val_clusters.empty() && val_clusters.size() != val_set.size()) {
    throw ConfigError("train_experts: validation clusters do not cover the validation set");
  }
  const auto clusters = training_clusters(train_set, cluster_model);

  ExpertTrainingResult result;
  result.ensemble.cluster_model = cluster_model;
  result.ensemble.alpha = expert_options.alpha;
  result.ensemble.net_config = config;
  for (int c = 0; c < cluster_model.C; ++c) {
    const auto weights = expert_weights(clusters, c, expert_options.alpha);
    const auto val_weights = val_clusters.empty()
                                 ? std::vector<double>{}
                                 : expert_weights(val_clusters, c, expert_options.alpha);
    const std::uint64_t expert_seed =
        expert_options.shared_seed ? seed : seed + static_cast<std::uint64_t>(c);
    auto trained = train(train_set, val_set, config, options, expert_seed, weights, val_weights);
    result.ensemble.experts.push_back(std::move(trained.model));
    result.histories.push_back(std::move(trained.history));
  }
  return result;
}

}  // namespace amend

#endif  // AMEND_EXPERTS_HPP_
