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

// Expert selection: rank-based router targets, the learned router network,
// centroid-distance confidences and random / oracle baselines. Expert and
// cluster indices are 0-based; ranks are 1-based with 1 the best.

#ifndef AMEND_ROUTING_HPP_
#define AMEND_ROUTING_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amend/baseline_net.hpp"
#include "amend/clustering.hpp"
#include "amend/common.hpp"
#include "amend/experts.hpp"
#include "amend/metrics.hpp"
#include "amend/nn.hpp"

namespace amend
{

// ---------------------------------------------------------------------------
// Rankings

struct ExpertRanking
{
  std::int64_t sample_id = 0;
  std::vector<int> rank_ade;  // 1..C
  std::vector<int> rank_fde;
  int c_best = 0;
};

/// Ascending ranks, metric ties to the lower index.
inline std::vector<int> rank_ascending(std::span<const double> values)
{
  std::vector<int> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return values[static_cast<std::size_t>(a)] < values[static_cast<std::size_t>(b)];
  });
  std::vector<int> ranks(values.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    ranks[static_cast<std::size_t>(order[r])] = static_cast<int>(r) + 1;
  }
  return ranks;
}

/// argmin_c rank_fde[c] + rank_ade[c], ties to the lower index.
inline int best_by_rank_sum(std::span<const int> rank_ade, std::span<const int> rank_fde)
{
  int best = 0;
  for (std::size_t c = 1; c < rank_ade.size(); ++c) {
    if (rank_ade[c] + rank_fde[c] < rank_ade[static_cast<std::size_t>(best)] +
                                        rank_fde[static_cast<std::size_t>(best)]) {
      best = static_cast<int>(c);
    }
  }
  return best;
}

inline ExpertRanking rank_from_metrics(std::int64_t sample_id, std::span<const double> ades,
                                       std::span<const double> fdes)
{
  if (ades.size() != fdes.size() || ades.empty()) {
    throw ConfigError("rank_from_metrics: need one ADE and one FDE per expert");
  }
  ExpertRanking r;
  r.sample_id = sample_id;
  r.rank_ade = rank_ascending(ades);
  r.rank_fde = rank_ascending(fdes);
  r.c_best = best_by_rank_sum(r.rank_ade, r.rank_fde);
  return r;
}

/// Per-expert minADE_K / minFDE_K (meters) on one sample.
struct ExpertErrors
{
  std::vector<double> min_ade;
  std::vector<double> min_fde;
};

/// Errors of every expert on every sample, batched per expert. `trials`
/// counts repeated evaluations for stochastic predictors; this predictor is
/// deterministic, so one evaluation stands for any trials >= 1.
inline std::vector<ExpertErrors> expert_errors(std::span<const CanonicalSample> samples,
                                               const ExpertEnsemble & ensemble, int trials = 1)
{
  if (ensemble.experts.empty()) {
    throw Error("expert_errors: ensemble has no experts");
  }
  if (trials < 1) {
    throw ConfigError("expert_errors: trials must be at least 1");
  }
  std::vector<ExpertErrors> out(samples.size());
  const auto features = extract_features(samples, ensemble.net_config);
  std::vector<TrajectorySample> truth;
  truth.reserve(samples.size());
  for (const auto & s : samples) truth.push_back(decanonicalize(s));
  for (const auto & expert : ensemble.experts) {
    const auto preds = predict_all(features, expert, expert.config.k_max);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const PredictionSet world = decanonicalize(preds[i], samples[i].transform);
      out[i].min_ade.push_back(min_ade(world, truth[i].ego_future));
      out[i].min_fde.push_back(min_fde(world, truth[i].ego_future));
    }
  }
  return out;
}

inline std::vector<ExpertRanking> rank_all(std::span<const CanonicalSample> samples,
                                           const ExpertEnsemble & ensemble, int trials = 1)
{
  const auto errors = expert_errors(samples, ensemble, trials);
  std::vector<ExpertRanking> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.push_back(rank_from_metrics(samples[i].sample.sample_id, errors[i].min_ade,
                                    errors[i].min_fde));
  }
  return out;
}

inline ExpertRanking rank_experts(const CanonicalSample & sample, const ExpertEnsemble & ensemble,
                                  int trials = 1)
{
  return rank_all(std::span<const CanonicalSample>(&sample, 1), ensemble, trials).front();
}

struct RouterTarget
{
  std::int64_t sample_id = 0;
  std::vector<double> one_hot;
};

inline std::vector<RouterTarget> router_targets(std::span<const ExpertRanking> rankings)
{
  std::vector<RouterTarget> out;
  out.reserve(rankings.size());
  for (const auto & r : rankings) {
    const auto C = r.rank_ade.size();
    if (r.c_best < 0 || static_cast<std::size_t>(r.c_best) >= C) {
      throw ConfigError("router_targets: c_best outside [0, C)");
    }
    std::vector<double> one_hot(C, 0.0);
    one_hot[static_cast<std::size_t>(r.c_best)] = 1.0;
    out.push_back({r.sample_id, std::move(one_hot)});
  }
  return out;
}

// Rankings file: sample_id, c_best, C ADE ranks, C FDE ranks (tab separated).
inline void write_rankings(std::ostream & out, std::span<const ExpertRanking> rankings)
{
  for (const auto & r : rankings) {
    out << r.sample_id << '\t' << r.c_best;
    for (const int v : r.rank_ade) out << '\t' << v;
    for (const int v : r.rank_fde) out << '\t' << v;
    out << '\n';
  }
}

inline std::vector<ExpertRanking> read_rankings(std::istream & in)
{
  std::vector<ExpertRanking> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;
    if (fields.size() < 4 || fields.size() % 2 != 0) {
      throw ParseError("expected sample_id, c_best and 2C ranks", line_no);
    }
    std::vector<std::int64_t> v(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!detail::parse_integral(fields[i], v[i])) {
        throw ParseError("non-integer field in rankings", line_no);
      }
    }
    const std::size_t C = (fields.size() - 2) / 2;
    ExpertRanking r;
    r.sample_id = v[0];
    r.c_best = static_cast<int>(v[1]);
    for (std::size_t c = 0; c < C; ++c) {
      r.rank_ade.push_back(static_cast<int>(v[2 + c]));
      r.rank_fde.push_back(static_cast<int>(v[2 + C + c]));
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Confidences

/// softmax(logits / temperature), computed with the max shift.
inline std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0)
{
  if (!(temperature > 0.0)) {
    throw ConfigError("softmax temperature must be positive");
  }
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  double top = -std::numeric_limits<double>::infinity();
  for (const double z : logits) top = std::max(top, z / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] / temperature - top);
    sum += p[i];
  }
  for (auto & v : p) v /= sum;
  return p;
}

/// Highest confidence, ties to the lower index.
inline int select_expert(std::span<const double> p)
{
  if (p.empty()) {
    throw ConfigError("select_expert: empty probability vector");
  }
  int best = 0;
  for (std::size_t c = 1; c < p.size(); ++c) {
    if (p[c] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  return best;
}

/// Softmax over negative latent distances to the cluster centroids.
inline std::vector<double> cluster_confidence(const nn::Vector & latent, const ClusterModel & model)
{
  if (model.basis != ClusterBasis::kLatent) {
    throw ConfigError("cluster_confidence requires a latent-basis cluster model");
  }
  if (model.centroids.empty() || latent.size() != model.centroids.front().size()) {
    throw ConfigError("cluster_confidence: latent dimension does not match centroids");
  }
  std::vector<double> neg_dist;
  neg_dist.reserve(model.centroids.size());
  for (const auto & phi : model.centroids) {
    neg_dist.push_back(-(latent - phi).norm());
  }
  return softmax(neg_dist, 1.0);
}

inline std::vector<double> cluster_confidence(const CanonicalSample & sample,
                                              const TrajectoryModel & encoder,
                                              const ClusterModel & model)
{
  if (model.basis != ClusterBasis::kLatent) {
    throw ConfigError("cluster_confidence requires a latent-basis cluster model");
  }
  return cluster_confidence(encode(sample, encoder).values, model);
}

/// Seeded uniform expert choice.
class RandomRouter
{
public:
  explicit RandomRouter(std::uint64_t seed) : rng_(seed) {}

  int next(int C)
  {
    if (C < 1) throw ConfigError("random routing needs C >= 1");
    return static_cast<int>(rng_.index(static_cast<std::uint64_t>(C)));
  }

private:
  Rng rng_;
};

inline int random_route(int C, std::uint64_t seed) { return RandomRouter(seed).next(C); }

/// Per-sample seed so a sample's random choice does not depend on evaluation order.
inline std::uint64_t sample_seed(std::uint64_t seed, std::int64_t sample_id)
{
  std::uint64_t x = seed ^ (static_cast<std::uint64_t>(sample_id) * 0x9E3779B97F4A7C15ULL);
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  return x;
}

// ---------------------------------------------------------------------------
// Router network

struct RouterConfig
{
  int hidden_dim = 232;
  double temperature = 1.0;
  bool warm_start = false;  // copy the baseline encoder weights before training
};

/// Encoder (baseline layout) followed by hidden_dim -> C dense layers.
struct RouterNet
{
  NetConfig encoder_config;
  nn::Params params;
  int C = 0;
  double temperature = 1.0;
  int hidden_dim = 232;
};

inline RouterNet init_router(const NetConfig & encoder_config, int C, const RouterConfig & config,
                             std::uint64_t seed)
{
  if (C < 1 || config.hidden_dim < 1 || !(config.temperature > 0.0)) {
    throw ConfigError("invalid router configuration");
  }
  encoder_config.validate();
  Rng rng(seed);
  RouterNet r{encoder_config, init_encoder_layers(encoder_config, rng), C, config.temperature,
              config.hidden_dim};
  r.params.layers.push_back(nn::glorot_layer(encoder_config.latent_dim, config.hidden_dim,
                                             encoder_config.hidden_activation, rng));
  r.params.layers.push_back(
      nn::glorot_layer(config.hidden_dim, C, nn::Activation::kLinear, rng));
  return r;
}

inline void check_router_shapes(const RouterNet & r)
{
  const std::size_t e = r.encoder_config.encoder_end();
  if (r.params.size() != e + 2) {
    throw ConfigError("router has an unexpected number of layers");
  }
  check_encoder_shapes(r.encoder_config, r.params);
  if (r.params[e].in_dim() != r.encoder_config.latent_dim || r.params[e].out_dim() != r.hidden_dim ||
      r.params[e + 1].in_dim() != r.hidden_dim || r.params[e + 1].out_dim() != r.C) {
    throw ConfigError("router head shape mismatch");
  }
  if (!(r.temperature > 0.0)) {
    throw ConfigError("router temperature must be positive");
  }
}

struct RouterCache
{
  EncoderCache encoder;
  nn::StackCache head;
};

/// Logits (C x B).
inline nn::Matrix router_forward(const RouterNet & r, const Batch & b, RouterCache & cache)
{
  const std::size_t e = r.encoder_config.encoder_end();
  const nn::Matrix latent = encoder_forward(r.encoder_config, r.params, b, cache.encoder);
  cache.head = nn::forward_stack(r.params, e, e + 2, latent);
  return cache.head.values.back();
}

/// Mean cross-entropy between softmax(logits / T) and the one-hot targets
/// (C x B), and its exact gradient.
inline LossGradient cross_entropy_gradient(const RouterNet & r, const Batch & b,
                                           const nn::Matrix & targets)
{
  RouterCache cache;
  const nn::Matrix logits = router_forward(r, b, cache);
  const Eigen::Index batch = logits.cols();
  const double inv_t = 1.0 / r.temperature;
  nn::Matrix d_logits(logits.rows(), batch);
  LossGradient out;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const nn::Vector z = logits.col(i) * inv_t;
    const double top = z.maxCoeff();
    const double lse = top + std::log((z.array() - top).exp().sum());
    const nn::Vector p = (z.array() - lse).exp();
    out.loss -= targets.col(i).dot((z.array() - lse).matrix());
    d_logits.col(i) = (p - targets.col(i)) * inv_t / static_cast<double>(batch);
  }
  out.loss /= static_cast<double>(batch);
  if (!std::isfinite(out.loss)) {
    throw NumericError("non-finite router cross-entropy");
  }
  out.grads = nn::zeros_like(r.params);
  const std::size_t e = r.encoder_config.encoder_end();
  const nn::Matrix d_latent = nn::backward_stack(r.params, e, e + 2, cache.head, d_logits, out.grads);
  encoder_backward(r.encoder_config, r.params, b, cache.encoder, d_latent, out.grads);
  return out;
}

inline nn::Matrix one_hot_matrix(std::span<const int> labels, int C)
{
  nn::Matrix t = nn::Matrix::Zero(C, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= C) {
      throw ConfigError("router label outside [0, C)");
    }
    t(labels[i], static_cast<Eigen::Index>(i)) = 1.0;
  }
  return t;
}

inline std::vector<double> route_confidence(const CanonicalSample & sample, const RouterNet & r)
{
  check_router_shapes(r);
  const SampleFeatures f = extract_features(sample, r.encoder_config);
  const Batch b = make_batch(std::span<const SampleFeatures>(&f, 1));
  RouterCache cache;
  const nn::Vector logits = router_forward(r, b, cache).col(0);
  return softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())),
                 r.temperature);
}

/// Confidences for many samples, one vector per sample.
inline std::vector<std::vector<double>> route_confidence_all(std::span<const SampleFeatures> features,
                                                             const RouterNet & r)
{
  check_router_shapes(r);
  std::vector<std::vector<double>> out;
  out.reserve(features.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < features.size(); begin += kChunk) {
    const Batch b = make_batch(features.subspan(begin, std::min(kChunk, features.size() - begin)));
    RouterCache cache;
    const nn::Matrix logits = router_forward(r, b, cache);
    for (Eigen::Index i = 0; i < logits.cols(); ++i) {
      const nn::Vector z = logits.col(i);
      out.push_back(softmax(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())),
                            r.temperature));
    }
  }
  return out;
}

struct RouterEpochRecord
{
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct RouterTrainResult
{
  RouterNet router;
  std::vector<RouterEpochRecord> history;
  int best_epoch = -1;
};

inline double mean_cross_entropy(const RouterNet & r, std::span<const SampleFeatures> features,
                                 std::span<const int> labels)
{
  double total = 0.0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < features.size(); begin += kChunk) {
    const std::size_t n = std::min(kChunk, features.size() - begin);
    const Batch b = make_batch(features.subspan(begin, n));
    RouterCache cache;
    const nn::Matrix logits = router_forward(r, b, cache) / r.temperature;
    for (Eigen::Index i = 0; i < logits.cols(); ++i) {
      const double top = logits.col(i).maxCoeff();
      const double lse = top + std::log((logits.col(i).array() - top).exp().sum());
      total += lse - logits(labels[begin + static_cast<std::size_t>(i)], i);
    }
  }
  return features.empty() ? 0.0 : total / static_cast<double>(features.size());
}

/// Mini-batch Adam on mean cross-entropy against c_best labels. Keeps the
/// parameters with the lowest validation loss (training loss when `val_set`
/// is empty). `warm_start` copies its encoder layers when non-null.
inline RouterTrainResult train_router(std::span<const CanonicalSample> train_set,
                                      std::span<const int> labels,
                                      std::span<const CanonicalSample> val_set,
                                      std::span<const int> val_labels,
                                      const NetConfig & encoder_config, int C,
                                      const RouterConfig & config, const TrainOptions & options,
                                      std::uint64_t seed, const nn::Params * warm_start = nullptr)
{
  if (train_set.empty()) {
    throw Error("train_router: empty dataset");
  }
  if (labels.size() != train_set.size() || val_labels.size() != val_set.size()) {
    throw ConfigError("train_router: targets do not cover the dataset");
  }
  RouterTrainResult result;
  result.router = init_router(encoder_config, C, config, seed);
  RouterNet & router = result.router;
  if (warm_start) {
    check_encoder_shapes(encoder_config, *warm_start);
    for (std::size_t i = 0; i < encoder_config.encoder_end(); ++i) {
      router.params[i] = (*warm_start)[i];
    }
  }
  const auto features = extract_features(train_set, encoder_config);
  const auto val_features = extract_features(val_set, encoder_config);

  Rng rng(seed ^ 0x5DEECE66DULL);
  nn::Adam adam(router.params, {options.learning_rate});
  RouterNet best = router;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> batch_labels;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(options.batch_size));
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      batch_labels.clear();
      for (const auto row : rows) batch_labels.push_back(labels[row]);
      const Batch b = make_batch(features, rows);
      const LossGradient lg = cross_entropy_gradient(router, b, one_hot_matrix(batch_labels, C));
      adam.step(router.params, lg.grads);
      loss_sum += lg.loss;
      ++batches;
    }
    const double train_loss = loss_sum / static_cast<double>(batches);
    const double val_loss =
        val_features.empty() ? train_loss : mean_cross_entropy(router, val_features, val_labels);
    if (!std::isfinite(val_loss) || !nn::all_finite(router.params)) {
      throw NumericError("router training diverged at epoch " + std::to_string(epoch));
    }
    result.history.push_back({epoch, train_loss, val_loss});
    if (val_loss < best_loss) {
      best_loss = val_loss;
      best = router;
      result.best_epoch = epoch;
    }
  }
  result.router = std::move(best);
  return result;
}

inline nlohmann::json router_to_json(const RouterNet & r)
{
  return {{"format_version", 1},
          {"net_config", r.encoder_config},
          {"layers", nn::layers_to_json(r.params)},
          {"C", r.C},
          {"temperature", r.temperature},
          {"hidden_dim", r.hidden_dim}};
}

inline RouterNet router_from_json(const nlohmann::json & j)
{
  try {
    if (j.at("format_version").get<int>() != 1) {
      throw ConfigError("unsupported router format_version");
    }
    RouterNet r{j.at("net_config").get<NetConfig>(), nn::layers_from_json(j.at("layers")),
                j.at("C").get<int>(), j.at("temperature").get<double>(),
                j.at("hidden_dim").get<int>()};
    check_router_shapes(r);
    return r;
  } catch (const nlohmann::json::exception & e) {
    throw ConfigError(std::string("malformed router file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Policies

enum class RoutingPolicy { kRouter, kCluster, kRandom, kOracle };

inline std::string to_string(RoutingPolicy p)
{
  switch (p) {
    case RoutingPolicy::kRouter:
      return "router";
    case RoutingPolicy::kCluster:
      return "cluster";
    case RoutingPolicy::kRandom:
      return "random";
    case RoutingPolicy::kOracle:
      break;
  }
  return "oracle";
}

inline RoutingPolicy policy_from_string(const std::string & s)
{
  if (s == "router") return RoutingPolicy::kRouter;
  if (s == "cluster") return RoutingPolicy::kCluster;
  if (s == "random") return RoutingPolicy::kRandom;
  if (s == "oracle") return RoutingPolicy::kOracle;
  throw ConfigError("unknown routing policy '" + s + "'");
}

/// Artifacts a policy may need. Unused members can stay null.
struct RoutingContext
{
  const ExpertEnsemble * ensemble = nullptr;
  const RouterNet * router = nullptr;
  const TrajectoryModel * encoder = nullptr;  // baseline encoder for cluster confidence
  std::uint64_t seed = 0;                     // random policy
};

inline int choose_expert(const CanonicalSample & sample, RoutingPolicy policy,
                         const RoutingContext & ctx)
{
  if (!ctx.ensemble) throw ConfigError("routing needs an expert ensemble");
  switch (policy) {
    case RoutingPolicy::kRouter:
      if (!ctx.router) throw ConfigError("router policy needs a trained router");
      return select_expert(route_confidence(sample, *ctx.router));
    case RoutingPolicy::kCluster:
      if (!ctx.encoder) throw ConfigError("cluster policy needs the baseline encoder");
      return select_expert(cluster_confidence(sample, *ctx.encoder, ctx.ensemble->cluster_model));
    case RoutingPolicy::kRandom:
      return random_route(ctx.ensemble->C(), sample_seed(ctx.seed, sample.sample.sample_id));
    case RoutingPolicy::kOracle:
      if (sample.sample.ego_future.empty()) {
        throw ConfigError("oracle routing requires the ground-truth future");
      }
      return rank_experts(sample, *ctx.ensemble).c_best;
  }
  return 0;
}

/// World-frame prediction from the single expert the policy selects.
inline PredictionSet predict(const CanonicalSample & sample, RoutingPolicy policy,
                             const RoutingContext & ctx)
{
  const int c = choose_expert(sample, policy, ctx);
  const TrajectoryModel & expert = ctx.ensemble->experts.at(static_cast<std::size_t>(c));
  return decanonicalize(amend::predict(sample, expert, expert.config.k_max), sample.transform);
}

}  // namespace amend

#endif  // AMEND_ROUTING_HPP_
