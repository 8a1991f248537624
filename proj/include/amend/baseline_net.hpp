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

// Multi-hypothesis trajectory predictor trained with evolving
// winner-takes-all.
//
// Layer layout of a model's Params:
//   [0]                      per-neighbor layer, 4 -> neighbor_feature_dim
//   [1, encoder_end)         encoder trunk, (hist + pooled) -> ... -> latent
//   [encoder_end, head_begin) decoder trunk
//   [head_begin, +k_max)     one private output layer per hypothesis,
//                            emitting 2 * t_pred step displacements
// The encoder has the same layout in the router, which appends its own head.

#ifndef AMEND_BASELINE_NET_HPP_
#define AMEND_BASELINE_NET_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "amend/common.hpp"
#include "amend/data.hpp"
#include "amend/nn.hpp"

namespace amend
{

struct NetConfig
{
  int t_hist = 8;
  int t_pred = 12;
  int neighbor_feature_dim = 16;
  std::vector<int> encoder_hidden_dims{64, 64};
  int latent_dim = 32;
  std::vector<int> decoder_hidden_dims{64};
  int k_max = 20;
  int max_neighbors = 8;
  nn::Activation hidden_activation = nn::Activation::kTanh;

  static constexpr int kNeighborInputDim = 4;

  int hist_input_dim() const { return 2 * (t_hist - 1); }
  int output_dim() const { return 2 * t_pred; }
  std::size_t encoder_end() const { return 2 + encoder_hidden_dims.size(); }
  std::size_t head_begin() const { return encoder_end() + decoder_hidden_dims.size(); }
  std::size_t layer_count() const { return head_begin() + static_cast<std::size_t>(k_max); }

  void validate() const
  {
    const auto positive = [](int v) { return v > 0; };
    if (t_hist < 2 || t_pred < 1 || !positive(neighbor_feature_dim) || !positive(latent_dim) ||
        k_max < 1 || max_neighbors < 0 ||
        !std::all_of(encoder_hidden_dims.begin(), encoder_hidden_dims.end(), positive) ||
        !std::all_of(decoder_hidden_dims.begin(), decoder_hidden_dims.end(), positive)) {
      throw ConfigError("invalid network configuration");
    }
  }

  friend bool operator==(const NetConfig &, const NetConfig &) = default;
};

inline void to_json(nlohmann::json & j, const NetConfig & c)
{
  j = {{"t_hist", c.t_hist},
       {"t_pred", c.t_pred},
       {"hist_input_dim", c.hist_input_dim()},
       {"neighbor_feature_dim", c.neighbor_feature_dim},
       {"encoder_hidden_dims", c.encoder_hidden_dims},
       {"latent_dim", c.latent_dim},
       {"decoder_hidden_dims", c.decoder_hidden_dims},
       {"K_max", c.k_max},
       {"max_neighbors", c.max_neighbors},
       {"hidden_activation", nn::to_string(c.hidden_activation)}};
}

inline void from_json(const nlohmann::json & j, NetConfig & c)
{
  c = NetConfig{};
  c.t_hist = j.value("t_hist", c.t_hist);
  c.t_pred = j.value("t_pred", c.t_pred);
  c.neighbor_feature_dim = j.value("neighbor_feature_dim", c.neighbor_feature_dim);
  c.encoder_hidden_dims = j.value("encoder_hidden_dims", c.encoder_hidden_dims);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.decoder_hidden_dims = j.value("decoder_hidden_dims", c.decoder_hidden_dims);
  c.k_max = j.value("K_max", c.k_max);
  c.max_neighbors = j.value("max_neighbors", c.max_neighbors);
  c.hidden_activation =
      nn::activation_from_string(j.value("hidden_activation", std::string("tanh")));
  if (j.contains("hist_input_dim") && j.at("hist_input_dim").get<int>() != c.hist_input_dim()) {
    throw ConfigError("hist_input_dim does not match t_hist");
  }
  c.validate();
}

struct LatentVector
{
  nn::Vector values;
};

/// K hypothesized futures, each t_pred positions.
struct PredictionSet
{
  std::vector<Trajectory> hypotheses;

  int K() const { return static_cast<int>(hypotheses.size()); }
};

struct TrajectoryModel
{
  NetConfig config;
  nn::Params params;
};

// ---------------------------------------------------------------------------
// Construction

inline nn::Params init_encoder_layers(const NetConfig & c, Rng & rng)
{
  nn::Params p;
  p.layers.push_back(nn::glorot_layer(NetConfig::kNeighborInputDim, c.neighbor_feature_dim,
                                      c.hidden_activation, rng));
  int in = c.hist_input_dim() + c.neighbor_feature_dim;
  for (const int h : c.encoder_hidden_dims) {
    p.layers.push_back(nn::glorot_layer(in, h, c.hidden_activation, rng));
    in = h;
  }
  p.layers.push_back(nn::glorot_layer(in, c.latent_dim, nn::Activation::kLinear, rng));
  return p;
}

inline TrajectoryModel init_model(const NetConfig & c, std::uint64_t seed)
{
  c.validate();
  Rng rng(seed);
  TrajectoryModel m{c, init_encoder_layers(c, rng)};
  int in = c.latent_dim;
  for (const int h : c.decoder_hidden_dims) {
    m.params.layers.push_back(nn::glorot_layer(in, h, c.hidden_activation, rng));
    in = h;
  }
  for (int k = 0; k < c.k_max; ++k) {
    m.params.layers.push_back(nn::glorot_layer(in, c.output_dim(), nn::Activation::kLinear, rng));
  }
  return m;
}

/// Checks that the first encoder_end() layers chain as the encoder layout.
inline void check_encoder_shapes(const NetConfig & c, const nn::Params & p)
{
  if (p.size() < c.encoder_end()) {
    throw ConfigError("params have fewer layers than the encoder layout");
  }
  if (p[0].in_dim() != NetConfig::kNeighborInputDim || p[0].out_dim() != c.neighbor_feature_dim) {
    throw ConfigError("neighbor layer shape mismatch");
  }
  Eigen::Index in = c.hist_input_dim() + c.neighbor_feature_dim;
  for (std::size_t i = 1; i < c.encoder_end(); ++i) {
    if (p[i].in_dim() != in || p[i].bias.size() != p[i].out_dim()) {
      throw ConfigError("encoder layer " + std::to_string(i) + " shape mismatch");
    }
    in = p[i].out_dim();
  }
  if (in != c.latent_dim) {
    throw ConfigError("encoder output does not match latent_dim");
  }
}

inline void check_shapes(const TrajectoryModel & m)
{
  const NetConfig & c = m.config;
  if (m.params.size() != c.layer_count()) {
    throw ConfigError("model has " + std::to_string(m.params.size()) + " layers, config expects " +
                      std::to_string(c.layer_count()));
  }
  check_encoder_shapes(c, m.params);
  Eigen::Index in = c.latent_dim;
  for (std::size_t i = c.encoder_end(); i < c.head_begin(); ++i) {
    if (m.params[i].in_dim() != in) {
      throw ConfigError("decoder layer " + std::to_string(i) + " shape mismatch");
    }
    in = m.params[i].out_dim();
  }
  for (std::size_t i = c.head_begin(); i < c.layer_count(); ++i) {
    if (m.params[i].in_dim() != in || m.params[i].out_dim() != c.output_dim()) {
      throw ConfigError("hypothesis head " + std::to_string(i) + " shape mismatch");
    }
  }
}

// ---------------------------------------------------------------------------
// Features

/// Model inputs for one canonical sample.
struct SampleFeatures
{
  nn::Vector ego;        // flattened history displacements, 2 (t_hist - 1)
  nn::Matrix neighbors;  // 4 x m: relative position and velocity at t = 0
  nn::Vector future;     // flattened canonical future, 2 t_pred (may be empty)
};

inline SampleFeatures extract_features(const CanonicalSample & cs, const NetConfig & c)
{
  const TrajectorySample & s = cs.sample;
  if (static_cast<int>(s.ego_history.size()) != c.t_hist) {
    throw ConfigError("sample history length " + std::to_string(s.ego_history.size()) +
                      " does not match t_hist " + std::to_string(c.t_hist));
  }
  SampleFeatures f;
  f.ego.resize(c.hist_input_dim());
  for (int t = 1; t < c.t_hist; ++t) {
    const Point2 d = s.ego_history[static_cast<std::size_t>(t)] -
                     s.ego_history[static_cast<std::size_t>(t - 1)];
    f.ego(2 * (t - 1)) = d.x;
    f.ego(2 * (t - 1) + 1) = d.y;
  }

  const Point2 ego_now = s.ego_history.back();
  const Point2 ego_vel = ego_now - s.ego_history[s.ego_history.size() - 2];
  // Nearest valid neighbors at t = 0, ties by list order.
  std::vector<std::pair<double, std::size_t>> candidates;
  for (std::size_t i = 0; i < s.neighbors.size(); ++i) {
    const auto & n = s.neighbors[i];
    if (n.positions.empty() || n.valid.size() != n.positions.size() || !n.valid.back()) {
      continue;
    }
    candidates.emplace_back(distance(n.positions.back(), ego_now), i);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto & a, const auto & b) { return a.first < b.first; });
  if (static_cast<int>(candidates.size()) > c.max_neighbors) {
    candidates.resize(static_cast<std::size_t>(c.max_neighbors));
  }
  f.neighbors.resize(NetConfig::kNeighborInputDim, static_cast<Eigen::Index>(candidates.size()));
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    const auto & n = s.neighbors[candidates[j].second];
    const std::size_t last = n.positions.size() - 1;
    Point2 vel{};
    if (last > 0 && n.valid[last - 1]) {
      vel = n.positions[last] - n.positions[last - 1];
    }
    const Point2 rel_pos = n.positions[last] - ego_now;
    const Point2 rel_vel = vel - ego_vel;
    f.neighbors.col(static_cast<Eigen::Index>(j)) << rel_pos.x, rel_pos.y, rel_vel.x, rel_vel.y;
  }

  if (!s.ego_future.empty()) {
    f.future.resize(2 * static_cast<Eigen::Index>(s.ego_future.size()));
    for (std::size_t t = 0; t < s.ego_future.size(); ++t) {
      f.future(static_cast<Eigen::Index>(2 * t)) = s.ego_future[t].x;
      f.future(static_cast<Eigen::Index>(2 * t + 1)) = s.ego_future[t].y;
    }
  }
  return f;
}

inline std::vector<SampleFeatures> extract_features(std::span<const CanonicalSample> samples,
                                                    const NetConfig & c)
{
  std::vector<SampleFeatures> out;
  out.reserve(samples.size());
  for (const auto & s : samples) {
    out.push_back(extract_features(s, c));
  }
  return out;
}

/// Column-stacked features of several samples.
struct Batch
{
  nn::Matrix ego;                    // hist x B
  nn::Matrix neighbors;              // 4 x M
  std::vector<Eigen::Index> owner;   // M, column of the owning sample
  nn::Matrix future;                 // 2 t_pred x B (empty if no truth)

  Eigen::Index size() const { return ego.cols(); }
};

inline Batch make_batch(std::span<const SampleFeatures> features, std::span<const std::size_t> rows)
{
  Batch b;
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n == 0) {
    return b;
  }
  const auto & first = features[rows[0]];
  b.ego.resize(first.ego.size(), n);
  const bool with_future = first.future.size() > 0;
  if (with_future) {
    b.future.resize(first.future.size(), n);
  }
  Eigen::Index m = 0;
  for (const auto r : rows) {
    m += features[r].neighbors.cols();
  }
  b.neighbors.resize(NetConfig::kNeighborInputDim, m);
  b.owner.reserve(static_cast<std::size_t>(m));
  Eigen::Index col = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto & f = features[rows[static_cast<std::size_t>(i)]];
    b.ego.col(i) = f.ego;
    if (with_future) {
      if (f.future.size() != b.future.rows()) {
        throw ConfigError("inconsistent future lengths in batch");
      }
      b.future.col(i) = f.future;
    }
    for (Eigen::Index k = 0; k < f.neighbors.cols(); ++k) {
      b.neighbors.col(col++) = f.neighbors.col(k);
      b.owner.push_back(i);
    }
  }
  return b;
}

inline Batch make_batch(std::span<const SampleFeatures> features)
{
  std::vector<std::size_t> rows(features.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return make_batch(features, rows);
}

// ---------------------------------------------------------------------------
// Encoder

struct EncoderCache
{
  nn::Matrix neighbor_out;  // nf x M
  Eigen::MatrixXi argmax;   // nf x B, index into neighbor columns or -1
  nn::StackCache trunk;
};

/// Latent codes (latent_dim x B) for the encoder held in params[0, encoder_end).
inline nn::Matrix encoder_forward(const NetConfig & c, const nn::Params & p, const Batch & b,
                                  EncoderCache & cache)
{
  const Eigen::Index batch = b.size();
  const Eigen::Index nf = c.neighbor_feature_dim;
  nn::Matrix pooled = nn::Matrix::Zero(nf, batch);
  cache.argmax = Eigen::MatrixXi::Constant(nf, batch, -1);
  if (b.neighbors.cols() > 0) {
    cache.neighbor_out = nn::forward(p[0], b.neighbors);
    nn::check_finite(cache.neighbor_out, 0, "activation");
    for (Eigen::Index j = 0; j < cache.neighbor_out.cols(); ++j) {
      const Eigen::Index owner = b.owner[static_cast<std::size_t>(j)];
      for (Eigen::Index r = 0; r < nf; ++r) {
        const double v = cache.neighbor_out(r, j);
        if (cache.argmax(r, owner) < 0 || v > pooled(r, owner)) {
          pooled(r, owner) = v;
          cache.argmax(r, owner) = static_cast<int>(j);
        }
      }
    }
  } else {
    cache.neighbor_out.resize(nf, 0);
  }

  nn::Matrix input(b.ego.rows() + nf, batch);
  input.topRows(b.ego.rows()) = b.ego;
  input.bottomRows(nf) = pooled;
  cache.trunk = nn::forward_stack(p, 1, c.encoder_end(), input);
  return cache.trunk.values.back();
}

inline void encoder_backward(const NetConfig & c, const nn::Params & p, const Batch & b,
                             const EncoderCache & cache, const nn::Matrix & d_latent,
                             nn::Params & grads)
{
  const nn::Matrix d_input = nn::backward_stack(p, 1, c.encoder_end(), cache.trunk, d_latent, grads);
  if (b.neighbors.cols() == 0) {
    return;
  }
  const Eigen::Index nf = c.neighbor_feature_dim;
  const auto d_pooled = d_input.bottomRows(nf);
  nn::Matrix d_neighbor = nn::Matrix::Zero(nf, b.neighbors.cols());
  for (Eigen::Index i = 0; i < cache.argmax.cols(); ++i) {
    for (Eigen::Index r = 0; r < nf; ++r) {
      const int j = cache.argmax(r, i);
      if (j >= 0) {
        d_neighbor(r, j) += d_pooled(r, i);
      }
    }
  }
  nn::check_finite(d_neighbor, 0, "gradient");
  nn::backward(p[0], b.neighbors, cache.neighbor_out, d_neighbor, grads[0], false);
}

// ---------------------------------------------------------------------------
// Decoder

struct DecoderCache
{
  nn::StackCache trunk;
  std::vector<nn::Matrix> head_out;  // per-hypothesis step displacements
};

/// Per-hypothesis positions (2 t_pred x B each), the running sum of each
/// head's step displacements from the origin.
inline std::vector<nn::Matrix> decoder_forward(const TrajectoryModel & m, const nn::Matrix & latent,
                                               int K, DecoderCache & cache)
{
  const NetConfig & c = m.config;
  if (K < 1 || K > c.k_max) {
    throw ConfigError("requested K=" + std::to_string(K) + " outside [1, K_max]");
  }
  cache.trunk = nn::forward_stack(m.params, c.encoder_end(), c.head_begin(), latent);
  const nn::Matrix & h = cache.trunk.values.back();
  std::vector<nn::Matrix> positions;
  positions.reserve(static_cast<std::size_t>(K));
  cache.head_out.clear();
  for (int k = 0; k < K; ++k) {
    const std::size_t li = c.head_begin() + static_cast<std::size_t>(k);
    cache.head_out.push_back(nn::forward(m.params[li], h));
    nn::check_finite(cache.head_out.back(), li, "activation");
    nn::Matrix pos = cache.head_out.back();
    for (Eigen::Index r = 2; r < pos.rows(); ++r) {
      pos.row(r) += pos.row(r - 2);
    }
    positions.push_back(std::move(pos));
  }
  return positions;
}

// ---------------------------------------------------------------------------
// Loss

/// Indices of the k smallest errors, ties to the lower index.
inline std::vector<int> winners(std::span<const double> errors, int k)
{
  std::vector<int> order(errors.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return errors[static_cast<std::size_t>(a)] < errors[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(std::clamp(k, 0, static_cast<int>(order.size()))));
  return order;
}

/// Mean squared Euclidean distance over the horizon.
inline double hypothesis_error(const Trajectory & hyp, const Trajectory & truth)
{
  if (hyp.size() != truth.size() || truth.empty()) {
    throw ConfigError("hypothesis and truth lengths differ");
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    sum += (hyp[t] - truth[t]).squared_norm();
  }
  return sum / static_cast<double>(truth.size());
}

/// Mean of the k smallest per-hypothesis errors.
inline double ewta_loss(const PredictionSet & pred, const Trajectory & truth, int k)
{
  if (k < 1 || k > pred.K()) {
    throw ConfigError("ewta_loss: k must lie in [1, K]");
  }
  std::vector<double> errors;
  errors.reserve(pred.hypotheses.size());
  for (const auto & h : pred.hypotheses) {
    errors.push_back(hypothesis_error(h, truth));
  }
  double sum = 0.0;
  for (const int w : winners(errors, k)) {
    sum += errors[static_cast<std::size_t>(w)];
  }
  return sum / static_cast<double>(k);
}

/// (1/B) sum_i w_i L_i over a batch and, optionally, dL/d(positions).
inline double ewta_batch_loss(const std::vector<nn::Matrix> & positions, const nn::Matrix & future,
                              int k, std::span<const double> weights,
                              std::vector<nn::Matrix> * d_positions)
{
  const int K = static_cast<int>(positions.size());
  if (k < 1 || k > K) {
    throw ConfigError("ewta loss: k must lie in [1, K]");
  }
  const Eigen::Index batch = future.cols();
  const double steps = static_cast<double>(future.rows() / 2);
  if (d_positions) {
    d_positions->assign(static_cast<std::size_t>(K), nn::Matrix::Zero(future.rows(), batch));
  }
  double total = 0.0;
  std::vector<double> errors(static_cast<std::size_t>(K));
  for (Eigen::Index i = 0; i < batch; ++i) {
    for (int h = 0; h < K; ++h) {
      errors[static_cast<std::size_t>(h)] =
          (positions[static_cast<std::size_t>(h)].col(i) - future.col(i)).squaredNorm() / steps;
    }
    const auto win = winners(errors, k);
    double loss = 0.0;
    for (const int h : win) {
      loss += errors[static_cast<std::size_t>(h)];
    }
    loss /= static_cast<double>(k);
    const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
    total += w * loss;
    if (d_positions) {
      const double scale = w / static_cast<double>(batch) / static_cast<double>(k) * 2.0 / steps;
      for (const int h : win) {
        (*d_positions)[static_cast<std::size_t>(h)].col(i) =
            scale * (positions[static_cast<std::size_t>(h)].col(i) - future.col(i));
      }
    }
  }
  return total / static_cast<double>(batch);
}

struct LossGradient
{
  double loss = 0.0;
  nn::Params grads;
};

/// Loss and exact gradient of encode -> decode -> weighted EWTA over a batch.
inline LossGradient ewta_gradient(const TrajectoryModel & m, const Batch & b, int k,
                                  std::span<const double> weights = {})
{
  const NetConfig & c = m.config;
  EncoderCache enc;
  const nn::Matrix latent = encoder_forward(c, m.params, b, enc);
  DecoderCache dec;
  const auto positions = decoder_forward(m, latent, c.k_max, dec);

  LossGradient out;
  std::vector<nn::Matrix> d_positions;
  out.loss = ewta_batch_loss(positions, b.future, k, weights, &d_positions);
  if (!std::isfinite(out.loss)) {
    throw NumericError("non-finite EWTA loss");
  }
  out.grads = nn::zeros_like(m.params);

  const nn::Matrix & h = dec.trunk.values.back();
  nn::Matrix d_h = nn::Matrix::Zero(h.rows(), h.cols());
  for (int hyp = 0; hyp < c.k_max; ++hyp) {
    nn::Matrix d_disp = std::move(d_positions[static_cast<std::size_t>(hyp)]);
    if (d_disp.isZero(0.0)) {
      continue;  // not a winner for any sample: the head's gradient stays exactly zero
    }
    // Adjoint of the running sum: suffix sums over steps.
    for (Eigen::Index r = d_disp.rows() - 3; r >= 0; --r) {
      d_disp.row(r) += d_disp.row(r + 2);
    }
    const std::size_t li = c.head_begin() + static_cast<std::size_t>(hyp);
    d_h += nn::backward(m.params[li], h, dec.head_out[static_cast<std::size_t>(hyp)], d_disp,
                        out.grads[li]);
  }
  const nn::Matrix d_latent =
      nn::backward_stack(m.params, c.encoder_end(), c.head_begin(), dec.trunk, d_h, out.grads);
  encoder_backward(c, m.params, b, enc, d_latent, out.grads);
  return out;
}

// ---------------------------------------------------------------------------
// Single-sample API

inline LatentVector encode(const CanonicalSample & sample, const TrajectoryModel & m)
{
  check_encoder_shapes(m.config, m.params);
  const SampleFeatures f = extract_features(sample, m.config);
  const Batch b = make_batch(std::span<const SampleFeatures>(&f, 1));
  EncoderCache cache;
  return {encoder_forward(m.config, m.params, b, cache).col(0)};
}

inline PredictionSet to_prediction_set(const std::vector<nn::Matrix> & positions, Eigen::Index col)
{
  PredictionSet out;
  out.hypotheses.reserve(positions.size());
  for (const auto & pos : positions) {
    Trajectory t(static_cast<std::size_t>(pos.rows() / 2));
    for (std::size_t s = 0; s < t.size(); ++s) {
      t[s] = {pos(static_cast<Eigen::Index>(2 * s), col),
              pos(static_cast<Eigen::Index>(2 * s + 1), col)};
    }
    out.hypotheses.push_back(std::move(t));
  }
  return out;
}

inline PredictionSet decode(const LatentVector & z, const TrajectoryModel & m, int K)
{
  check_shapes(m);
  if (z.values.size() != m.config.latent_dim) {
    throw ConfigError("latent dimension mismatch");
  }
  DecoderCache cache;
  const nn::Matrix latent = z.values;
  return to_prediction_set(decoder_forward(m, latent, K, cache), 0);
}

/// Canonical-frame prediction.
inline PredictionSet predict(const CanonicalSample & sample, const TrajectoryModel & m, int K)
{
  return decode(encode(sample, m), m, K);
}

/// Batched canonical-frame predictions for many samples.
inline std::vector<PredictionSet> predict_all(std::span<const SampleFeatures> features,
                                              const TrajectoryModel & m, int K)
{
  check_shapes(m);
  std::vector<PredictionSet> out;
  out.reserve(features.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < features.size(); begin += kChunk) {
    const auto sub = features.subspan(begin, std::min(kChunk, features.size() - begin));
    const Batch b = make_batch(sub);
    EncoderCache enc;
    DecoderCache dec;
    const auto positions = decoder_forward(m, encoder_forward(m.config, m.params, b, enc), K, dec);
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      out.push_back(to_prediction_set(positions, i));
    }
  }
  return out;
}

/// Gradient of ewta_loss(predict(sample), truth, k) with respect to params.
inline nn::Params backward(const CanonicalSample & sample, const Trajectory & truth,
                           const TrajectoryModel & m, int k)
{
  check_shapes(m);
  SampleFeatures f = extract_features(sample, m.config);
  f.future.resize(2 * static_cast<Eigen::Index>(truth.size()));
  for (std::size_t t = 0; t < truth.size(); ++t) {
    f.future(static_cast<Eigen::Index>(2 * t)) = truth[t].x;
    f.future(static_cast<Eigen::Index>(2 * t + 1)) = truth[t].y;
  }
  if (f.future.size() != m.config.output_dim()) {
    throw ConfigError("truth length does not match t_pred");
  }
  const Batch b = make_batch(std::span<const SampleFeatures>(&f, 1));
  return ewta_gradient(m, b, k).grads;
}

// ---------------------------------------------------------------------------
// Training

/// k annealing: shrink by decay_factor after `patience` epochs without a new
/// best validation metric. Each decay strictly lowers k until it reaches 1.
struct EwtaSchedule
{
  int k_current = 20;
  double decay_factor = 0.8;
  int patience_epochs = 5;
  double best_metric_so_far = std::numeric_limits<double>::infinity();
  int epochs_without_improvement = 0;

  static int decayed(int k, double factor)
  {
    const int shrunk = static_cast<int>(std::ceil(factor * k - 1e-9));
    return std::max(1, std::min(shrunk, k - 1));
  }

  /// Returns true when `metric` is a new best.
  bool observe(double metric)
  {
    if (metric < best_metric_so_far) {
      best_metric_so_far = metric;
      epochs_without_improvement = 0;
      return true;
    }
    if (++epochs_without_improvement >= patience_epochs) {
      k_current = decayed(k_current, decay_factor);
      epochs_without_improvement = 0;
    }
    return false;
  }
};

struct TrainOptions
{
  int epochs = 300;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double decay_factor = 0.8;
  int patience_epochs = 5;
};

struct EpochRecord
{
  int epoch = 0;
  int k = 0;
  double train_loss = 0.0;
  double val_min_ade = 0.0;
};

struct TrainResult
{
  TrajectoryModel model;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_min_ade = std::numeric_limits<double>::infinity();
};

/// Weighted mean canonical minADE over all K_max hypotheses.
inline double mean_min_ade(const TrajectoryModel & m, std::span<const SampleFeatures> features,
                           std::span<const double> weights = {})
{
  const auto preds = predict_all(features, m, m.config.k_max);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const nn::Vector & truth = features[i].future;
    double best = std::numeric_limits<double>::infinity();
    for (const auto & hyp : preds[i].hypotheses) {
      double ade = 0.0;
      for (std::size_t t = 0; t < hyp.size(); ++t) {
        ade += std::hypot(hyp[t].x - truth(static_cast<Eigen::Index>(2 * t)),
                          hyp[t].y - truth(static_cast<Eigen::Index>(2 * t + 1)));
      }
      best = std::min(best, ade / static_cast<double>(hyp.size()));
    }
    const double w = weights.empty() ? 1.0 : weights[i];
    num += w * best;
    den += w;
  }
  return den > 0.0 ? num / den : 0.0;
}

/// Mini-batch Adam on the mean weighted EWTA loss. Returns the parameters with
/// the best validation minADE. `weights`/`val_weights` may be empty (all 1).
inline TrainResult train(std::span<const CanonicalSample> train_set,
                         std::span<const CanonicalSample> val_set, const NetConfig & config,
                         const TrainOptions & options, std::uint64_t seed,
                         std::span<const double> weights = {},
                         std::span<const double> val_weights = {})
{
  if (train_set.empty()) {
    throw Error("train: empty dataset");
  }
  if (options.epochs < 1 || options.batch_size < 1) {
    throw ConfigError("train: epochs and batch_size must be positive");
  }
  if (!weights.empty() && weights.size() != train_set.size()) {
    throw ConfigError("train: weights do not cover the dataset");
  }
  const auto train_features = extract_features(train_set, config);
  const auto val_features =
      val_set.empty() ? train_features : extract_features(val_set, config);
  if (!val_weights.empty() && val_weights.size() != val_features.size()) {
    throw ConfigError("train: validation weights do not cover the validation set");
  }
  for (const auto & f : train_features) {
    if (f.future.size() != config.output_dim()) {
      throw ConfigError("train: sample future does not match t_pred");
    }
  }

  Rng rng(seed);
  TrainResult result;
  result.model = init_model(config, seed);
  TrajectoryModel & model = result.model;
  TrajectoryModel best = model;
  nn::Adam adam(model.params, {options.learning_rate});
  EwtaSchedule schedule{config.k_max, options.decay_factor, options.patience_epochs};

  std::vector<std::size_t> order(train_features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> batch_weights;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(options.batch_size));
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const Batch b = make_batch(train_features, rows);
      batch_weights.clear();
      for (const auto r : rows) {
        batch_weights.push_back(weights.empty() ? 1.0 : weights[r]);
      }
      LossGradient lg;
      try {
        lg = ewta_gradient(model, b, schedule.k_current, batch_weights);
      } catch (const NumericError & e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches) + ")");
      }
      adam.step(model.params, lg.grads);
      loss_sum += lg.loss;
      ++batches;
    }
    if (!nn::all_finite(model.params)) {
      throw NumericError("non-finite parameters after epoch " + std::to_string(epoch));
    }
    const double val = mean_min_ade(model, val_features, val_weights);
    if (!std::isfinite(val)) {
      throw NumericError("non-finite validation minADE at epoch " + std::to_string(epoch));
    }
    result.history.push_back(
        {epoch, schedule.k_current, loss_sum / static_cast<double>(batches), val});
    if (schedule.observe(val)) {
      best = model;
      result.best_epoch = epoch;
      result.best_val_min_ade = val;
    }
  }
  result.model = std::move(best);
  return result;
}

// ---------------------------------------------------------------------------
// Model file

inline nlohmann::json model_to_json(const TrajectoryModel & m)
{
  return {{"format_version", 1},
          {"net_config", m.config},
          {"layers", nn::layers_to_json(m.params)}};
}

inline TrajectoryModel model_from_json(const nlohmann::json & j)
{
  try {
    if (j.at("format_version").get<int>() != 1) {
      throw ConfigError("unsupported model format_version");
    }
    TrajectoryModel m{j.at("net_config").get<NetConfig>(), nn::layers_from_json(j.at("layers"))};
    check_shapes(m);
    return m;
  } catch (const nlohmann::json::exception & e) {
    throw ConfigError(std::string("malformed model file: ") + e.what());
  }
}

}  // namespace amend

#endif  // AMEND_BASELINE_NET_HPP_
