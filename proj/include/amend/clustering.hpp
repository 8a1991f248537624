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

#ifndef AMEND_CLUSTERING_HPP_
#define AMEND_CLUSTERING_HPP_

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amend/baseline_net.hpp"
#include "amend/common.hpp"
#include "amend/data.hpp"
#include "amend/nn.hpp"

namespace amend
{

enum class ClusterBasis { kLatent, kEndpoint };

inline std::string to_string(ClusterBasis b) { return b == ClusterBasis::kLatent ? "latent" : "endpoint"; }

inline ClusterBasis basis_from_string(const std::string & s)
{
  if (s == "latent") return ClusterBasis::kLatent;
  if (s == "endpoint") return ClusterBasis::kEndpoint;
  throw ConfigError("unknown clustering basis '" + s + "'");
}

struct ClusterModel
{
  ClusterBasis basis = ClusterBasis::kLatent;
  int C = 0;
  std::vector<nn::Vector> centroids;
  std::map<std::int64_t, int> assignment;  // training sample id -> cluster
  double inertia = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> inertia_trace;  // inertia after each assignment step of the kept run
};

struct KMeansOptions
{
  int max_iter = 300;
  double tol = 1e-6;
  int n_init = 10;  // independent k-means++ restarts; the lowest inertia wins
};

/// Nearest centroid, ties to the lower index.
inline int nearest_centroid(const nn::Vector & point, const std::vector<nn::Vector> & centroids,
                            double * squared_distance = nullptr)
{
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = (point - centroids[c]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (squared_distance) *squared_distance = best_d;
  return best;
}

inline int assign(const nn::Vector & point, const ClusterModel & model)
{
  if (model.centroids.empty()) {
    throw Error("assign: cluster model has no centroids");
  }
  if (point.size() != model.centroids.front().size()) {
    throw ConfigError("assign: point dimension " + std::to_string(point.size()) +
                      " does not match basis dimension " +
                      std::to_string(model.centroids.front().size()));
  }
  return nearest_centroid(point, model.centroids);
}

namespace detail
{

struct LloydRun
{
  std::vector<nn::Vector> centroids;
  std::vector<int> labels;
  double inertia = 0.0;
  std::vector<double> trace;
};

inline std::vector<nn::Vector> kmeanspp_init(std::span<const nn::Vector> points, int C, Rng & rng)
{
  const std::size_t n = points.size();
  std::vector<nn::Vector> centroids;
  centroids.push_back(points[rng.index(n)]);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centroids.size()) < C) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (points[i] - centroids.back()).squaredNorm());
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (u < acc && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(n);
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

// Moves the point farthest from its centroid (taken from a cluster with more
// than one member) into each empty cluster.
inline bool repair_empty(std::span<const nn::Vector> points, std::vector<nn::Vector> & centroids,
                         std::vector<int> & labels)
{
  bool repaired = false;
  const int C = static_cast<int>(centroids.size());
  for (int c = 0; c < C; ++c) {
    std::vector<int> counts(static_cast<std::size_t>(C), 0);
    for (const int l : labels) ++counts[static_cast<std::size_t>(l)];
    if (counts[static_cast<std::size_t>(c)] > 0) continue;
    std::size_t far = points.size();
    double far_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const int l = labels[i];
      if (counts[static_cast<std::size_t>(l)] < 2) continue;
      const double d = (points[i] - centroids[static_cast<std::size_t>(l)]).squaredNorm();
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far == points.size()) break;  // n < C cannot happen here
    labels[far] = c;
    centroids[static_cast<std::size_t>(c)] = points[far];
    repaired = true;
  }
  return repaired;
}

inline double inertia_of(std::span<const nn::Vector> points, const std::vector<nn::Vector> & centroids,
                         const std::vector<int> & labels)
{
  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    total += (points[i] - centroids[static_cast<std::size_t>(labels[i])]).squaredNorm();
  }
  return total;
}

inline LloydRun lloyd(std::span<const nn::Vector> points, std::vector<nn::Vector> centroids,
                      const KMeansOptions & options)
{
  const std::size_t n = points.size();
  const int C = static_cast<int>(centroids.size());
  LloydRun run;
  run.labels.assign(n, 0);
  const auto assign_all = [&] {
    for (std::size_t i = 0; i < n; ++i) {
      run.labels[i] = nearest_centroid(points[i], centroids);
    }
  };

  for (int iter = 0; iter < options.max_iter; ++iter) {
    assign_all();
    const bool repaired = repair_empty(points, centroids, run.labels);
    run.trace.push_back(inertia_of(points, centroids, run.labels));

    std::vector<nn::Vector> next(static_cast<std::size_t>(C),
                                 nn::Vector::Zero(points.front().size()));
    std::vector<int> counts(static_cast<std::size_t>(C), 0);
    for (std::size_t i = 0; i < n; ++i) {
      next[static_cast<std::size_t>(run.labels[i])] += points[i];
      ++counts[static_cast<std::size_t>(run.labels[i])];
    }
    double shift = 0.0;
    for (int c = 0; c < C; ++c) {
      auto & centroid = next[static_cast<std::size_t>(c)];
      centroid /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
      shift = std::max(shift, (centroid - centroids[static_cast<std::size_t>(c)]).norm());
    }
    centroids = std::move(next);
    if (shift < options.tol && !repaired) {
      break;
    }
  }
  assign_all();
  repair_empty(points, centroids, run.labels);
  run.inertia = inertia_of(points, centroids, run.labels);
  run.trace.push_back(run.inertia);
  run.centroids = std::move(centroids);
  return run;
}

}  // namespace detail

/// k-means++ seeded Lloyd iterations, repeated `n_init` times from one seeded
/// stream. `ids` label the points in the assignment map (default 0..n-1).
inline ClusterModel fit_kmeans(std::span<const nn::Vector> points, int C, std::uint64_t seed,
                               const KMeansOptions & options = {},
                               std::span<const std::int64_t> ids = {})
{
  if (C < 1) {
    throw ConfigError("fit_kmeans: C must be at least 1");
  }
  if (points.size() < static_cast<std::size_t>(C)) {
    throw Error("fit_kmeans: need at least C=" + std::to_string(C) + " points, got " +
                std::to_string(points.size()));
  }
  if (!ids.empty() && ids.size() != points.size()) {
    throw ConfigError("fit_kmeans: ids do not match points");
  }
  for (const auto & p : points) {
    if (p.size() != points.front().size() || !p.allFinite()) {
      throw ConfigError("fit_kmeans: points must be finite and share one dimension");
    }
  }

  Rng rng(seed);
  detail::LloydRun best;
  bool have_best = false;
  for (int run = 0; run < std::max(1, options.n_init); ++run) {
    auto result = detail::lloyd(points, detail::kmeanspp_init(points, C, rng), options);
    if (!have_best || result.inertia < best.inertia) {
      best = std::move(result);
      have_best = true;
    }
  }

  ClusterModel model;
  model.C = C;
  model.seed = seed;
  model.centroids = std::move(best.centroids);
  model.inertia = best.inertia;
  model.inertia_trace = std::move(best.trace);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::int64_t id = ids.empty() ? static_cast<std::int64_t>(i) : ids[i];
    model.assignment[id] = best.labels[i];
  }
  return model;
}

// ---------------------------------------------------------------------------
// Bases

/// Encoder latents of many samples. `encoder_params` must start with the
/// encoder layout of `config`.
inline std::vector<nn::Vector> latent_basis(std::span<const CanonicalSample> samples,
                                            const NetConfig & config,
                                            const nn::Params & encoder_params)
{
  if (encoder_params.size() == 0) {
    throw Error("latent_basis: encoder is not fitted");
  }
  check_encoder_shapes(config, encoder_params);
  const auto features = extract_features(samples, config);
  std::vector<nn::Vector> out;
  out.reserve(samples.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < features.size(); begin += kChunk) {
    const auto sub = std::span<const SampleFeatures>(features).subspan(
        begin, std::min(kChunk, features.size() - begin));
    const Batch b = make_batch(sub);
    EncoderCache cache;
    const nn::Matrix z = encoder_forward(config, encoder_params, b, cache);
    for (Eigen::Index i = 0; i < z.cols(); ++i) {
      out.push_back(z.col(i));
    }
  }
  return out;
}

inline std::vector<nn::Vector> latent_basis(std::span<const CanonicalSample> samples,
                                            const TrajectoryModel & encoder)
{
  return latent_basis(samples, encoder.config, encoder.params);
}

/// Final canonical future position of each sample.
inline std::vector<nn::Vector> endpoint_basis(std::span<const CanonicalSample> samples)
{
  std::vector<nn::Vector> out;
  out.reserve(samples.size());
  for (const auto & s : samples) {
    if (s.sample.ego_future.empty()) {
      throw Error("endpoint_basis: sample " + std::to_string(s.sample.sample_id) +
                  " has no future");
    }
    const Point2 end = s.sample.ego_future.back();
    out.push_back(nn::Vector{{end.x, end.y}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

inline nlohmann::json cluster_to_json(const ClusterModel & m)
{
  std::vector<std::vector<double>> centroids;
  for (const auto & c : m.centroids) {
    centroids.emplace_back(c.data(), c.data() + c.size());
  }
  return {{"basis", to_string(m.basis)},
          {"C", m.C},
          {"centroids", centroids},
          {"seed", m.seed},
          {"inertia", m.inertia}};
}

inline ClusterModel cluster_from_json(const nlohmann::json & j)
{
  ClusterModel m;
  try {
    m.basis = basis_from_string(j.at("basis").get<std::string>());
    m.C = j.at("C").get<int>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.inertia = j.value("inertia", 0.0);
    for (const auto & c : j.at("centroids")) {
      const auto v = c.get<std::vector<double>>();
      m.centroids.push_back(Eigen::Map<const nn::Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
  } catch (const nlohmann::json::exception & e) {
    throw ConfigError(std::string("malformed cluster file: ") + e.what());
  }
  if (m.C < 1 || static_cast<int>(m.centroids.size()) != m.C) {
    throw ConfigError("cluster file: centroid count does not match C");
  }
  return m;
}

inline void write_assignments(std::ostream & out, const std::map<std::int64_t, int> & assignment)
{
  for (const auto & [id, c] : assignment) {
    out << id << '\t' << c << '\n';
  }
}

inline std::map<std::int64_t, int> read_assignments(std::istream & in)
{
  std::map<std::int64_t, int> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;
    std::int64_t id = 0;
    std::int64_t c = 0;
    if (fields.size() != 2 || !detail::parse_integral(fields[0], id) ||
        !detail::parse_integral(fields[1], c)) {
      throw ParseError("expected sample_id<TAB>cluster", line_no);
    }
    out[id] = static_cast<int>(c);
  }
  return out;
}

}  // namespace amend

#endif  // AMEND_CLUSTERING_HPP_
