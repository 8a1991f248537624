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
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <vector>

#include "amend/clustering.hpp"
#include "test_support.hpp"

namespace amend
{
namespace
{

std::vector<nn::Vector> points_1d(const std::vector<double> & xs)
{
  std::vector<nn::Vector> out;
  for (const double x : xs) out.push_back(nn::Vector::Constant(1, x));
  return out;
}

// Lowest within-cluster sum of squares over every labeling with no empty cluster.
double best_partition_inertia(const std::vector<nn::Vector> & pts, int C)
{
  const std::size_t n = pts.size();
  std::vector<int> labels(n, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<nn::Vector> sums(static_cast<std::size_t>(C), nn::Vector::Zero(pts[0].size()));
    std::vector<int> counts(static_cast<std::size_t>(C), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums[static_cast<std::size_t>(labels[i])] += pts[i];
      ++counts[static_cast<std::size_t>(labels[i])];
    }
    if (std::all_of(counts.begin(), counts.end(), [](int c) { return c > 0; })) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto l = static_cast<std::size_t>(labels[i]);
        total += (pts[i] - sums[l] / counts[l]).squaredNorm();
      }
      best = std::min(best, total);
    }
    std::size_t pos = 0;
    while (pos < n && ++labels[pos] == C) labels[pos++] = 0;
    if (pos == n) break;
  }
  return best;
}

std::vector<nn::Vector> random_points(Rng & rng, std::size_t n, int dim)
{
  std::vector<nn::Vector> out;
  for (std::size_t i = 0; i < n; ++i) {
    nn::Vector v(dim);
    for (int d = 0; d < dim; ++d) v(d) = rng.uniform(-5, 5);
    out.push_back(v);
  }
  return out;
}

TEST(KMeans, SeparatedPairs)
{
  const auto m = fit_kmeans(points_1d({0.0, 0.1, 10.0, 10.1}), 2, 1);
  std::vector<double> c{m.centroids[0](0), m.centroids[1](0)};
  std::sort(c.begin(), c.end());
  EXPECT_NEAR(c[0], 0.05, 1e-12);
  EXPECT_NEAR(c[1], 10.05, 1e-12);
  EXPECT_NEAR(m.inertia, 0.01, 1e-12);
  EXPECT_NEAR(m.inertia, best_partition_inertia(points_1d({0.0, 0.1, 10.0, 10.1}), 2), 1e-12);
  EXPECT_EQ(m.assignment.at(0), m.assignment.at(1));
  EXPECT_EQ(m.assignment.at(2), m.assignment.at(3));
  EXPECT_NE(m.assignment.at(0), m.assignment.at(2));
}

TEST(KMeans, IdenticalPointsOneCluster)
{
  const auto m = fit_kmeans(points_1d({3.5, 3.5, 3.5, 3.5, 3.5}), 1, 2);
  EXPECT_EQ(m.centroids[0](0), 3.5);
  EXPECT_EQ(m.inertia, 0.0);
}

TEST(KMeans, OnePointPerCluster)
{
  Rng rng(4);
  const auto pts = random_points(rng, 6, 3);
  const auto m = fit_kmeans(pts, 6, 9);
  EXPECT_EQ(m.inertia, 0.0);
  std::set<int> used;
  for (const auto & [id, c] : m.assignment) {
    used.insert(c);
    EXPECT_EQ(m.centroids[static_cast<std::size_t>(c)], pts[static_cast<std::size_t>(id)]);
  }
  EXPECT_EQ(used.size(), 6u);
}

TEST(KMeans, DuplicatePointsStillFillEveryCluster)
{
  const auto m = fit_kmeans(points_1d({1.0, 1.0, 1.0, 2.0}), 3, 5);
  std::set<int> used;
  for (const auto & [id, c] : m.assignment) used.insert(c);
  EXPECT_EQ(used.size(), 3u);
}

TEST(KMeans, SeparatedSmallSetsReachExhaustiveOptimum)
{
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const int C = 1 + static_cast<int>(rng.index(3));
    std::vector<nn::Vector> pts;
    for (int c = 0; c < C; ++c) {
      const std::size_t members = 1 + rng.index(3);
      for (std::size_t i = 0; i < members; ++i) {
        pts.push_back(nn::Vector{{100.0 * c + rng.uniform(-1, 1), rng.uniform(-1, 1)}});
      }
    }
    const auto m = fit_kmeans(pts, C, static_cast<std::uint64_t>(trial));
    EXPECT_NEAR(m.inertia, best_partition_inertia(pts, C), 1e-9) << "trial " << trial;
  }
}

TEST(KMeans, RandomSmallSetsMostlyReachExhaustiveOptimum)
{
  // Lloyd with restarts is a local method; the optimum is not guaranteed.
  Rng rng(11);
  int optimal = 0;
  const int trials = 300;
  for (int trial = 0; trial < trials; ++trial) {
    const std::size_t n = 1 + rng.index(10);
    const int C = 1 + static_cast<int>(rng.index(std::min<std::uint64_t>(3, n)));
    const auto pts = random_points(rng, n, 1 + static_cast<int>(rng.index(2)));
    const auto m = fit_kmeans(pts, C, static_cast<std::uint64_t>(trial));
    const double best = best_partition_inertia(pts, C);
    EXPECT_GE(m.inertia, best - 1e-9);
    optimal += m.inertia <= best + 1e-9 ? 1 : 0;
  }
  EXPECT_GE(optimal, trials * 95 / 100);
}

TEST(KMeans, InertiaTraceNonIncreasing)
{
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto pts = random_points(rng, 20 + rng.index(200), 1 + static_cast<int>(rng.index(4)));
    const auto m = fit_kmeans(pts, 2 + static_cast<int>(rng.index(5)), static_cast<std::uint64_t>(trial));
    ASSERT_FALSE(m.inertia_trace.empty());
    for (std::size_t i = 1; i < m.inertia_trace.size(); ++i) {
      EXPECT_LE(m.inertia_trace[i], m.inertia_trace[i - 1] + 1e-9 * m.inertia_trace[i - 1]);
    }
    EXPECT_EQ(m.inertia_trace.back(), m.inertia);
  }
}

TEST(KMeans, AssignmentIsNearestCentroid)
{
  Rng rng(13);
  const auto pts = random_points(rng, 300, 3);
  const auto m = fit_kmeans(pts, 4, 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const int c = m.assignment.at(static_cast<std::int64_t>(i));
    for (const auto & other : m.centroids) {
      EXPECT_LE((pts[i] - m.centroids[static_cast<std::size_t>(c)]).squaredNorm(),
                (pts[i] - other).squaredNorm());
    }
  }
}

TEST(KMeans, DeterministicPerSeedAndUsesIds)
{
  Rng rng(14);
  const auto pts = random_points(rng, 100, 2);
  std::vector<std::int64_t> ids;
  for (std::size_t i = 0; i < pts.size(); ++i) ids.push_back(1000 + 3 * static_cast<std::int64_t>(i));
  const auto a = fit_kmeans(pts, 3, 7, {}, ids);
  const auto b = fit_kmeans(pts, 3, 7, {}, ids);
  EXPECT_EQ(a.centroids, b.centroids);
  EXPECT_EQ(a.assignment, b.assignment);
  EXPECT_EQ(a.assignment.begin()->first, 1000);
}

TEST(KMeans, PermutedInputGivesSameCentroidsUpToLabels)
{
  Rng rng(15);
  // Three well separated blobs so the optimum is unique.
  std::vector<nn::Vector> pts;
  for (int blob = 0; blob < 3; ++blob) {
    for (int i = 0; i < 40; ++i) {
      pts.push_back(nn::Vector{{10.0 * blob + rng.uniform(-1, 1), rng.uniform(-1, 1)}});
    }
  }
  std::vector<std::size_t> order(pts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<nn::Vector> shuffled;
  std::vector<std::int64_t> ids;
  for (const auto i : order) {
    shuffled.push_back(pts[i]);
    ids.push_back(static_cast<std::int64_t>(i));
  }
  const auto a = fit_kmeans(pts, 3, 1);
  const auto b = fit_kmeans(shuffled, 3, 99, {}, ids);
  std::map<int, int> relabel;
  for (const auto & [id, c] : a.assignment) {
    const int other = b.assignment.at(id);
    if (relabel.count(c)) {
      EXPECT_EQ(relabel[c], other);
    }
    relabel[c] = other;
  }
  ASSERT_EQ(relabel.size(), 3u);
  for (const auto & [ca, cb] : relabel) {
    EXPECT_LT((a.centroids[static_cast<std::size_t>(ca)] - b.centroids[static_cast<std::size_t>(cb)]).norm(), 1e-9);
  }
}

TEST(KMeans, RejectsBadInput)
{
  EXPECT_THROW(fit_kmeans(points_1d({1.0}), 2, 0), Error);
  EXPECT_THROW(fit_kmeans(points_1d({1.0}), 0, 0), ConfigError);
  auto pts = points_1d({1.0, 2.0});
  pts.push_back(nn::Vector::Zero(2));
  EXPECT_THROW(fit_kmeans(pts, 1, 0), ConfigError);
}

ClusterModel fixed_model(std::vector<nn::Vector> centroids)
{
  ClusterModel m;
  m.C = static_cast<int>(centroids.size());
  m.centroids = std::move(centroids);
  return m;
}

TEST(Assign, ExactAndTieCases)
{
  const auto m = fixed_model({nn::Vector{{0.0, 0.0}}, nn::Vector{{4.0, 0.0}}, nn::Vector{{2.0, 2.0}}});
  EXPECT_EQ(assign(nn::Vector{{4.0, 0.0}}, m), 1);
  // Equidistant from centroids 0 and 2.
  EXPECT_EQ(assign(nn::Vector{{0.0, 2.0}}, m), 0);
  // Equidistant from all three.
  EXPECT_EQ(assign(nn::Vector{{2.0, 0.0}}, m), 0);
  EXPECT_THROW(assign(nn::Vector{{1.0}}, m), ConfigError);
  EXPECT_THROW(assign(nn::Vector{{1.0}}, ClusterModel{}), Error);
}

TEST(Assign, MatchesLinearScan)
{
  Rng rng(16);
  for (int trial = 0; trial < 500; ++trial) {
    const auto centroids = random_points(rng, 1 + rng.index(6), 3);
    const auto m = fixed_model(centroids);
    const nn::Vector p = random_points(rng, 1, 3)[0];
    std::size_t best = 0;
    for (std::size_t c = 1; c < centroids.size(); ++c) {
      if ((p - centroids[c]).norm() < (p - centroids[best]).norm()) best = c;
    }
    EXPECT_EQ(assign(p, m), static_cast<int>(best));
  }
}

TEST(Bases, EndpointExamples)
{
  CanonicalSample straight;
  CanonicalSample still;
  for (int t = 1; t <= 12; ++t) {
    straight.sample.ego_future.push_back({0.0, static_cast<double>(t)});
    still.sample.ego_future.push_back({0.0, 0.0});
  }
  const std::vector<CanonicalSample> s{straight, still};
  const auto e = endpoint_basis(s);
  EXPECT_EQ(e[0], (nn::Vector{{0.0, 12.0}}));
  EXPECT_EQ(e[1], (nn::Vector{{0.0, 0.0}}));
  std::vector<CanonicalSample> empty(1);
  EXPECT_THROW(endpoint_basis(empty), Error);
}

TEST(Bases, EndpointClustersRecoverModes)
{
  const auto raw = synthesize_dataset(testing::three_mode_spec(1500), 7);
  const auto canon = canonicalize_all(raw, fit_normalization(raw));
  const auto m = fit_kmeans(endpoint_basis(canon), 3, 3);
  std::map<int, std::map<int, int>> counts;
  for (std::size_t i = 0; i < canon.size(); ++i) {
    ++counts[m.assignment.at(static_cast<std::int64_t>(i))][canon[i].sample.label];
  }
  int pure = 0;
  for (const auto & [c, by_label] : counts) {
    int most = 0;
    for (const auto & [label, n] : by_label) most = std::max(most, n);
    pure += most;
  }
  EXPECT_GE(static_cast<double>(pure) / static_cast<double>(canon.size()), 0.95);
}

TEST(Bases, LatentShapeAndDeterminism)
{
  Rng rng(17);
  const NetConfig c;
  const TrajectoryModel enc = init_model(c, 4);
  std::vector<CanonicalSample> s;
  for (int i = 0; i < 300; ++i) s.push_back(testing::random_canonical(rng, c, static_cast<int>(rng.index(5)), i));
  s.push_back(s[3]);
  const auto a = latent_basis(s, enc);
  const auto b = latent_basis(s, enc);
  ASSERT_EQ(a.size(), s.size());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.back(), a[3]);
  EXPECT_EQ(a[0].size(), c.latent_dim);
  EXPECT_EQ(a[7], encode(s[7], enc).values);
  EXPECT_THROW(latent_basis(s, c, nn::Params{}), Error);
}

TEST(ClusterFile, RoundTrip)
{
  Rng rng(18);
  auto m = fit_kmeans(random_points(rng, 50, 4), 3, 6);
  m.basis = ClusterBasis::kEndpoint;
  const auto back = cluster_from_json(nlohmann::json::parse(cluster_to_json(m).dump()));
  EXPECT_EQ(back.basis, ClusterBasis::kEndpoint);
  EXPECT_EQ(back.C, 3);
  EXPECT_EQ(back.centroids, m.centroids);
  EXPECT_EQ(back.seed, 6u);
  auto j = cluster_to_json(m);
  j["C"] = 4;
  EXPECT_THROW(cluster_from_json(j), ConfigError);
  EXPECT_THROW(basis_from_string("corners"), ConfigError);

  std::stringstream ss;
  write_assignments(ss, m.assignment);
  EXPECT_EQ(read_assignments(ss), m.assignment);
  std::stringstream bad("1\t0\n2\tx\n");
  EXPECT_THROW(read_assignments(bad), ParseError);
}

}  // namespace
}  // namespace amend
